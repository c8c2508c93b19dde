#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "volseg/trainer.hpp"

namespace volseg {

/// Everything a `train` / `replicate` run needs besides the global CLI flags.
struct RunConfig {
    TrainConfig train;
    std::vector<std::filesystem::path> train_scans;  // scan directories
    std::vector<std::filesystem::path> val_scans;
    std::vector<std::filesystem::path> test_scans;
    std::vector<std::uint64_t> seeds{0, 1, 2};  // replicate only
};

/// Config text: one `key = value` per line, `#` starts a comment, lists are
/// comma-separated. Unset keys keep the TrainConfig defaults. Relative scan paths
/// resolve against `base_dir`.
[[nodiscard]] RunConfig parse_config_text(std::string_view text,
                                          const std::filesystem::path& base_dir = {});
[[nodiscard]] RunConfig parse_config(const std::filesystem::path& path);

/// All accepted keys, in documentation order.
[[nodiscard]] const std::vector<std::string>& config_keys();

/// Closest key by edit distance (empty if nothing is reasonably close).
[[nodiscard]] std::string nearest_key(std::string_view key);

/// Round-trippable text form of a config.
[[nodiscard]] std::string format_config(const RunConfig& cfg);

[[nodiscard]] LossKind parse_loss(std::string_view s);
[[nodiscard]] AugmentKind parse_augment(std::string_view s);

/// image.vol, lung.vol, truth.vol and an optional exclude.vol.
[[nodiscard]] Scan load_scan(const std::filesystem::path& dir);
void save_scan(const Scan& scan, const std::filesystem::path& dir, bool overwrite);

}  // namespace volseg
