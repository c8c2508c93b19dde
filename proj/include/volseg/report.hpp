#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "volseg/eval.hpp"

namespace volseg {

/// Standalone SVG of sensitivity against false positives. The 0.5 threshold
/// gets a circle marker and the optimal point a triangle; both carry
/// data-threshold/data-fp/data-sensitivity attributes.
[[nodiscard]] std::string froc_svg(const FrocCurve& c, const std::string& title = "FROC");
void emit_froc_svg(const FrocCurve& c, const std::filesystem::path& path, bool overwrite,
                   const std::string& title = "FROC");

/// Writes `text`, refusing to replace an existing file unless `overwrite`.
void write_text_file(const std::filesystem::path& path, const std::string& text, bool overwrite);

/// Lower-case hex SHA-256 of a file's bytes.
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);
[[nodiscard]] std::string sha256_hex(std::string_view bytes);

/// UTC, ISO 8601 with seconds.
[[nodiscard]] std::string utc_timestamp();

struct InputDigest {
    std::string path;
    std::string sha256;
};

/// Enough to rerun a command: inputs by digest, config snapshot, seed.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::string config;  // config text snapshot
    std::uint64_t seed = 0;
    std::string code_version;
    std::vector<InputDigest> inputs;
    std::string started;
    std::string finished;  // empty while running
};

/// Digests every regular file under each path (directories recursively,
/// in sorted order).
[[nodiscard]] std::vector<InputDigest> digest_inputs(const std::vector<std::filesystem::path>& paths);

[[nodiscard]] nlohmann::ordered_json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

[[nodiscard]] const char* code_version();

}  // namespace volseg
