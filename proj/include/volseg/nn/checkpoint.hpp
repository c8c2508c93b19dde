#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace volseg::nn {

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    bool operator==(const NamedArray&) const = default;
};

/// Named float arrays plus free-form JSON metadata.
///
/// On disk: the 8 bytes "VSEGCKPT", a little-endian u64 manifest length, the
/// JSON manifest (format, version, metadata, and per array: name, shape,
/// dtype "f32", offset and count in floats), then the concatenated payloads.
struct Checkpoint {
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
    std::vector<NamedArray> arrays;

    [[nodiscard]] const NamedArray* find(const std::string& name) const;
    bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
[[nodiscard]] Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace volseg::nn
