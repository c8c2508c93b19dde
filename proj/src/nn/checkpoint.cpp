#include "volseg/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "volseg/errors.hpp"

namespace volseg::nn {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

std::size_t product(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int s : shape) {
        if (s < 0)
            throw FormatError("checkpoint array has a negative dimension");
        n *= static_cast<std::size_t>(s);
    }
    return n;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const
{
    for (const auto& a : arrays)
        if (a.name == name)
            return &a;
    return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    nlohmann::ordered_json manifest;
    manifest["format"] = "volseg-checkpoint";
    manifest["version"] = 1;
    manifest["metadata"] = ckpt.metadata;
    auto& entries = manifest["arrays"] = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& a : ckpt.arrays) {
        if (product(a.shape) != a.data.size())
            throw DomainError("checkpoint array '" + a.name + "' does not match its shape");
        entries.push_back({{"name", a.name},
                           {"shape", a.shape},
                           {"dtype", "f32"},
                           {"offset", offset},
                           {"count", a.data.size()}});
        offset += a.data.size();
    }
    const std::string text = manifest.dump();
    const std::uint64_t length = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i)
        len_bytes[i] = static_cast<unsigned char>(length >> (8 * i));
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ckpt.arrays)
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    out.flush();
    if (!out)
        throw IoError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    char magic[8];
    unsigned char len_bytes[8];
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(len_bytes), 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError(path.string() + ": not a volseg checkpoint");
    std::uint64_t length = 0;
    for (int i = 0; i < 8; ++i)
        length |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
    if (length > (std::uint64_t{1} << 30))
        throw FormatError(path.string() + ": manifest too large");
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (static_cast<std::uint64_t>(in.gcount()) != length)
        throw LengthError(path.string() + ": truncated manifest");

    Checkpoint ckpt;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    try {
        const auto manifest = nlohmann::ordered_json::parse(text);
        if (manifest.at("format") != "volseg-checkpoint" || manifest.at("version") != 1)
            throw FormatError(path.string() + ": unsupported checkpoint format");
        ckpt.metadata = manifest.at("metadata");
        for (const auto& e : manifest.at("arrays")) {
            if (e.at("dtype") != "f32")
                throw FormatError(path.string() + ": unsupported dtype");
            NamedArray a;
            a.name = e.at("name").get<std::string>();
            a.shape = e.at("shape").get<std::vector<int>>();
            const auto count = e.at("count").get<std::size_t>();
            if (count != product(a.shape))
                throw FormatError(path.string() + ": array '" + a.name + "' count/shape mismatch");
            spans.emplace_back(e.at("offset").get<std::size_t>(), count);
            ckpt.arrays.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed manifest: " + e.what());
    }

    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
        const auto [offset, count] = spans[i];
        if (offset != expected_offset)
            throw FormatError(path.string() + ": arrays must be stored contiguously in order");
        auto& data = ckpt.arrays[i].data;
        data.resize(count);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
            throw LengthError(path.string() + ": truncated payload for '" + ckpt.arrays[i].name + "'");
        expected_offset += count;
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw LengthError(path.string() + ": trailing bytes after payload");
    return ckpt;
}

}  // namespace volseg::nn
