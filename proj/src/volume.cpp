#include "volseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <string>

#include <json.hpp>

namespace volseg {

namespace {

constexpr std::size_t kHeaderBlock = 128;
constexpr const char* kFormatName = "volseg-volume";

const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "u8"; }

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 1; }

std::string encode_header(const VolumeHeader& h)
{
    nlohmann::ordered_json j;
    j["format"] = kFormatName;
    j["version"] = 1;
    j["dims"] = {h.dims.depth, h.dims.height, h.dims.width};
    j["spacing"] = {h.spacing[0], h.spacing[1], h.spacing[2]};
    j["dtype"] = dtype_name(h.dtype);
    j["byte_order"] = "little";
    std::string text = j.dump();
    const std::size_t total = (text.size() + 1 + kHeaderBlock - 1) / kHeaderBlock * kHeaderBlock;
    text.resize(total - 1, ' ');
    text.push_back('\n');
    return text;
}

VolumeHeader parse_header(const std::string& text, const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormatName)
            throw FormatError(path.string() + ": not a volseg volume file");
        if (j.at("version").get<int>() != 1)
            throw FormatError(path.string() + ": unsupported version");
        if (j.value("byte_order", "little") != "little")
            throw FormatError(path.string() + ": only little-endian payloads are supported");
        const auto dims = j.at("dims").get<std::vector<long long>>();
        const auto spacing = j.at("spacing").get<std::vector<double>>();
        if (dims.size() != 3 || spacing.size() != 3)
            throw FormatError(path.string() + ": dims and spacing need 3 entries");
        VolumeHeader h;
        for (long long d : dims)
            if (d < 1 || d > (1LL << 30))
                throw FormatError(path.string() + ": dims must be >= 1");
        h.dims = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
        for (int i = 0; i < 3; ++i) {
            if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
                throw FormatError(path.string() + ": spacing must be finite and > 0");
            h.spacing[i] = spacing[i];
        }
        const auto dtype = j.at("dtype").get<std::string>();
        if (dtype == "f32")
            h.dtype = DType::f32;
        else if (dtype == "u8")
            h.dtype = DType::u8;
        else
            throw FormatError(path.string() + ": unknown dtype '" + dtype + "'");
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed header: " + e.what());
    }
}

struct RawFile {
    VolumeHeader header;
    std::vector<char> payload;
};

RawFile read_raw(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());

    std::string header;
    char block[kHeaderBlock];
    for (;;) {
        in.read(block, kHeaderBlock);
        if (in.gcount() != static_cast<std::streamsize>(kHeaderBlock))
            throw FormatError(path.string() + ": truncated header");
        header.append(block, kHeaderBlock);
        if (block[kHeaderBlock - 1] == '\n')
            break;
        if (header.size() > 64 * kHeaderBlock)
            throw FormatError(path.string() + ": header too long");
    }
    if (header.front() != '{')
        throw FormatError(path.string() + ": header must start with a JSON object");

    RawFile raw{parse_header(header, path), {}};
    const std::size_t expected = raw.header.dims.count() * dtype_size(raw.header.dtype);
    raw.payload.resize(expected);
    in.read(raw.payload.data(), static_cast<std::streamsize>(expected));
    if (static_cast<std::size_t>(in.gcount()) != expected)
        throw LengthError(path.string() + ": payload has " + std::to_string(in.gcount()) +
                          " bytes, expected " + std::to_string(expected));
    if (in.peek() != std::char_traits<char>::eof())
        throw LengthError(path.string() + ": trailing bytes after payload");
    return raw;
}

void write_raw(const VolumeHeader& h, const char* payload, std::size_t bytes,
               const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    const std::string header = encode_header(h);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload, static_cast<std::streamsize>(bytes));
    out.flush();
    if (!out)
        throw IoError("write failed: " + path.string());
}

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; add byte swapping for this target");

}  // namespace

std::size_t count_foreground(const Mask& m)
{
    return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

void check_binary(const Mask& m)
{
    for (std::uint8_t v : m.data())
        if (v > 1)
            throw DomainError("mask values must be 0 or 1");
}

VolumeHeader read_header(const std::filesystem::path& path) { return read_raw(path).header; }

Volume read_volume(const std::filesystem::path& path)
{
    RawFile raw = read_raw(path);
    if (raw.header.dtype != DType::f32)
        throw FormatError(path.string() + ": expected dtype f32");
    std::vector<float> data(raw.header.dims.count());
    std::memcpy(data.data(), raw.payload.data(), raw.payload.size());
    return Volume(raw.header.dims, raw.header.spacing, std::move(data));
}

Mask read_mask(const std::filesystem::path& path)
{
    RawFile raw = read_raw(path);
    if (raw.header.dtype != DType::u8)
        throw FormatError(path.string() + ": expected dtype u8");
    std::vector<std::uint8_t> data(raw.payload.begin(), raw.payload.end());
    Mask m(raw.header.dims, raw.header.spacing, std::move(data));
    for (std::uint8_t v : m.data())
        if (v > 1)
            throw FormatError(path.string() + ": mask values must be 0 or 1");
    return m;
}

void write_volume(const Volume& v, const std::filesystem::path& path)
{
    write_raw({v.dims(), v.spacing(), DType::f32}, reinterpret_cast<const char*>(v.data().data()),
              v.size() * sizeof(float), path);
}

void write_mask(const Mask& m, const std::filesystem::path& path)
{
    check_binary(m);
    write_raw({m.dims(), m.spacing(), DType::u8}, reinterpret_cast<const char*>(m.data().data()),
              m.size(), path);
}

std::vector<int> label_components(const Mask& m, int connectivity, int* num_labels)
{
    if (connectivity != 6 && connectivity != 26)
        throw DomainError("connectivity must be 6 or 26");
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (manhattan == 0 || (connectivity == 6 && manhattan > 1))
                    continue;
                offsets.push_back({dz, dy, dx});
            }

    const Dims& d = m.dims();
    std::vector<int> labels(m.size(), 0);
    std::deque<std::array<int, 3>> queue;
    int next = 0;
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                const std::size_t i = m.index(z, y, x);
                if (!m[i] || labels[i])
                    continue;
                labels[i] = ++next;
                queue.push_back({z, y, x});
                while (!queue.empty()) {
                    const auto [cz, cy, cx] = queue.front();
                    queue.pop_front();
                    for (const auto& o : offsets) {
                        const int nz = cz + o[0], ny = cy + o[1], nx = cx + o[2];
                        if (!m.contains(nz, ny, nx))
                            continue;
                        const std::size_t j = m.index(nz, ny, nx);
                        if (m[j] && !labels[j]) {
                            labels[j] = next;
                            queue.push_back({nz, ny, nx});
                        }
                    }
                }
            }
    if (num_labels)
        *num_labels = next;
    return labels;
}

namespace {

// Realized axial range: foreground range ± margin, grown to min_depth, clamped.
std::pair<int, int> axial_range(int lo, int hi, const CropSpec& spec, int depth)
{
    int z0 = lo - spec.margin;
    int z1 = hi + spec.margin + 1;  // exclusive
    const int want = std::min(spec.min_depth, depth);
    if (z1 - z0 < want) {
        const int grow = want - (z1 - z0);
        z0 -= grow / 2;
        z1 += grow - grow / 2;
    }
    if (z0 < 0) {
        if (z1 - z0 <= want)
            z1 += -z0;
        z0 = 0;
    }
    if (z1 > depth) {
        if (z1 - z0 <= want)
            z0 = std::max(0, z0 - (z1 - depth));
        z1 = depth;
    }
    return {z0, z1};
}

int window_start(double center, int size, int extent)
{
    const int start = static_cast<int>(std::lround(center - (size - 1) / 2.0));
    return std::clamp(start, 0, extent - size);
}

Crop crop_foreground(const Volume& ct, const Mask& lung, const Mask& component,
                     const CropSpec& spec)
{
    const Dims& d = ct.dims();
    if (spec.margin < 0)
        throw DomainError("crop margin must be >= 0");
    if (spec.in_plane[0] < 1 || spec.in_plane[1] < 1 || spec.in_plane[0] > d.height ||
        spec.in_plane[1] > d.width)
        throw DomainError("crop in-plane window " + std::to_string(spec.in_plane[0]) + "x" +
                          std::to_string(spec.in_plane[1]) + " does not fit volume " +
                          std::to_string(d.height) + "x" + std::to_string(d.width));

    double sy = 0.0, sx = 0.0;
    std::size_t n = 0;
    int lo = d.depth, hi = -1;
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x)
                if (component(z, y, x)) {
                    sy += y;
                    sx += x;
                    ++n;
                    lo = std::min(lo, z);
                    hi = std::max(hi, z);
                }
    if (n == 0)
        throw DomainError("lung mask is empty");

    Crop crop;
    crop.spec = spec;
    crop.spec.center = {sy / static_cast<double>(n), sx / static_cast<double>(n)};
    const auto [z0, z1] = axial_range(lo, hi, spec, d.depth);
    crop.spec.offset = {z0, window_start(crop.spec.center[0], spec.in_plane[0], d.height),
                        window_start(crop.spec.center[1], spec.in_plane[1], d.width)};
    crop.spec.extent = {z1 - z0, spec.in_plane[0], spec.in_plane[1]};
    crop.image = extract_box(ct, crop.spec.offset, crop.spec.extent);
    crop.lung = extract_box(lung, crop.spec.offset, crop.spec.extent);
    return crop;
}

}  // namespace

Crop crop_to_lung(const Volume& ct, const Mask& lung, const CropSpec& spec)
{
    require_same_dims(ct, lung, "crop_to_lung");
    return crop_foreground(ct, lung, lung, spec);
}

std::vector<Crop> crop_per_lung(const Volume& ct, const Mask& lung, const CropSpec& spec)
{
    require_same_dims(ct, lung, "crop_per_lung");
    int count = 0;
    const std::vector<int> labels = label_components(lung, 26, &count);
    if (count == 0)
        throw DomainError("lung mask is empty");
    std::vector<std::size_t> sizes(static_cast<std::size_t>(count) + 1, 0);
    for (int l : labels)
        ++sizes[static_cast<std::size_t>(l)];
    std::vector<int> order(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        order[static_cast<std::size_t>(i)] = i + 1;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
    });

    std::vector<Crop> crops;
    for (int label : order) {
        Mask component(lung.dims(), lung.spacing());
        for (std::size_t i = 0; i < labels.size(); ++i)
            component[i] = labels[i] == label ? 1 : 0;
        crops.push_back(crop_foreground(ct, lung, component, spec));
    }
    return crops;
}

}  // namespace volseg
