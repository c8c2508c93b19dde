#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg {

/// Voxel counts, depth (axial) outermost.
struct Dims {
    int depth = 1;
    int height = 1;
    int width = 1;

    [[nodiscard]] std::size_t count() const
    {
        return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    [[nodiscard]] bool valid() const { return depth >= 1 && height >= 1 && width >= 1; }
    bool operator==(const Dims&) const = default;
};

/// Millimetres per voxel along (depth, height, width).
using Spacing = std::array<double, 3>;

/// Dense row-major 3D grid with voxel spacing.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;

    explicit Grid(Dims dims, Spacing spacing = {1.0, 1.0, 1.0}, T fill = T{})
        : dims_(dims), spacing_(spacing)
    {
        if (!dims.valid())
            throw DomainError("grid dims must all be >= 1");
        for (double s : spacing)
            if (!(s > 0.0))
                throw DomainError("grid spacing must be > 0");
        data_.assign(dims.count(), fill);
    }

    Grid(Dims dims, Spacing spacing, std::vector<T> data) : Grid(dims, spacing)
    {
        if (data.size() != dims.count())
            throw LengthError("grid payload length does not match dims");
        data_ = std::move(data);
    }

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] const Spacing& spacing() const { return spacing_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] std::size_t index(int z, int y, int x) const
    {
        return (static_cast<std::size_t>(z) * dims_.height + static_cast<std::size_t>(y)) *
                   dims_.width +
               static_cast<std::size_t>(x);
    }
    [[nodiscard]] bool contains(int z, int y, int x) const
    {
        return z >= 0 && y >= 0 && x >= 0 && z < dims_.depth && y < dims_.height &&
               x < dims_.width;
    }

    T& operator()(int z, int y, int x) { return data_[index(z, y, x)]; }
    const T& operator()(int z, int y, int x) const { return data_[index(z, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] std::vector<T>& data() { return data_; }
    [[nodiscard]] const std::vector<T>& data() const { return data_; }

    bool operator==(const Grid&) const = default;

private:
    Dims dims_{};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<T> data_ = std::vector<T>(1, T{});
};

using Volume = Grid<float>;
using Mask = Grid<std::uint8_t>;

[[nodiscard]] std::size_t count_foreground(const Mask& m);

/// Throws DomainError if any voxel is outside {0,1}.
void check_binary(const Mask& m);

template <typename A, typename B>
void require_same_dims(const Grid<A>& a, const Grid<B>& b, const char* what)
{
    if (a.dims() != b.dims())
        throw DomainError(std::string(what) + ": dims mismatch");
}

// ---------------------------------------------------------------------------
// File format
//
// A volume file is a JSON header padded with spaces to a multiple of 128
// bytes, the last header byte being '\n', followed by the raw little-endian
// payload. Header keys: format ("volseg-volume"), version (1), dims
// [d,h,w], spacing [d,h,w], dtype ("f32" | "u8"), byte_order ("little").

enum class DType { f32, u8 };

struct VolumeHeader {
    Dims dims;
    Spacing spacing{1.0, 1.0, 1.0};
    DType dtype = DType::f32;
};

[[nodiscard]] VolumeHeader read_header(const std::filesystem::path& path);

[[nodiscard]] Volume read_volume(const std::filesystem::path& path);
[[nodiscard]] Mask read_mask(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);
void write_mask(const Mask& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Lung cropping

/// Fixed in-plane window around a lung. After cropping, `offset`/`extent`
/// hold the realized box in source coordinates so results can be re-embedded.
struct CropSpec {
    std::array<int, 2> in_plane{352, 240};  // (height, width)
    int margin = 30;                        // axial voxels added on each side
    int min_depth = 1;                      // axial extent grown to at least this
    std::array<double, 2> center{0.0, 0.0}; // (y, x), set from the lung centroid
    std::array<int, 3> offset{0, 0, 0};     // realized (z, y, x) start
    Dims extent{};                          // realized size

    bool operator==(const CropSpec&) const = default;
};

struct Crop {
    Volume image;
    Mask lung;
    CropSpec spec;
};

/// Crops around the foreground of `lung`: in-plane window of spec.in_plane
/// centred on the foreground centroid (shifted inside the volume), axial
/// range = foreground axial range ± margin, clamped to the volume.
[[nodiscard]] Crop crop_to_lung(const Volume& ct, const Mask& lung, const CropSpec& spec);

/// One crop per 26-connected lung component, largest component first.
/// Each crop's lung mask is the full lung mask restricted to the window.
[[nodiscard]] std::vector<Crop> crop_per_lung(const Volume& ct, const Mask& lung,
                                              const CropSpec& spec);

template <typename T>
[[nodiscard]] Grid<T> extract_box(const Grid<T>& src, const std::array<int, 3>& offset,
                                  const Dims& extent)
{
    Grid<T> out(extent, src.spacing());
    for (int z = 0; z < extent.depth; ++z)
        for (int y = 0; y < extent.height; ++y)
            for (int x = 0; x < extent.width; ++x)
                out(z, y, x) = src(z + offset[0], y + offset[1], x + offset[2]);
    return out;
}

template <typename T>
void embed_box(const Grid<T>& crop, const std::array<int, 3>& offset, Grid<T>& dst)
{
    const Dims& e = crop.dims();
    for (int z = 0; z < e.depth; ++z)
        for (int y = 0; y < e.height; ++y)
            for (int x = 0; x < e.width; ++x)
                dst(z + offset[0], y + offset[1], x + offset[2]) = crop(z, y, x);
}

/// 26-connected (or 6-connected) component labels, 0 = background, labels
/// numbered 1.. in raster order of each component's first voxel.
[[nodiscard]] std::vector<int> label_components(const Mask& m, int connectivity,
                                                int* num_labels = nullptr);

}  // namespace volseg
