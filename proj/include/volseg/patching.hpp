#pragma once

#include <array>
#include <span>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

/// Axial sliding-window layout. Windows span the full in-plane extent.
struct WindowPlan {
    Dims patch_shape{};
    std::vector<int> axial_offsets;
    double overlap_fraction = 0.0;

    [[nodiscard]] std::size_t size() const { return axial_offsets.size(); }
};

/// stride = max(1, round(depth·(1 − overlap))); the last window is moved
/// flush with the end of the axial extent and duplicates are dropped.
[[nodiscard]] WindowPlan plan_windows(int axial_extent, int patch_depth, double overlap_fraction);

/// Plan for a volume: patch in-plane dims are the volume's in-plane dims.
[[nodiscard]] WindowPlan plan_windows(const Dims& volume, int patch_depth, double overlap_fraction);

template <typename T>
[[nodiscard]] Grid<T> extract_patch(const Grid<T>& v, const WindowPlan& plan, std::size_t index)
{
    if (index >= plan.size())
        throw DomainError("window index out of range");
    const Dims& p = plan.patch_shape;
    if (p.height != v.dims().height || p.width != v.dims().width)
        throw DomainError("patch in-plane dims must match the volume");
    if (plan.axial_offsets[index] + p.depth > v.dims().depth)
        throw DomainError("window exceeds the volume's axial extent");
    return extract_box(v, {plan.axial_offsets[index], 0, 0}, p);
}

/// Border taper applied to a patch output before overlap averaging.
/// One 1D profile per axis; the 3D weight is their product.
struct TaperProfile {
    std::array<double, 3> x_l{};
    std::array<double, 3> x_r{};
    std::array<int, 3> x_m{};
    std::array<std::vector<float>, 3> axis_weights;  // f(x + 0.5) per voxel

    [[nodiscard]] float weight(int z, int y, int x) const
    {
        return axis_weights[0][static_cast<std::size_t>(z)] *
               axis_weights[1][static_cast<std::size_t>(y)] *
               axis_weights[2][static_cast<std::size_t>(x)];
    }
};

/// f(x) = (x/x_l)² below x_l, 1 on [x_l, x_r], ((x_m − x)/(x_m − x_r))² above x_r.
[[nodiscard]] double taper_value(double x, double x_l, double x_r, double x_m);

[[nodiscard]] TaperProfile taper_profile(const std::array<double, 3>& x_l,
                                         const std::array<double, 3>& x_r,
                                         const std::array<int, 3>& x_m);

/// Symmetric taper with interior [shrink, x_m − shrink]; shrink is capped at x_m/2.
[[nodiscard]] TaperProfile symmetric_taper(const Dims& patch, const std::array<int, 3>& shrink);

/// Weighted overlap average: out(v) = Σ w_i(v)·p_i(v) / Σ w_i(v).
[[nodiscard]] Volume reconstruct(std::span<const Volume> patch_outputs, const WindowPlan& plan,
                                 const TaperProfile& taper, const Dims& full_dims);

}  // namespace volseg
