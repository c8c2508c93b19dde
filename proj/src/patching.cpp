#include "volseg/patching.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace volseg {

WindowPlan plan_windows(int axial_extent, int patch_depth, double overlap_fraction)
{
    if (patch_depth < 1)
        throw DomainError("patch depth must be >= 1");
    if (patch_depth > axial_extent)
        throw DomainError("patch depth " + std::to_string(patch_depth) +
                          " exceeds axial extent " + std::to_string(axial_extent));
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
        throw DomainError("overlap fraction must be in [0, 1)");

    const int stride =
        std::max(1, static_cast<int>(std::lround(patch_depth * (1.0 - overlap_fraction))));
    const int last = axial_extent - patch_depth;
    WindowPlan plan;
    plan.overlap_fraction = overlap_fraction;
    plan.patch_shape = {patch_depth, 1, 1};
    for (int offset = 0; offset < last; offset += stride)
        plan.axial_offsets.push_back(offset);
    plan.axial_offsets.push_back(last);
    return plan;
}

WindowPlan plan_windows(const Dims& volume, int patch_depth, double overlap_fraction)
{
    WindowPlan plan = plan_windows(volume.depth, patch_depth, overlap_fraction);
    plan.patch_shape = {patch_depth, volume.height, volume.width};
    return plan;
}

double taper_value(double x, double x_l, double x_r, double x_m)
{
    if (x < x_l)
        return (x / x_l) * (x / x_l);
    if (x <= x_r)
        return 1.0;
    const double t = (x_m - x) / (x_m - x_r);
    return t * t;
}

TaperProfile taper_profile(const std::array<double, 3>& x_l, const std::array<double, 3>& x_r,
                           const std::array<int, 3>& x_m)
{
    TaperProfile taper;
    for (std::size_t a = 0; a < 3; ++a) {
        if (!(0.0 <= x_l[a] && x_l[a] <= x_r[a] && x_r[a] <= x_m[a]) || x_m[a] < 1)
            throw DomainError("taper bounds must satisfy 0 <= x_l <= x_r <= x_m on axis " +
                              std::to_string(a));
        taper.x_l[a] = x_l[a];
        taper.x_r[a] = x_r[a];
        taper.x_m[a] = x_m[a];
        auto& w = taper.axis_weights[a];
        w.resize(static_cast<std::size_t>(x_m[a]));
        for (int i = 0; i < x_m[a]; ++i)
            w[static_cast<std::size_t>(i)] =
                static_cast<float>(taper_value(i + 0.5, x_l[a], x_r[a], x_m[a]));
    }
    return taper;
}

TaperProfile symmetric_taper(const Dims& patch, const std::array<int, 3>& shrink)
{
    const std::array<int, 3> extent{patch.depth, patch.height, patch.width};
    std::array<double, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double s = std::clamp(static_cast<double>(shrink[a]), 0.0, extent[a] / 2.0);
        lo[a] = s;
        hi[a] = extent[a] - s;
    }
    return taper_profile(lo, hi, extent);
}

Volume reconstruct(std::span<const Volume> patch_outputs, const WindowPlan& plan,
                   const TaperProfile& taper, const Dims& full_dims)
{
    if (patch_outputs.size() != plan.size())
        throw DomainError("reconstruct: got " + std::to_string(patch_outputs.size()) +
                          " patch outputs for " + std::to_string(plan.size()) + " windows");
    const Dims& p = plan.patch_shape;
    if (p.height != full_dims.height || p.width != full_dims.width)
        throw DomainError("reconstruct: patch in-plane dims must match the output");
    if (taper.x_m != std::array<int, 3>{p.depth, p.height, p.width})
        throw DomainError("reconstruct: taper extent does not match the patch shape");

    std::vector<double> num(full_dims.count(), 0.0);
    std::vector<double> den(full_dims.count(), 0.0);
    Volume out(full_dims, patch_outputs.empty() ? Spacing{1, 1, 1} : patch_outputs[0].spacing());
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const Volume& patch = patch_outputs[i];
        if (patch.dims() != p)
            throw DomainError("reconstruct: patch " + std::to_string(i) + " has the wrong shape");
        const int z0 = plan.axial_offsets[i];
        if (z0 < 0 || z0 + p.depth > full_dims.depth)
            throw DomainError("reconstruct: window exceeds the output volume");
        for (int z = 0; z < p.depth; ++z)
            for (int y = 0; y < p.height; ++y)
                for (int x = 0; x < p.width; ++x) {
                    const double w = taper.weight(z, y, x);
                    const std::size_t j = out.index(z0 + z, y, x);
                    num[j] += w * patch(z, y, x);
                    den[j] += w;
                }
    }
    for (std::size_t j = 0; j < num.size(); ++j)
        out[j] = den[j] > 0.0 ? static_cast<float>(num[j] / den[j]) : 0.0f;
    return out;
}

}  // namespace volseg
