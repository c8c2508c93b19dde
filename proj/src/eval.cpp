#include "volseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace volseg {

double dice_coefficient(const Mask& pred, const Mask& truth, const Mask& exclude)
{
    require_same_dims(pred, truth, "dice_coefficient");
    require_same_dims(pred, exclude, "dice_coefficient");
    std::uint64_t np = 0, ng = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (exclude[i])
            continue;
        const bool p = pred[i] != 0, g = truth[i] != 0;
        np += p;
        ng += g;
        both += p && g;
    }
    if (np + ng == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

double dice_coefficient(const Mask& pred, const Mask& truth)
{
    return dice_coefficient(pred, truth, Mask(pred.dims(), pred.spacing()));
}

FrocCurve froc(const Volume& prob, const Mask& truth, const Mask& roi,
               std::span<const double> thresholds)
{
    require_same_dims(prob, truth, "froc");
    require_same_dims(prob, roi, "froc");
    if (thresholds.empty())
        throw DomainError("froc needs at least one threshold");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0))
            throw DomainError("froc thresholds must lie in (0, 1)");
        if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
            throw DomainError("froc thresholds must be strictly increasing");
    }
    const std::uint64_t n_truth = count_foreground(truth);
    if (n_truth == 0)
        throw DomainError("froc: ground truth is empty");

    // Bucket every ROI voxel by the number of thresholds it reaches, then
    // accumulate from the top so each threshold costs O(1).
    const std::size_t k = thresholds.size();
    std::vector<std::uint64_t> tp_at(k + 1, 0), fp_at(k + 1, 0);
    for (std::size_t i = 0; i < prob.size(); ++i) {
        if (!roi[i])
            continue;
        const double p = prob[i];
        const auto reached = static_cast<std::size_t>(
            std::upper_bound(thresholds.begin(), thresholds.end(), p) - thresholds.begin());
        (truth[i] ? tp_at : fp_at)[reached] += 1;
    }

    FrocCurve curve;
    curve.points.resize(k);
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t j = k; j-- > 0;) {
        tp += tp_at[j + 1];
        fp += fp_at[j + 1];
        FrocPoint& pt = curve.points[j];
        pt.threshold = thresholds[j];
        pt.tp = tp;
        pt.fp = fp;
        pt.fn = n_truth - tp;
        pt.sensitivity = static_cast<double>(tp) / static_cast<double>(n_truth);
        curve.fp_max = std::max(curve.fp_max, static_cast<double>(fp));
    }
    return curve;
}

std::vector<double> default_thresholds()
{
    std::vector<double> t;
    for (int i = 1; i <= 19; ++i)
        t.push_back(i / 20.0);
    return t;
}

const FrocPoint& optimal_point(const FrocCurve& c)
{
    if (c.points.empty())
        throw DomainError("optimal_threshold: empty curve");
    double fp_max = 0.0;
    for (const FrocPoint& p : c.points)
        fp_max = std::max(fp_max, static_cast<double>(p.fp));
    const FrocPoint* best = nullptr;
    double best_d = 0.0;
    for (const FrocPoint& p : c.points) {
        const double fx = fp_max > 0.0 ? static_cast<double>(p.fp) / fp_max : 0.0;
        const double d = fx * fx + (1.0 - p.sensitivity) * (1.0 - p.sensitivity);
        if (!best || d < best_d || (d == best_d && p.threshold < best->threshold)) {
            best = &p;
            best_d = d;
        }
    }
    return *best;
}

double optimal_threshold(const FrocCurve& c) { return optimal_point(c).threshold; }

Mask largest_component(const Mask& m, int connectivity)
{
    int count = 0;
    const std::vector<int> labels = label_components(m, connectivity, &count);
    Mask out(m.dims(), m.spacing());
    if (count == 0)
        return out;
    std::vector<std::size_t> sizes(static_cast<std::size_t>(count) + 1, 0);
    for (int l : labels)
        ++sizes[static_cast<std::size_t>(l)];
    int best = 1;
    for (int l = 2; l <= count; ++l)
        if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(best)])
            best = l;
    for (std::size_t i = 0; i < labels.size(); ++i)
        out[i] = labels[i] == best ? 1 : 0;
    return out;
}

Mask threshold_mask(const Volume& prob, const Mask& roi, double t)
{
    require_same_dims(prob, roi, "threshold_mask");
    Mask out(prob.dims(), prob.spacing());
    for (std::size_t i = 0; i < prob.size(); ++i)
        out[i] = roi[i] && prob[i] >= t ? 1 : 0;
    return out;
}

}  // namespace volseg
