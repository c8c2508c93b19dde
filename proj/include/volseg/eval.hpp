#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

/// 2|P∩G| / (|P| + |G|) over voxels where `exclude` is 0; 1 when both are
/// empty after exclusion.
[[nodiscard]] double dice_coefficient(const Mask& pred, const Mask& truth, const Mask& exclude);
[[nodiscard]] double dice_coefficient(const Mask& pred, const Mask& truth);

struct FrocPoint {
    double threshold = 0.0;
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    double sensitivity = 0.0;
};

/// Sensitivity and voxel false-positive count per threshold. Predictions are
/// {prob ≥ t} ∩ roi; sensitivity = |P∩G|/|G|, FP = |P∖G|.
struct FrocCurve {
    std::vector<FrocPoint> points;  // ascending thresholds
    double fp_max = 0.0;
};

[[nodiscard]] FrocCurve froc(const Volume& prob, const Mask& truth, const Mask& roi,
                             std::span<const double> thresholds);

/// 0.05, 0.10, …, 0.95 (0.5 included).
[[nodiscard]] std::vector<double> default_thresholds();

/// Point minimising (FP/FP_max)² + (1 − sensitivity)²; ties go to the lower threshold.
[[nodiscard]] const FrocPoint& optimal_point(const FrocCurve& c);
[[nodiscard]] double optimal_threshold(const FrocCurve& c);

/// Largest 6- or 26-connected component (ties → the one whose first voxel
/// comes first in raster order).
[[nodiscard]] Mask largest_component(const Mask& m, int connectivity = 26);

/// {prob ≥ t} ∩ roi.
[[nodiscard]] Mask threshold_mask(const Volume& prob, const Mask& roi, double t);

}  // namespace volseg
