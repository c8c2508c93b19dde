#pragma once

#include <array>
#include <utility>
#include <vector>

#include "volseg/random.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// Random flips and small rotations, per axis in (z, y, x) order.
struct RigidParams {
    std::array<bool, 3> flips{false, false, false};
    std::array<double, 3> angles_deg{0.0, 0.0, 0.0};

    [[nodiscard]] bool is_identity() const
    {
        return flips == std::array<bool, 3>{false, false, false} &&
               angles_deg == std::array<double, 3>{0.0, 0.0, 0.0};
    }
};

/// In-plane displacement field. `coarse_dx`/`coarse_dy` are row-major
/// grid_rows × grid_cols node values; nodes are evenly spread over the
/// in-plane extent, corners included. `dense_*` holds the bicubic
/// interpolation at every in-plane voxel (row-major height × width).
struct ElasticField {
    int grid_rows = 3;
    int grid_cols = 3;
    double sigma = 25.0;
    int height = 0;
    int width = 0;
    std::vector<double> coarse_dx, coarse_dy;
    std::vector<float> dense_dx, dense_dy;

    /// In-plane position of node (r, c) as (y, x).
    [[nodiscard]] std::pair<double, double> node_position(int r, int c) const;
};

[[nodiscard]] RigidParams sample_rigid(Rng& rng, double max_angle_deg = 10.0);

/// Rotation about the volume centre (R = Rz·Ry·Rx, angle i turns the plane
/// orthogonal to axis i), then flips. Backward-mapped: image trilinear,
/// labels nearest-neighbour, samples outside the volume read 0.
/// Every mask in `labels` receives the same transform.
[[nodiscard]] Volume apply_rigid(const Volume& img, std::vector<Mask>& labels, const RigidParams& p);
[[nodiscard]] std::pair<Volume, Mask> apply_rigid(const Volume& img, const Mask& lbl,
                                                  const RigidParams& p);

[[nodiscard]] ElasticField sample_elastic(Rng& rng, double sigma, int height, int width,
                                          std::array<int, 2> grid = {3, 3});

/// Rebuilds the dense field from the coarse nodes (Catmull–Rom bicubic).
void densify(ElasticField& f);

/// output(z, y, x) = input(z, y + dy, x + dx) with the same in-plane field on
/// every slice. Image bicubic, clamped to the input's value range; labels
/// nearest-neighbour; samples outside the volume read 0.
[[nodiscard]] Volume apply_elastic(const Volume& img, std::vector<Mask>& labels,
                                   const ElasticField& f);
[[nodiscard]] std::pair<Volume, Mask> apply_elastic(const Volume& img, const Mask& lbl,
                                                    const ElasticField& f);

enum class AugmentKind { none, rigid, elastic };

/// Draws parameters from `rng` and applies them to the image and every mask.
[[nodiscard]] Volume augment(const Volume& img, std::vector<Mask>& labels, AugmentKind kind,
                             Rng& rng, double max_angle_deg, double elastic_sigma);

}  // namespace volseg
