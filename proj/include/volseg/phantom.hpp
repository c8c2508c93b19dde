#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "volseg/volume.hpp"

namespace volseg {

/// Branching-tube tree inside an ellipsoidal "lung".
struct TreeSpec {
    int depth = 3;               // generations, root included
    double root_radius = 2.0;    // voxels
    double radius_decay = 0.75;  // per generation
    double root_length = 10.0;   // voxels
    double length_decay = 0.8;   // per generation
    double branch_angle = 35.0;  // degrees from the parent axis
    double angle_jitter = 6.0;   // degrees, uniform ±
    double length_jitter = 0.1;  // fraction, uniform ±
    double contrast = 1.0;       // parenchyma − lumen intensity
    double noise_sd = 0.15;
    std::uint64_t seed = 1;

    bool operator==(const TreeSpec&) const = default;
};

[[nodiscard]] nlohmann::ordered_json to_json(const TreeSpec& s);
[[nodiscard]] TreeSpec tree_spec_from_json(const nlohmann::ordered_json& j);

struct Segment {
    std::array<double, 3> start;  // (z, y, x)
    std::array<double, 3> end;
    double radius;
    int generation;  // 0 = root
};

struct Phantom {
    Volume image;
    Mask lung;
    Mask truth;
    Mask exclude;
    std::vector<Segment> segments;
};

/// Tree segments only (no rasterisation); the root runs along +z from the
/// top of the lung.
[[nodiscard]] std::vector<Segment> build_tree(const TreeSpec& spec, const Dims& dims);

/// truth = union of capsules around each segment plus its digitised axis;
/// lung = ellipsoid inscribed in the volume (1-voxel margin);
/// image = 1 − contrast inside truth, 1 elsewhere, plus Gaussian noise;
/// exclude = root capsule dilated by a radius-2 ball.
/// Throws DomainError if the tree leaves the lung.
[[nodiscard]] Phantom generate_phantom(const TreeSpec& spec, const Dims& dims);

/// Ball dilation (offsets with |o|² ≤ r²).
[[nodiscard]] Mask dilate(const Mask& m, int radius);

}  // namespace volseg
