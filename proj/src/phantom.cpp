#include "volseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "volseg/random.hpp"

namespace volseg {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 normalize(const Vec3& a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

double segment_distance_sq(const Vec3& p, const Segment& s)
{
    const Vec3 axis = sub(s.end, s.start);
    const double len2 = dot(axis, axis);
    double t = len2 > 0.0 ? dot(sub(p, s.start), axis) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 q = add(s.start, scale(axis, t));
    const Vec3 d = sub(p, q);
    return dot(d, d);
}

// Capsule plus digitised axis, so thin segments stay 26-connected.
void rasterize(const Segment& s, Mask& m)
{
    const Dims& d = m.dims();
    const double r = s.radius;
    std::array<int, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int>(std::floor(std::min(s.start[a], s.end[a]) - r));
        hi[a] = static_cast<int>(std::ceil(std::max(s.start[a], s.end[a]) + r));
    }
    lo[0] = std::max(lo[0], 0);
    lo[1] = std::max(lo[1], 0);
    lo[2] = std::max(lo[2], 0);
    hi[0] = std::min(hi[0], d.depth - 1);
    hi[1] = std::min(hi[1], d.height - 1);
    hi[2] = std::min(hi[2], d.width - 1);
    for (int z = lo[0]; z <= hi[0]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int x = lo[2]; x <= hi[2]; ++x)
                if (segment_distance_sq({double(z), double(y), double(x)}, s) <= r * r)
                    m(z, y, x) = 1;

    const Vec3 axis = sub(s.end, s.start);
    const double len = std::sqrt(dot(axis, axis));
    const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
    for (int i = 0; i <= steps; ++i) {
        const Vec3 p = add(s.start, scale(axis, static_cast<double>(i) / steps));
        const int z = static_cast<int>(std::lround(p[0])), y = static_cast<int>(std::lround(p[1])),
                  x = static_cast<int>(std::lround(p[2]));
        if (m.contains(z, y, x))
            m(z, y, x) = 1;
    }
}

struct Ellipsoid {
    Vec3 center;
    Vec3 semi;

    [[nodiscard]] bool contains(const Vec3& p) const
    {
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double t = (p[a] - center[a]) / semi[a];
            s += t * t;
        }
        return s <= 1.0;
    }
};

Ellipsoid lung_ellipsoid(const Dims& d)
{
    return {{(d.depth - 1) / 2.0, (d.height - 1) / 2.0, (d.width - 1) / 2.0},
            {d.depth / 2.0 - 1.0, d.height / 2.0 - 1.0, d.width / 2.0 - 1.0}};
}

void validate(const TreeSpec& s, const Dims& dims)
{
    if (s.depth < 1)
        throw DomainError("tree depth must be >= 1");
    if (!(s.radius_decay > 0.0 && s.radius_decay < 1.0))
        throw DomainError("radius_decay must be in (0, 1)");
    if (!(s.length_decay > 0.0))
        throw DomainError("length_decay must be > 0");
    if (!(s.root_length > 0.0))
        throw DomainError("root_length must be > 0");
    if (s.root_radius * std::pow(s.radius_decay, s.depth - 1) < 0.7)
        throw DomainError("the finest generation's radius falls below 0.7 voxel");
    if (s.noise_sd < 0.0)
        throw DomainError("noise_sd must be >= 0");
    if (dims.depth < 4 || dims.height < 4 || dims.width < 4)
        throw DomainError("phantom dims must all be >= 4");
}

}  // namespace

nlohmann::ordered_json to_json(const TreeSpec& s)
{
    return {{"depth", s.depth},
            {"root_radius", s.root_radius},
            {"radius_decay", s.radius_decay},
            {"root_length", s.root_length},
            {"length_decay", s.length_decay},
            {"branch_angle", s.branch_angle},
            {"angle_jitter", s.angle_jitter},
            {"length_jitter", s.length_jitter},
            {"contrast", s.contrast},
            {"noise_sd", s.noise_sd},
            {"seed", s.seed}};
}

TreeSpec tree_spec_from_json(const nlohmann::ordered_json& j)
{
    TreeSpec s;
    s.depth = j.value("depth", s.depth);
    s.root_radius = j.value("root_radius", s.root_radius);
    s.radius_decay = j.value("radius_decay", s.radius_decay);
    s.root_length = j.value("root_length", s.root_length);
    s.length_decay = j.value("length_decay", s.length_decay);
    s.branch_angle = j.value("branch_angle", s.branch_angle);
    s.angle_jitter = j.value("angle_jitter", s.angle_jitter);
    s.length_jitter = j.value("length_jitter", s.length_jitter);
    s.contrast = j.value("contrast", s.contrast);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.seed = j.value("seed", s.seed);
    return s;
}

std::vector<Segment> build_tree(const TreeSpec& spec, const Dims& dims)
{
    validate(spec, dims);
    Rng rng = Rng::stream(spec.seed, 1);
    const Ellipsoid lung = lung_ellipsoid(dims);
    const double deg = std::numbers::pi / 180.0;

    struct Pending {
        Vec3 start, dir;
        double length, radius;
        int generation;
    };
    std::vector<Pending> frontier{{{lung.center[0] - 0.8 * lung.semi[0], lung.center[1], lung.center[2]},
                                   {1.0, 0.0, 0.0},
                                   spec.root_length,
                                   spec.root_radius,
                                   0}};
    std::vector<Segment> segments;
    while (!frontier.empty()) {
        const Pending p = frontier.front();
        frontier.erase(frontier.begin());
        const Vec3 end = add(p.start, scale(p.dir, p.length));
        segments.push_back({p.start, end, p.radius, p.generation});
        if (p.generation + 1 >= spec.depth)
            continue;

        // Branch in a plane alternating between the x- and y-containing ones.
        const Vec3 ref = p.generation % 2 == 0 ? Vec3{0.0, 0.0, 1.0} : Vec3{0.0, 1.0, 0.0};
        Vec3 u = sub(ref, scale(p.dir, dot(ref, p.dir)));
        if (dot(u, u) < 1e-12)
            u = {0.0, 1.0, 0.0};
        u = normalize(u);
        for (int side : {-1, 1}) {
            const double angle =
                (spec.branch_angle + rng.uniform(-spec.angle_jitter, spec.angle_jitter)) * deg;
            const Vec3 dir =
                normalize(add(scale(p.dir, std::cos(angle)), scale(u, side * std::sin(angle))));
            const double length = p.length * spec.length_decay *
                                  (1.0 + rng.uniform(-spec.length_jitter, spec.length_jitter));
            frontier.push_back({end, dir, length, p.radius * spec.radius_decay, p.generation + 1});
        }
    }
    return segments;
}

Mask dilate(const Mask& m, int radius)
{
    const Dims& d = m.dims();
    Mask out(d, m.spacing());
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                if (!m(z, y, x))
                    continue;
                for (int dz = -radius; dz <= radius; ++dz)
                    for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx)
                            if (dz * dz + dy * dy + dx * dx <= radius * radius &&
                                out.contains(z + dz, y + dy, x + dx))
                                out(z + dz, y + dy, x + dx) = 1;
            }
    return out;
}

Phantom generate_phantom(const TreeSpec& spec, const Dims& dims)
{
    Phantom ph;
    ph.segments = build_tree(spec, dims);
    const Ellipsoid ellipsoid = lung_ellipsoid(dims);

    ph.lung = Mask(dims);
    for (int z = 0; z < dims.depth; ++z)
        for (int y = 0; y < dims.height; ++y)
            for (int x = 0; x < dims.width; ++x)
                ph.lung(z, y, x) = ellipsoid.contains({double(z), double(y), double(x)}) ? 1 : 0;

    for (const Segment& s : ph.segments)
        for (const Vec3& p : {s.start, s.end})
            for (int a = 0; a < 3; ++a) {
                const double extent = a == 0 ? dims.depth : a == 1 ? dims.height : dims.width;
                if (p[a] - s.radius < 0.0 || p[a] + s.radius > extent - 1)
                    throw DomainError("tree exceeds the phantom dims");
            }

    ph.truth = Mask(dims);
    Mask root(dims);
    for (const Segment& s : ph.segments) {
        rasterize(s, ph.truth);
        if (s.generation == 0)
            rasterize(s, root);
    }
    for (std::size_t i = 0; i < ph.truth.size(); ++i)
        if (ph.truth[i] && !ph.lung[i])
            throw DomainError("tree exceeds the lung ellipsoid; use larger dims or a smaller tree");
    ph.exclude = dilate(root, 2);

    ph.image = Volume(dims);
    Rng noise = Rng::stream(spec.seed, 2);
    for (std::size_t i = 0; i < ph.image.size(); ++i) {
        const double base = ph.truth[i] ? 1.0 - spec.contrast : 1.0;
        ph.image[i] = static_cast<float>(spec.noise_sd > 0.0 ? base + noise.normal(0.0, spec.noise_sd)
                                                             : base);
    }
    return ph;
}

}  // namespace volseg
