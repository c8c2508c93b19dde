#include "volseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace volseg {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b)
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                r[i][j] += a[i][k] * b[k][j];
    return r;
}

// Rotation in (x, y, z) coordinates, R = Rz·Ry·Rx.
Mat3 rotation(const std::array<double, 3>& angles_deg_zyx)
{
    const double deg = std::numbers::pi / 180.0;
    const double az = angles_deg_zyx[0] * deg, ay = angles_deg_zyx[1] * deg,
                 ax = angles_deg_zyx[2] * deg;
    const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
    const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
    const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
    return multiply(rz, multiply(ry, rx));
}

// Zero outside the volume.
float trilinear(const Volume& v, double z, double y, double x)
{
    const Dims& d = v.dims();
    const int z0 = static_cast<int>(std::floor(z)), y0 = static_cast<int>(std::floor(y)),
              x0 = static_cast<int>(std::floor(x));
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    double acc = 0.0;
    for (int a = 0; a < 2; ++a) {
        const int zz = z0 + a;
        if (zz < 0 || zz >= d.depth)
            continue;
        const double wz = a ? fz : 1.0 - fz;
        for (int b = 0; b < 2; ++b) {
            const int yy = y0 + b;
            if (yy < 0 || yy >= d.height)
                continue;
            const double wy = b ? fy : 1.0 - fy;
            for (int c = 0; c < 2; ++c) {
                const int xx = x0 + c;
                if (xx < 0 || xx >= d.width)
                    continue;
                const double wx = c ? fx : 1.0 - fx;
                acc += wz * wy * wx * v(zz, yy, xx);
            }
        }
    }
    return static_cast<float>(acc);
}

std::uint8_t nearest(const Mask& m, double z, double y, double x)
{
    const int zi = static_cast<int>(std::lround(z)), yi = static_cast<int>(std::lround(y)),
              xi = static_cast<int>(std::lround(x));
    return m.contains(zi, yi, xi) ? m(zi, yi, xi) : 0;
}

std::array<double, 4> catmull_rom(double t)
{
    const double t2 = t * t, t3 = t2 * t;
    return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t),
            0.5 * (t3 - t2)};
}

void check_labels(const Volume& img, const std::vector<Mask>& labels, const char* what)
{
    for (const Mask& m : labels)
        require_same_dims(img, m, what);
}

}  // namespace

RigidParams sample_rigid(Rng& rng, double max_angle_deg)
{
    if (max_angle_deg < 0.0)
        throw DomainError("max rotation angle must be >= 0");
    RigidParams p;
    for (std::size_t a = 0; a < 3; ++a)
        p.flips[a] = rng.bernoulli(0.5);
    for (std::size_t a = 0; a < 3; ++a)
        p.angles_deg[a] = max_angle_deg > 0.0 ? rng.uniform(-max_angle_deg, max_angle_deg) : 0.0;
    return p;
}

Volume apply_rigid(const Volume& img, std::vector<Mask>& labels, const RigidParams& p)
{
    check_labels(img, labels, "apply_rigid");
    const Dims& d = img.dims();
    Volume out(d, img.spacing());
    std::vector<Mask> out_labels(labels.size(), Mask(d, img.spacing()));

    const bool rotate = p.angles_deg != std::array<double, 3>{0.0, 0.0, 0.0};
    if (!rotate) {
        // Pure flips permute voxels exactly.
        for (int z = 0; z < d.depth; ++z)
            for (int y = 0; y < d.height; ++y)
                for (int x = 0; x < d.width; ++x) {
                    const int sz = p.flips[0] ? d.depth - 1 - z : z;
                    const int sy = p.flips[1] ? d.height - 1 - y : y;
                    const int sx = p.flips[2] ? d.width - 1 - x : x;
                    out(z, y, x) = img(sz, sy, sx);
                    for (std::size_t k = 0; k < labels.size(); ++k)
                        out_labels[k](z, y, x) = labels[k](sz, sy, sx);
                }
        labels = std::move(out_labels);
        return out;
    }

    const Mat3 r = rotation(p.angles_deg);
    const double cz = (d.depth - 1) / 2.0, cy = (d.height - 1) / 2.0, cx = (d.width - 1) / 2.0;
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                // Undo the flip, then the rotation (Rᵀ), in (x, y, z) order.
                const double qx = p.flips[2] ? cx - x : x - cx;
                const double qy = p.flips[1] ? cy - y : y - cy;
                const double qz = p.flips[0] ? cz - z : z - cz;
                const double sx = r[0][0] * qx + r[1][0] * qy + r[2][0] * qz + cx;
                const double sy = r[0][1] * qx + r[1][1] * qy + r[2][1] * qz + cy;
                const double sz = r[0][2] * qx + r[1][2] * qy + r[2][2] * qz + cz;
                out(z, y, x) = trilinear(img, sz, sy, sx);
                for (std::size_t k = 0; k < labels.size(); ++k)
                    out_labels[k](z, y, x) = nearest(labels[k], sz, sy, sx);
            }
    labels = std::move(out_labels);
    return out;
}

std::pair<Volume, Mask> apply_rigid(const Volume& img, const Mask& lbl, const RigidParams& p)
{
    std::vector<Mask> labels{lbl};
    Volume out = apply_rigid(img, labels, p);
    return {std::move(out), std::move(labels.front())};
}

std::pair<double, double> ElasticField::node_position(int r, int c) const
{
    const double y = grid_rows > 1 ? r * (height - 1) / static_cast<double>(grid_rows - 1) : 0.0;
    const double x = grid_cols > 1 ? c * (width - 1) / static_cast<double>(grid_cols - 1) : 0.0;
    return {y, x};
}

void densify(ElasticField& f)
{
    if (f.height < 1 || f.width < 1 || f.grid_rows < 1 || f.grid_cols < 1)
        throw DomainError("elastic field needs positive extent and grid");
    const std::size_t nodes = static_cast<std::size_t>(f.grid_rows) * f.grid_cols;
    if (f.coarse_dx.size() != nodes || f.coarse_dy.size() != nodes)
        throw DomainError("elastic field coarse grid has the wrong size");

    auto node = [&](const std::vector<double>& g, int r, int c) {
        r = std::clamp(r, 0, f.grid_rows - 1);
        c = std::clamp(c, 0, f.grid_cols - 1);
        return g[static_cast<std::size_t>(r) * f.grid_cols + c];
    };
    const std::size_t n = static_cast<std::size_t>(f.height) * f.width;
    f.dense_dx.assign(n, 0.0f);
    f.dense_dy.assign(n, 0.0f);
    for (int y = 0; y < f.height; ++y) {
        const double gy =
            f.height > 1 ? y * (f.grid_rows - 1) / static_cast<double>(f.height - 1) : 0.0;
        int ry = std::min(static_cast<int>(std::floor(gy)), std::max(f.grid_rows - 2, 0));
        const auto wy = catmull_rom(gy - ry);
        for (int x = 0; x < f.width; ++x) {
            const double gx =
                f.width > 1 ? x * (f.grid_cols - 1) / static_cast<double>(f.width - 1) : 0.0;
            int cx = std::min(static_cast<int>(std::floor(gx)), std::max(f.grid_cols - 2, 0));
            const auto wx = catmull_rom(gx - cx);
            double dx = 0.0, dy = 0.0;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) {
                    const double w = wy[static_cast<std::size_t>(a)] * wx[static_cast<std::size_t>(b)];
                    dx += w * node(f.coarse_dx, ry - 1 + a, cx - 1 + b);
                    dy += w * node(f.coarse_dy, ry - 1 + a, cx - 1 + b);
                }
            const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
            f.dense_dx[i] = static_cast<float>(dx);
            f.dense_dy[i] = static_cast<float>(dy);
        }
    }
}

ElasticField sample_elastic(Rng& rng, double sigma, int height, int width, std::array<int, 2> grid)
{
    if (sigma < 0.0)
        throw DomainError("elastic sigma must be >= 0");
    ElasticField f;
    f.grid_rows = grid[0];
    f.grid_cols = grid[1];
    f.sigma = sigma;
    f.height = height;
    f.width = width;
    const std::size_t nodes = static_cast<std::size_t>(grid[0]) * grid[1];
    f.coarse_dx.resize(nodes);
    f.coarse_dy.resize(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        f.coarse_dx[i] = rng.normal(0.0, sigma);
        f.coarse_dy[i] = rng.normal(0.0, sigma);
    }
    densify(f);
    return f;
}

Volume apply_elastic(const Volume& img, std::vector<Mask>& labels, const ElasticField& f)
{
    check_labels(img, labels, "apply_elastic");
    const Dims& d = img.dims();
    if (f.height != d.height || f.width != d.width)
        throw DomainError("elastic field in-plane dims do not match the image");
    const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
    const float lo = *lo_it, hi = *hi_it;

    Volume out(d, img.spacing());
    std::vector<Mask> out_labels(labels.size(), Mask(d, img.spacing()));
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * d.width + x;
            const double sy = y + static_cast<double>(f.dense_dy[i]);
            const double sx = x + static_cast<double>(f.dense_dx[i]);
            const bool inside = sy >= 0.0 && sx >= 0.0 && sy <= d.height - 1 && sx <= d.width - 1;
            if (!inside)
                continue;  // out stays 0
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const auto wy = catmull_rom(sy - y0);
            const auto wx = catmull_rom(sx - x0);
            const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
            for (int z = 0; z < d.depth; ++z) {
                double acc = 0.0;
                for (int a = 0; a < 4; ++a) {
                    const int yy = std::clamp(y0 - 1 + a, 0, d.height - 1);
                    double row = 0.0;
                    for (int b = 0; b < 4; ++b) {
                        const int xx = std::clamp(x0 - 1 + b, 0, d.width - 1);
                        row += wx[static_cast<std::size_t>(b)] * img(z, yy, xx);
                    }
                    acc += wy[static_cast<std::size_t>(a)] * row;
                }
                out(z, y, x) = std::clamp(static_cast<float>(acc), lo, hi);
                for (std::size_t k = 0; k < labels.size(); ++k)
                    out_labels[k](z, y, x) = labels[k](z, ny, nx);
            }
        }
    labels = std::move(out_labels);
    return out;
}

std::pair<Volume, Mask> apply_elastic(const Volume& img, const Mask& lbl, const ElasticField& f)
{
    std::vector<Mask> labels{lbl};
    Volume out = apply_elastic(img, labels, f);
    return {std::move(out), std::move(labels.front())};
}

Volume augment(const Volume& img, std::vector<Mask>& labels, AugmentKind kind, Rng& rng,
               double max_angle_deg, double elastic_sigma)
{
    switch (kind) {
    case AugmentKind::rigid:
        return apply_rigid(img, labels, sample_rigid(rng, max_angle_deg));
    case AugmentKind::elastic:
        return apply_elastic(img, labels,
                             sample_elastic(rng, elastic_sigma, img.dims().height, img.dims().width));
    case AugmentKind::none:
        break;
    }
    check_labels(img, labels, "augment");
    return img;
}

}  // namespace volseg
