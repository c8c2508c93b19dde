#pragma once

// Independent reference implementations used as test oracles. Everything
// here is written from the definitions, in double precision and with plain
// loops, and shares no code with the library beyond its data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "volseg/eval.hpp"
#include "volseg/nn/tensor.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Dense 5D array in double

struct Arr {
    int n = 1, c = 1, d = 1, h = 1, w = 1;
    std::vector<double> v;

    Arr() = default;
    Arr(int n_, int c_, int d_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), d(d_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * d_ * h_ * w_, fill)
    {
    }

    double& at(int in, int ic, int z, int y, int x)
    {
        return v[(((static_cast<std::size_t>(in) * c + ic) * d + z) * h + y) * w + x];
    }
    double at(int in, int ic, int z, int y, int x) const
    {
        return v[(((static_cast<std::size_t>(in) * c + ic) * d + z) * h + y) * w + x];
    }
};

inline Arr from_tensor(const volseg::nn::Tensor& t)
{
    const auto& s = t.shape();
    Arr a(s.n, s.c, s.d, s.h, s.w);
    for (std::size_t i = 0; i < a.v.size(); ++i)
        a.v[i] = t.values()[i];
    return a;
}

/// Same-padded cross-correlation; weight (out, in, kd, kh, kw), bias per out.
inline Arr conv3d(const Arr& x, const Arr& wt, const std::vector<double>& bias)
{
    Arr y(x.n, wt.n, x.d, x.h, x.w);
    const int pd = wt.d / 2, ph = wt.h / 2, pw = wt.w / 2;
    for (int b = 0; b < x.n; ++b)
        for (int o = 0; o < wt.n; ++o)
            for (int z = 0; z < x.d; ++z)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        double s = bias[static_cast<std::size_t>(o)];
                        for (int i = 0; i < x.c; ++i)
                            for (int a = 0; a < wt.d; ++a)
                                for (int bq = 0; bq < wt.h; ++bq)
                                    for (int cq = 0; cq < wt.w; ++cq) {
                                        const int sz = z + a - pd, sy = yy + bq - ph, sx = xx + cq - pw;
                                        if (sz < 0 || sy < 0 || sx < 0 || sz >= x.d || sy >= x.h ||
                                            sx >= x.w)
                                            continue;
                                        s += wt.at(o, i, a, bq, cq) * x.at(b, i, sz, sy, sx);
                                    }
                        y.at(b, o, z, yy, xx) = s;
                    }
    return y;
}

inline Arr maxpool(const Arr& x, std::array<int, 3> p)
{
    Arr y(x.n, x.c, x.d / p[0], x.h / p[1], x.w / p[2]);
    for (int b = 0; b < y.n; ++b)
        for (int c = 0; c < y.c; ++c)
            for (int z = 0; z < y.d; ++z)
                for (int yy = 0; yy < y.h; ++yy)
                    for (int xx = 0; xx < y.w; ++xx) {
                        double m = -INFINITY;
                        for (int a = 0; a < p[0]; ++a)
                            for (int bq = 0; bq < p[1]; ++bq)
                                for (int cq = 0; cq < p[2]; ++cq)
                                    m = std::max(m, x.at(b, c, z * p[0] + a, yy * p[1] + bq, xx * p[2] + cq));
                        y.at(b, c, z, yy, xx) = m;
                    }
    return y;
}

inline Arr upsample(const Arr& x, std::array<int, 3> f)
{
    Arr y(x.n, x.c, x.d * f[0], x.h * f[1], x.w * f[2]);
    for (int b = 0; b < y.n; ++b)
        for (int c = 0; c < y.c; ++c)
            for (int z = 0; z < y.d; ++z)
                for (int yy = 0; yy < y.h; ++yy)
                    for (int xx = 0; xx < y.w; ++xx)
                        y.at(b, c, z, yy, xx) = x.at(b, c, z / f[0], yy / f[1], xx / f[2]);
    return y;
}

inline Arr relu(Arr x)
{
    for (double& e : x.v)
        e = e > 0.0 ? e : 0.0;
    return x;
}

inline Arr sigmoid(Arr x)
{
    for (double& e : x.v)
        e = 1.0 / (1.0 + std::exp(-e));
    return x;
}

inline Arr concat(const Arr& a, const Arr& b)
{
    Arr y(a.n, a.c + b.c, a.d, a.h, a.w);
    for (int n = 0; n < a.n; ++n)
        for (int c = 0; c < y.c; ++c)
            for (int z = 0; z < a.d; ++z)
                for (int yy = 0; yy < a.h; ++yy)
                    for (int xx = 0; xx < a.w; ++xx)
                        y.at(n, c, z, yy, xx) = c < a.c ? a.at(n, c, z, yy, xx) : b.at(n, c - a.c, z, yy, xx);
    return y;
}

// ---------------------------------------------------------------------------
// Losses, straight from the formulas

inline double wbce(std::span<const double> p, std::span<const double> g, std::span<const double> roi)
{
    double nl = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (roi[i] != 0.0) {
            ++nl;
            (g[i] != 0.0 ? na : nb) += 1;
        }
    const double wa = na == 0 ? 0.0 : (nb == 0 ? 1.0 : nb / na);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (roi[i] == 0.0)
            continue;
        const double q = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
        s += g[i] != 0.0 ? wa * std::log(q) : std::log(1.0 - q);
    }
    return -s / nl;
}

inline double dice_loss(std::span<const double> p, std::span<const double> g,
                        std::span<const double> roi, double eps)
{
    double inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (roi[i] != 0.0) {
            const double gi = g[i] != 0.0 ? 1.0 : 0.0;
            inter += p[i] * gi;
            sp += p[i];
            sg += gi;
        }
    return 1.0 - 2.0 * inter / (sp + sg + eps);
}

// ---------------------------------------------------------------------------
// U-Net forward assembled from the reference ops, reading the model's weights

inline Arr weight_of(const volseg::nn::ConvKernel& k) { return from_tensor(k.weight); }
inline std::vector<double> bias_of(const volseg::nn::ConvKernel& k)
{
    return {k.bias.values().begin(), k.bias.values().end()};
}

inline Arr unet_forward(const volseg::Unet& m, const Arr& x)
{
    const auto& cfg = m.config();
    const auto& layers = m.layers();
    auto layer = [&](const std::string& name) -> const volseg::nn::ConvKernel& {
        for (const auto& l : layers)
            if (l.name == name)
                return l.kernel;
        throw std::runtime_error("no layer " + name);
    };
    auto conv = [&](const Arr& in, const std::string& name) {
        const auto& k = layer(name);
        return conv3d(in, weight_of(k), bias_of(k));
    };
    std::vector<Arr> skips;
    Arr h = x;
    for (int l = 0; l < cfg.levels; ++l) {
        if (l > 0)
            h = maxpool(h, m.pool_factor(l - 1));
        for (int i = 0; i < cfg.convs_down_per_level; ++i)
            h = relu(conv(h, "enc" + std::to_string(l) + ".conv" + std::to_string(i)));
        if (l < cfg.levels - 1)
            skips.push_back(h);
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        h = concat(skips[static_cast<std::size_t>(l)], upsample(h, m.pool_factor(l)));
        for (int i = 0; i < cfg.convs_up_per_level; ++i)
            h = relu(conv(h, "dec" + std::to_string(l) + ".conv" + std::to_string(i)));
    }
    return sigmoid(conv(h, "head"));
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences of f at x for the listed coordinates (all if empty).
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h,
                                            const std::vector<std::size_t>& coords = {})
{
    std::vector<double> g(x.size(), 0.0);
    auto one = [&](std::size_t i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    };
    if (coords.empty())
        for (std::size_t i = 0; i < x.size(); ++i)
            one(i);
    else
        for (std::size_t i : coords)
            one(i);
    return g;
}

/// Largest per-entry relative error |a − n| / max(|a|, |n|, floor) over `coords`
/// (all entries if empty).
inline double max_rel_error(std::span<const float> analytic, const std::vector<double>& numeric,
                            double floor, const std::vector<std::size_t>& coords = {})
{
    double worst = 0.0;
    auto one = [&](std::size_t i) {
        const double a = analytic[i], n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    };
    if (coords.empty())
        for (std::size_t i = 0; i < numeric.size(); ++i)
            one(i);
    else
        for (std::size_t i : coords)
            one(i);
    return worst;
}

// ---------------------------------------------------------------------------
// Connected components by breadth-first flood fill

inline std::vector<int> bfs_labels(const volseg::Mask& m, int connectivity, int* count = nullptr)
{
    const auto& d = m.dims();
    std::vector<int> label(m.size(), 0);
    int next = 0;
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                if (!m(z, y, x) || label[m.index(z, y, x)])
                    continue;
                ++next;
                std::deque<std::array<int, 3>> q{{z, y, x}};
                label[m.index(z, y, x)] = next;
                while (!q.empty()) {
                    const auto [cz, cy, cx] = q.front();
                    q.pop_front();
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
                                if (manhattan == 0 || (connectivity == 6 && manhattan > 1))
                                    continue;
                                const int nz = cz + dz, ny = cy + dy, nx = cx + dx;
                                if (!m.contains(nz, ny, nx) || !m(nz, ny, nx))
                                    continue;
                                int& l = label[m.index(nz, ny, nx)];
                                if (!l) {
                                    l = next;
                                    q.push_back({nz, ny, nx});
                                }
                            }
                }
            }
    if (count)
        *count = next;
    return label;
}

// ---------------------------------------------------------------------------
// FROC by counting every voxel at every threshold

struct NaivePoint {
    std::uint64_t tp = 0, fp = 0, fn = 0;
};

inline std::vector<NaivePoint> naive_froc(const volseg::Volume& prob, const volseg::Mask& truth,
                                          const volseg::Mask& roi, const std::vector<double>& thresholds)
{
    std::vector<NaivePoint> out;
    for (double t : thresholds) {
        NaivePoint p;
        for (std::size_t i = 0; i < prob.size(); ++i) {
            const bool pred = roi[i] && prob[i] >= t;
            if (pred && truth[i])
                ++p.tp;
            else if (pred)
                ++p.fp;
            else if (truth[i])
                ++p.fn;
        }
        out.push_back(p);
    }
    return out;
}

/// Brute-force corner distance minimisation; ties keep the earliest point.
inline double exhaustive_optimal_threshold(const volseg::FrocCurve& c)
{
    double fp_max = 0.0;
    for (const auto& p : c.points)
        fp_max = std::max(fp_max, static_cast<double>(p.fp));
    double best_t = 0.0, best = INFINITY;
    for (const auto& p : c.points) {
        const double fx = fp_max > 0.0 ? p.fp / fp_max : 0.0;
        const double d = fx * fx + (1.0 - p.sensitivity) * (1.0 - p.sensitivity);
        if (d < best) {
            best = d;
            best_t = p.threshold;
        }
    }
    return best_t;
}

// ---------------------------------------------------------------------------
// Border taper, written out

inline double taper(double x, double xl, double xr, double xm)
{
    if (x < xl)
        return (x / xl) * (x / xl);
    if (x <= xr)
        return 1.0;
    return ((xm - x) / (xm - xr)) * ((xm - x) / (xm - xr));
}

}  // namespace oracle
