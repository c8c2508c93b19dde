#include "volseg/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace volseg::nn {

namespace {

struct Extent {
    int d, h, w;
};

// [lo, hi) of output positions whose input position pos + delta is in [0, n).
inline std::pair<int, int> valid_range(int n, int delta)
{
    return {std::max(0, -delta), std::min(n, n - delta)};
}

// out[oc] += Σ_ic Σ_taps w[oc][ic][tap] · in[ic] shifted by (tap − pad).
// When `flip` is set the shift is negated and the channel roles of the weight
// are swapped, which turns the same loop into the input-gradient pass.
void correlate(const float* in, int in_ch, const float* weight, const std::array<int, 3>& k,
               float* out, int out_ch, Extent e, bool flip)
{
    const int pd = k[0] / 2, ph = k[1] / 2, pw = k[2] / 2;
    const std::size_t plane = static_cast<std::size_t>(e.d) * e.h * e.w;
    const std::size_t taps = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    for (int oc = 0; oc < out_ch; ++oc) {
        float* o = out + static_cast<std::size_t>(oc) * plane;
        for (int z = 0; z < e.d; ++z)
            for (int y = 0; y < e.h; ++y) {
                float* orow = o + (static_cast<std::size_t>(z) * e.h + y) * e.w;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const float* src = in + static_cast<std::size_t>(ic) * plane;
                    const float* wk =
                        flip ? weight + (static_cast<std::size_t>(ic) * out_ch + oc) * taps
                             : weight + (static_cast<std::size_t>(oc) * in_ch + ic) * taps;
                    for (int a = 0; a < k[0]; ++a) {
                        const int dz = flip ? pd - a : a - pd;
                        const int sz = z + dz;
                        if (sz < 0 || sz >= e.d)
                            continue;
                        for (int b = 0; b < k[1]; ++b) {
                            const int dy = flip ? ph - b : b - ph;
                            const int sy = y + dy;
                            if (sy < 0 || sy >= e.h)
                                continue;
                            const float* irow = src + (static_cast<std::size_t>(sz) * e.h + sy) * e.w;
                            const float* wrow = wk + (static_cast<std::size_t>(a) * k[1] + b) * k[2];
                            for (int c = 0; c < k[2]; ++c) {
                                const int dx = flip ? pw - c : c - pw;
                                const float wv = wrow[c];
                                const auto [x0, x1] = valid_range(e.w, dx);
                                const float* ip = irow + dx;
#pragma omp simd
                                for (int x = x0; x < x1; ++x)
                                    orow[x] += wv * ip[x];
                            }
                        }
                    }
                }
            }
    }
}

// gw[oc][ic][tap] += Σ_voxels gout[oc] · in[ic] shifted by (tap − pad).
void weight_grad(const float* in, int in_ch, const float* gout, int out_ch,
                 const std::array<int, 3>& k, float* gw, Extent e)
{
    const int pd = k[0] / 2, ph = k[1] / 2, pw = k[2] / 2;
    const std::size_t plane = static_cast<std::size_t>(e.d) * e.h * e.w;
    for (int oc = 0; oc < out_ch; ++oc) {
        const float* g = gout + static_cast<std::size_t>(oc) * plane;
        for (int ic = 0; ic < in_ch; ++ic) {
            const float* src = in + static_cast<std::size_t>(ic) * plane;
            float* gk = gw + (static_cast<std::size_t>(oc) * in_ch + ic) * k[0] * k[1] * k[2];
            for (int a = 0; a < k[0]; ++a) {
                const auto [z0, z1] = valid_range(e.d, a - pd);
                for (int b = 0; b < k[1]; ++b) {
                    const auto [y0, y1] = valid_range(e.h, b - ph);
                    for (int c = 0; c < k[2]; ++c) {
                        const int dx = c - pw;
                        const auto [x0, x1] = valid_range(e.w, dx);
                        double total = 0.0;
                        for (int z = z0; z < z1; ++z)
                            for (int y = y0; y < y1; ++y) {
                                const float* grow = g + (static_cast<std::size_t>(z) * e.h + y) * e.w;
                                const float* irow =
                                    src + (static_cast<std::size_t>(z + a - pd) * e.h + (y + b - ph)) * e.w + dx;
                                float s = 0.0f;
#pragma omp simd reduction(+ : s)
                                for (int x = x0; x < x1; ++x)
                                    s += grow[x] * irow[x];
                                total += s;
                            }
                        gk[(static_cast<std::size_t>(a) * k[1] + b) * k[2] + c] +=
                            static_cast<float>(total);
                    }
                }
            }
        }
    }
}

void require(bool ok, const std::string& message)
{
    if (!ok)
        throw DomainError(message);
}

}  // namespace

Tensor conv3d(const Tensor& x, const ConvKernel& k)
{
    const Shape xs = x.shape();
    const Shape ws = k.weight.shape();
    require(xs.c == ws.c, "conv3d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                              std::to_string(ws.c));
    require(ws.d % 2 == 1 && ws.h % 2 == 1 && ws.w % 2 == 1, "conv3d: kernel sizes must be odd");
    require(k.bias.shape() == Shape{1, ws.n, 1, 1, 1}, "conv3d: bias must have shape (1,out,1,1,1)");

    const Shape os{xs.n, ws.n, xs.d, xs.h, xs.w};
    const Extent e{xs.d, xs.h, xs.w};
    const std::array<int, 3> ksize{ws.d, ws.h, ws.w};
    const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.spatial();
    const std::size_t out_stride = static_cast<std::size_t>(os.c) * os.spatial();

    std::vector<float> out(os.numel());
    const auto bias = k.bias.values();
    for (int n = 0; n < xs.n; ++n) {
        float* o = out.data() + n * out_stride;
        for (int oc = 0; oc < os.c; ++oc)
            std::fill_n(o + oc * os.spatial(), os.spatial(), bias[static_cast<std::size_t>(oc)]);
        correlate(x.values().data() + n * in_stride, xs.c, k.weight.values().data(), ksize, o, os.c,
                  e, false);
    }

    return Tensor::make_result(
        os, std::move(out), {&x, &k.weight, &k.bias},
        [xs, os, e, ksize, in_stride, out_stride](Tensor::Node& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            const float* gout = self.grad.data();
            for (int n = 0; n < xs.n; ++n) {
                const float* g = gout + n * out_stride;
                if (xn.requires_grad)
                    correlate(g, os.c, wn.values.data(), ksize,
                              xn.ensure_grad().data() + n * in_stride, xs.c, e, true);
                if (wn.requires_grad)
                    weight_grad(xn.values.data() + n * in_stride, xs.c, g, os.c, ksize,
                                wn.ensure_grad().data(), e);
                if (bn.requires_grad) {
                    auto& gb = bn.ensure_grad();
                    for (int oc = 0; oc < os.c; ++oc) {
                        double s = 0.0;
                        const float* p = g + oc * os.spatial();
                        for (std::size_t i = 0; i < os.spatial(); ++i)
                            s += p[i];
                        gb[static_cast<std::size_t>(oc)] += static_cast<float>(s);
                    }
                }
            }
        });
}

Tensor maxpool3d(const Tensor& x, std::array<int, 3> window)
{
    const Shape xs = x.shape();
    const auto [pd, ph, pw] = window;
    require(pd >= 1 && ph >= 1 && pw >= 1, "maxpool3d: window must be positive");
    require(xs.d % pd == 0 && xs.h % ph == 0 && xs.w % pw == 0,
            "maxpool3d: spatial dims " + xs.str() + " not divisible by the window");
    const Shape os{xs.n, xs.c, xs.d / pd, xs.h / ph, xs.w / pw};
    std::vector<float> out(os.numel());
    std::vector<std::size_t> argmax(os.numel());
    const auto in = x.values();

    std::size_t o = 0;
    for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * xs.spatial();
        for (int z = 0; z < os.d; ++z)
            for (int y = 0; y < os.h; ++y)
                for (int xo = 0; xo < os.w; ++xo, ++o) {
                    std::size_t best = base + (static_cast<std::size_t>(z * pd) * xs.h + y * ph) * xs.w +
                                       static_cast<std::size_t>(xo * pw);
                    float best_v = in[best];
                    for (int a = 0; a < pd; ++a)
                        for (int b = 0; b < ph; ++b)
                            for (int c = 0; c < pw; ++c) {
                                const std::size_t i =
                                    base + (static_cast<std::size_t>(z * pd + a) * xs.h + (y * ph + b)) * xs.w +
                                    static_cast<std::size_t>(xo * pw + c);
                                if (in[i] > best_v) {
                                    best_v = in[i];
                                    best = i;
                                }
                            }
                    out[o] = best_v;
                    argmax[o] = best;
                }
    }
    return Tensor::make_result(os, std::move(out), {&x},
                               [argmax = std::move(argmax)](Tensor::Node& self) {
                                   auto& gin = self.parents[0]->ensure_grad();
                                   for (std::size_t i = 0; i < argmax.size(); ++i)
                                       gin[argmax[i]] += self.grad[i];
                               });
}

Tensor upsample3d(const Tensor& x, std::array<int, 3> factor)
{
    const Shape xs = x.shape();
    const auto [fd, fh, fw] = factor;
    require(fd >= 1 && fh >= 1 && fw >= 1, "upsample3d: factors must be >= 1");
    const Shape os{xs.n, xs.c, xs.d * fd, xs.h * fh, xs.w * fw};
    std::vector<float> out(os.numel());
    const auto in = x.values();

    auto source = [xs, os, fd, fh, fw](std::size_t nc, int z, int y, int xo) {
        return nc * xs.spatial() +
               (static_cast<std::size_t>(z / fd) * xs.h + static_cast<std::size_t>(y / fh)) * xs.w +
               static_cast<std::size_t>(xo / fw);
    };
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc)
        for (int z = 0; z < os.d; ++z)
            for (int y = 0; y < os.h; ++y)
                for (int xo = 0; xo < os.w; ++xo, ++o)
                    out[o] = in[source(nc, z, y, xo)];

    return Tensor::make_result(os, std::move(out), {&x}, [xs, os, source](Tensor::Node& self) {
        auto& gin = self.parents[0]->ensure_grad();
        std::size_t o = 0;
        for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc)
            for (int z = 0; z < os.d; ++z)
                for (int y = 0; y < os.h; ++y)
                    for (int xo = 0; xo < os.w; ++xo, ++o)
                        gin[source(nc, z, y, xo)] += self.grad[o];
    });
}

Tensor relu(const Tensor& x)
{
    const auto in = x.values();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = in[i] < 0.0f ? 0.0f : in[i];  // NaN passes through
    return Tensor::make_result(x.shape(), std::move(out), {&x}, [](Tensor::Node& self) {
        auto& parent = *self.parents[0];
        auto& gin = parent.ensure_grad();
        for (std::size_t i = 0; i < gin.size(); ++i)
            if (parent.values[i] > 0.0f)
                gin[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& x)
{
    const auto in = x.values();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = 1.0f / (1.0f + std::exp(-in[i]));
    return Tensor::make_result(x.shape(), std::move(out), {&x}, [](Tensor::Node& self) {
        auto& gin = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gin.size(); ++i) {
            const float y = self.values[i];
            gin[i] += self.grad[i] * y * (1.0f - y);
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b)
{
    const Shape as = a.shape(), bs = b.shape();
    require(as.n == bs.n && as.d == bs.d && as.h == bs.h && as.w == bs.w,
            "concat_channels: shapes " + as.str() + " and " + bs.str() + " differ beyond channels");
    const Shape os{as.n, as.c + bs.c, as.d, as.h, as.w};
    const std::size_t na = static_cast<std::size_t>(as.c) * as.spatial();
    const std::size_t nb = static_cast<std::size_t>(bs.c) * bs.spatial();
    std::vector<float> out(os.numel());
    for (int n = 0; n < as.n; ++n) {
        std::copy_n(a.values().data() + n * na, na, out.data() + n * (na + nb));
        std::copy_n(b.values().data() + n * nb, nb, out.data() + n * (na + nb) + na);
    }
    return Tensor::make_result(os, std::move(out), {&a, &b}, [as, na, nb](Tensor::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (int n = 0; n < as.n; ++n) {
            const float* g = self.grad.data() + n * (na + nb);
            if (pa.requires_grad) {
                float* ga = pa.ensure_grad().data() + n * na;
                for (std::size_t i = 0; i < na; ++i)
                    ga[i] += g[i];
            }
            if (pb.requires_grad) {
                float* gb = pb.ensure_grad().data() + n * nb;
                for (std::size_t i = 0; i < nb; ++i)
                    gb[i] += g[na + i];
            }
        }
    });
}

Tensor slice_channels(const Tensor& x, int begin, int count)
{
    const Shape xs = x.shape();
    require(begin >= 0 && count >= 1 && begin + count <= xs.c, "slice_channels: range out of bounds");
    const Shape os{xs.n, count, xs.d, xs.h, xs.w};
    const std::size_t sp = xs.spatial();
    std::vector<float> out(os.numel());
    for (int n = 0; n < xs.n; ++n)
        std::copy_n(x.values().data() + (static_cast<std::size_t>(n) * xs.c + begin) * sp,
                    static_cast<std::size_t>(count) * sp,
                    out.data() + static_cast<std::size_t>(n) * count * sp);
    return Tensor::make_result(os, std::move(out), {&x}, [xs, begin, count, sp](Tensor::Node& self) {
        auto& gin = self.parents[0]->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
            float* dst = gin.data() + (static_cast<std::size_t>(n) * xs.c + begin) * sp;
            const float* src = self.grad.data() + static_cast<std::size_t>(n) * count * sp;
            for (std::size_t i = 0; i < static_cast<std::size_t>(count) * sp; ++i)
                dst[i] += src[i];
        }
    });
}

}  // namespace volseg::nn
