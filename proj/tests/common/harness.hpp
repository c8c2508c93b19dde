#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "volseg/nn/tensor.hpp"
#include "volseg/random.hpp"
#include "volseg/volume.hpp"

namespace harness {

using volseg::nn::Shape;
using volseg::nn::Tensor;

/// Scalar Σ r_i·y_i, so backward() seeds dy = r.
inline Tensor weighted_sum(const Tensor& y, const std::vector<double>& r)
{
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
        s += r[i] * y.values()[i];
    return Tensor::make_result(Shape{}, {static_cast<float>(s)}, {&y},
                               [r, yn = y.node()](Tensor::Node& out) {
                                   auto& g = yn->ensure_grad();
                                   for (std::size_t i = 0; i < r.size(); ++i)
                                       g[i] += static_cast<float>(r[i] * out.grad[0]);
                               });
}

inline std::vector<float> uniform_values(volseg::Rng& rng, std::size_t n, double lo, double hi)
{
    std::vector<float> v(n);
    for (float& e : v)
        e = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

inline std::vector<double> uniform_doubles(volseg::Rng& rng, std::size_t n, double lo, double hi)
{
    std::vector<double> v(n);
    for (double& e : v)
        e = rng.uniform(lo, hi);
    return v;
}

inline Tensor random_tensor(volseg::Rng& rng, Shape s, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true)
{
    return Tensor(s, uniform_values(rng, s.numel(), lo, hi), requires_grad);
}

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

inline void copy_into(Tensor& t, const std::vector<double>& v)
{
    for (std::size_t i = 0; i < v.size(); ++i)
        t.values()[i] = static_cast<float>(v[i]);
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("volseg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline volseg::Mask random_mask(volseg::Rng& rng, volseg::Dims d, double p)
{
    volseg::Mask m(d);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = rng.bernoulli(p) ? 1 : 0;
    return m;
}

inline volseg::Volume random_volume(volseg::Rng& rng, volseg::Dims d, double lo = 0.0, double hi = 1.0)
{
    volseg::Volume v(d);
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace harness
