#include "volseg/nn/adam.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace volseg::nn {

void AdamState::init(std::span<const Tensor> params)
{
    step = 0;
    m.clear();
    v.clear();
    for (const Tensor& p : params) {
        m.emplace_back(p.numel(), 0.0f);
        v.emplace_back(p.numel(), 0.0f);
    }
}

void adam_step(std::span<Tensor> params, AdamState& state)
{
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw DomainError("adam_step: state has " + std::to_string(state.m.size()) +
                          " moment buffers for " + std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
            throw DomainError("adam_step: moment buffer " + std::to_string(i) +
                              " does not match its parameter");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const float b1 = static_cast<float>(state.beta1), b2 = static_cast<float>(state.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].values();
        const std::span<const float> grad = std::as_const(params[i]).grad();
        const bool has_grad = !grad.empty();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const float g = has_grad ? grad[j] : 0.0f;
            m[j] = b1 * m[j] + (1.0f - b1) * g;
            v[j] = b2 * v[j] + (1.0f - b2) * g * g;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            values[j] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace volseg::nn
