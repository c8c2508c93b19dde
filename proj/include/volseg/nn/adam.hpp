#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "volseg/nn/tensor.hpp"

namespace volseg::nn {

struct AdamState {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<float>> m;  // one buffer per parameter
    std::vector<std::vector<float>> v;

    /// Zeroed moments shaped like `params`.
    void init(std::span<const Tensor> params);
};

/// One bias-corrected Adam update using each parameter's gradient (missing
/// gradients count as zero). Increments `state.step`.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace volseg::nn
