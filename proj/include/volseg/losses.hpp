#pragma once

#include <span>
#include <string_view>

#include "volseg/nn/tensor.hpp"

namespace volseg {

/// Probabilities with their ground truth and lung ROI, all the same shape.
/// `truth` and `roi` are read as binary (non-zero = 1) and are not differentiated.
struct LossBatch {
    nn::Tensor prob;
    nn::Tensor truth;
    nn::Tensor roi;
    double epsilon = 1e-7;
};

struct ClassWeights {
    double background = 1.0;  // w_B
    double airway = 0.0;      // w_A
    std::size_t n_background = 0;
    std::size_t n_airway = 0;
};

/// w_B = 1, w_A = |N_B|/|N_A|; |N_A| = 0 gives w_A = 0, |N_B| = 0 gives w_A = 1.
[[nodiscard]] ClassWeights class_weights(const LossBatch& b);

constexpr double kProbClamp = 1e-7;

/// −[w_B Σ_{N_B} log(1 − p) + w_A Σ_{N_A} log p] / |N_L|, p clamped to [1e−7, 1 − 1e−7].
[[nodiscard]] nn::Tensor wbce_loss(const LossBatch& b);

/// 2 Σ_{N_L} p·g / (Σ_{N_L} p + Σ_{N_L} g + ε).
[[nodiscard]] double dice_coefficient(const LossBatch& b);

/// 1 − dice_coefficient(b).
[[nodiscard]] nn::Tensor dice_loss(const LossBatch& b);

enum class LossKind { dice, wbce };

[[nodiscard]] nn::Tensor compute_loss(LossKind kind, const LossBatch& b);
[[nodiscard]] std::string_view to_string(LossKind kind);

}  // namespace volseg
