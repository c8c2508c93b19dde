#include "volseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace volseg {

namespace {

void check_batch(const LossBatch& b)
{
    if (!(b.prob.shape() == b.truth.shape() && b.prob.shape() == b.roi.shape()))
        throw DomainError("loss batch tensors must share one shape");
}

std::size_t roi_count(const LossBatch& b)
{
    const auto roi = b.roi.values();
    const std::size_t n = static_cast<std::size_t>(
        std::count_if(roi.begin(), roi.end(), [](float v) { return v != 0.0f; }));
    if (n == 0)
        throw DomainError("loss ROI is empty");
    return n;
}

}  // namespace

ClassWeights class_weights(const LossBatch& b)
{
    check_batch(b);
    ClassWeights w;
    const auto truth = b.truth.values();
    const auto roi = b.roi.values();
    for (std::size_t i = 0; i < roi.size(); ++i) {
        if (roi[i] == 0.0f)
            continue;
        if (truth[i] != 0.0f)
            ++w.n_airway;
        else
            ++w.n_background;
    }
    if (w.n_airway == 0)
        w.airway = 0.0;
    else if (w.n_background == 0)
        w.airway = 1.0;
    else
        w.airway = static_cast<double>(w.n_background) / static_cast<double>(w.n_airway);
    return w;
}

nn::Tensor wbce_loss(const LossBatch& b)
{
    check_batch(b);
    const double n_roi = static_cast<double>(roi_count(b));
    const ClassWeights w = class_weights(b);
    const auto p = b.prob.values();
    const auto truth = b.truth.values();
    const auto roi = b.roi.values();

    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (roi[i] == 0.0f)
            continue;
        const double q = std::clamp(static_cast<double>(p[i]), kProbClamp, 1.0 - kProbClamp);
        sum += truth[i] != 0.0f ? w.airway * std::log(q) : w.background * std::log(1.0 - q);
    }
    const float loss = static_cast<float>(-sum / n_roi);

    const nn::Tensor& prob = b.prob;
    return nn::Tensor::make_result(
        {1, 1, 1, 1, 1}, {loss}, {&prob},
        [w, n_roi, truth = std::vector<float>(truth.begin(), truth.end()),
         roi = std::vector<float>(roi.begin(), roi.end())](nn::Tensor::Node& self) {
            auto& parent = *self.parents[0];
            auto& g = parent.ensure_grad();
            const double upstream = self.grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (roi[i] == 0.0f)
                    continue;
                const double pv = parent.values[i];
                if (pv < kProbClamp || pv > 1.0 - kProbClamp)
                    continue;  // clamped: locally constant
                const double d = truth[i] != 0.0f ? -w.airway / pv : w.background / (1.0 - pv);
                g[i] += static_cast<float>(upstream * d / n_roi);
            }
        });
}

double dice_coefficient(const LossBatch& b)
{
    check_batch(b);
    roi_count(b);
    const auto p = b.prob.values();
    const auto truth = b.truth.values();
    const auto roi = b.roi.values();
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (roi[i] == 0.0f)
            continue;
        const double g = truth[i] != 0.0f ? 1.0 : 0.0;
        inter += p[i] * g;
        sp += p[i];
        sg += g;
    }
    return 2.0 * inter / (sp + sg + b.epsilon);
}

nn::Tensor dice_loss(const LossBatch& b)
{
    check_batch(b);
    roi_count(b);
    const auto p = b.prob.values();
    const auto truth = b.truth.values();
    const auto roi = b.roi.values();
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (roi[i] == 0.0f)
            continue;
        const double g = truth[i] != 0.0f ? 1.0 : 0.0;
        inter += p[i] * g;
        sp += p[i];
        sg += g;
    }
    const double den = sp + sg + b.epsilon;
    const double coeff = 2.0 * inter / den;

    const nn::Tensor& prob = b.prob;
    return nn::Tensor::make_result(
        {1, 1, 1, 1, 1}, {static_cast<float>(1.0 - coeff)}, {&prob},
        [inter, den, truth = std::vector<float>(truth.begin(), truth.end()),
         roi = std::vector<float>(roi.begin(), roi.end())](nn::Tensor::Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            const double upstream = self.grad[0];
            // d(1 − 2I/S)/dp_i = −(2 g_i S − 2 I) / S²
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (roi[i] == 0.0f)
                    continue;
                const double gi = truth[i] != 0.0f ? 1.0 : 0.0;
                g[i] += static_cast<float>(upstream * -(2.0 * gi * den - 2.0 * inter) / (den * den));
            }
        });
}

nn::Tensor compute_loss(LossKind kind, const LossBatch& b)
{
    return kind == LossKind::dice ? dice_loss(b) : wbce_loss(b);
}

std::string_view to_string(LossKind kind) { return kind == LossKind::dice ? "dice" : "wbce"; }

}  // namespace volseg
