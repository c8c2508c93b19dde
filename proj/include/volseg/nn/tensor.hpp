#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg::nn {

/// (batch, channels, depth, height, width). Conv weights reuse it as
/// (out_ch, in_ch, kd, kh, kw).
struct Shape {
    int n = 1, c = 1, d = 1, h = 1, w = 1;

    [[nodiscard]] std::size_t numel() const
    {
        return static_cast<std::size_t>(n) * c * spatial();
    }
    [[nodiscard]] std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
    [[nodiscard]] std::string str() const;
    bool operator==(const Shape&) const = default;
};

/// Reference-counted dense float tensor that records the ops producing it,
/// so `backward()` can run reverse-mode differentiation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t numel() const { return node_->values.size(); }

    [[nodiscard]] std::span<float> values() { return node_->values; }
    [[nodiscard]] std::span<const float> values() const { return node_->values; }
    [[nodiscard]] float item() const;

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer, allocated (zeroed) on first access.
    [[nodiscard]] std::span<float> grad();
    [[nodiscard]] std::span<const float> grad() const { return node_->grad; }
    void zero_grad();

    /// Reverse pass from this (scalar) tensor; seeds d(self) = 1.
    void backward();

    /// Same values, no history.
    [[nodiscard]] Tensor detach() const;

    // Used by op implementations.
    struct Node {
        Shape shape;
        std::vector<float> values;
        std::vector<float> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;

        std::vector<float>& ensure_grad()
        {
            if (grad.empty())
                grad.assign(values.size(), 0.0f);
            return grad;
        }
    };

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

    /// Output tensor whose gradient flows to `inputs` through `fn`. History
    /// is only kept when one of the inputs requires a gradient.
    static Tensor make_result(Shape shape, std::vector<float> values,
                              std::initializer_list<const Tensor*> inputs,
                              std::function<void(Node&)> fn);

private:
    std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no history (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    [[nodiscard]] static bool active();

private:
    bool previous_;
};

}  // namespace volseg::nn
