#pragma once

#include <array>

#include "volseg/nn/tensor.hpp"

namespace volseg::nn {

/// Convolution weights (out_ch, in_ch, kd, kh, kw) and bias (1, out_ch, 1, 1, 1).
/// Kernels are odd and zero-padded by (k − 1)/2, so spatial dims are preserved.
struct ConvKernel {
    Tensor weight;
    Tensor bias;

    [[nodiscard]] int out_channels() const { return weight.shape().n; }
    [[nodiscard]] int in_channels() const { return weight.shape().c; }
    [[nodiscard]] std::array<int, 3> size() const
    {
        return {weight.shape().d, weight.shape().h, weight.shape().w};
    }
};

[[nodiscard]] Tensor conv3d(const Tensor& x, const ConvKernel& k);

/// Non-overlapping max pooling; gradient goes to the first maximum of each window.
[[nodiscard]] Tensor maxpool3d(const Tensor& x, std::array<int, 3> window);

/// Nearest-neighbour replication by integer factors.
[[nodiscard]] Tensor upsample3d(const Tensor& x, std::array<int, 3> factor);

[[nodiscard]] Tensor relu(const Tensor& x);
[[nodiscard]] Tensor sigmoid(const Tensor& x);

/// Channels of `a` followed by channels of `b`.
[[nodiscard]] Tensor concat_channels(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor slice_channels(const Tensor& x, int begin, int count);

}  // namespace volseg::nn
