#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volseg/nn/checkpoint.hpp"
#include "volseg/nn/ops.hpp"

namespace volseg {

struct UnetConfig {
    int levels = 5;
    int base_channels = 16;
    int convs_down_per_level = 2;
    int convs_up_per_level = 1;
    std::array<int, 3> kernel{3, 3, 3};
    std::array<int, 3> pool{2, 2, 2};
    bool axial_disabled_at_deepest = true;
    std::array<int, 3> input_shape{104, 352, 240};  // (depth, height, width)

    bool operator==(const UnetConfig&) const = default;
};

/// Throws ConfigError naming the violated rule.
void validate(const UnetConfig& cfg);

[[nodiscard]] nlohmann::ordered_json to_json(const UnetConfig& cfg);
[[nodiscard]] UnetConfig unet_config_from_json(const nlohmann::ordered_json& j);

/// Per-axis one-sided shrinkage (in input voxels) of the same network built
/// with unpadded convolutions: Σ over conv layers of (k − 1)/2 times the
/// cumulative pooling factor at that layer's level.
[[nodiscard]] std::array<int, 3> valid_shrinkage(const UnetConfig& cfg);

class Unet {
public:
    struct Layer {
        std::string name;
        nn::ConvKernel kernel;
    };

    /// He-uniform (fan-in) weights, zero biases.
    Unet(const UnetConfig& cfg, std::uint64_t seed);

    /// (1, 1, D, H, W) image → (1, 1, D, H, W) probabilities.
    [[nodiscard]] nn::Tensor forward(const nn::Tensor& x) const;

    [[nodiscard]] const UnetConfig& config() const { return cfg_; }
    [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
    [[nodiscard]] std::vector<nn::Tensor> parameters() const;
    [[nodiscard]] std::vector<std::string> parameter_names() const;
    [[nodiscard]] std::size_t conv_layer_count() const { return layers_.size(); }
    [[nodiscard]] std::size_t count_parameters() const;
    [[nodiscard]] std::vector<int> encoder_channels() const;

    /// Pooling factor applied on the way into level i + 1 (i = 0-based).
    [[nodiscard]] std::array<int, 3> pool_factor(int level) const;

    /// Copies weights from `ckpt` (arrays named "param/<layer>.weight|bias").
    /// Throws ConfigError when names or shapes disagree with this model.
    void load(const nn::Checkpoint& ckpt);
    void store(nn::Checkpoint& ckpt) const;

private:
    UnetConfig cfg_;
    std::vector<Layer> layers_;
    std::vector<std::size_t> down_;   // layer indices, levels × convs_down
    std::vector<std::size_t> up_;     // layer indices, (levels − 1) × convs_up
    std::size_t head_ = 0;
};

}  // namespace volseg
