#include "volseg/unet.hpp"

#include <cmath>

#include "volseg/random.hpp"

namespace volseg {

namespace {

int ipow(int base, int exp)
{
    int r = 1;
    for (int i = 0; i < exp; ++i)
        r *= base;
    return r;
}

bool deepest_axial_off(const UnetConfig& cfg)
{
    return cfg.axial_disabled_at_deepest && cfg.levels >= 2;
}

std::array<int, 3> level_kernel(const UnetConfig& cfg, int level)
{
    std::array<int, 3> k = cfg.kernel;
    if (deepest_axial_off(cfg) && level == cfg.levels - 1)
        k[0] = 1;
    return k;
}

std::array<int, 3> pool_into(const UnetConfig& cfg, int level)
{
    std::array<int, 3> p = cfg.pool;
    if (deepest_axial_off(cfg) && level == cfg.levels - 1)
        p[0] = 1;
    return p;
}

nn::ConvKernel make_kernel(int in_ch, int out_ch, std::array<int, 3> k, Rng& rng)
{
    nn::ConvKernel kernel{nn::Tensor({out_ch, in_ch, k[0], k[1], k[2]}, true),
                          nn::Tensor({1, out_ch, 1, 1, 1}, true)};
    const double fan_in = static_cast<double>(in_ch) * k[0] * k[1] * k[2];
    const double bound = std::sqrt(6.0 / fan_in);
    for (float& w : kernel.weight.values())
        w = static_cast<float>(rng.uniform(-bound, bound));
    return kernel;
}

}  // namespace

void validate(const UnetConfig& cfg)
{
    if (cfg.levels < 1)
        throw ConfigError("levels must be >= 1 (got " + std::to_string(cfg.levels) + ")");
    if (cfg.base_channels < 1)
        throw ConfigError("base_channels must be >= 1 (got " + std::to_string(cfg.base_channels) + ")");
    if (cfg.convs_down_per_level < 1 || cfg.convs_up_per_level < 1)
        throw ConfigError("convs_down_per_level and convs_up_per_level must be >= 1");
    for (int k : cfg.kernel)
        if (k < 1 || k % 2 == 0)
            throw ConfigError("kernel sizes must be odd and >= 1");
    for (int p : cfg.pool)
        if (p < 1)
            throw ConfigError("pool factors must be >= 1");
    for (int s : cfg.input_shape)
        if (s < 1)
            throw ConfigError("input_shape entries must be >= 1");
    if (cfg.levels > 12)
        throw ConfigError("levels must be <= 12");

    const int depth_pools = deepest_axial_off(cfg) ? cfg.levels - 2 : cfg.levels - 1;
    const int depth_div = ipow(cfg.pool[0], depth_pools);
    if (cfg.input_shape[0] % depth_div != 0)
        throw ConfigError("input depth " + std::to_string(cfg.input_shape[0]) +
                          " must be divisible by " + std::to_string(depth_div) +
                          " (pool_depth^" + std::to_string(depth_pools) +
                          (deepest_axial_off(cfg) ? ": levels-2 axial pools, axial pooling disabled at the deepest level)"
                                                  : ": levels-1 axial pools)"));
    const char* names[] = {"depth", "height", "width"};
    for (int a = 1; a < 3; ++a) {
        const int div = ipow(cfg.pool[a], cfg.levels - 1);
        if (cfg.input_shape[a] % div != 0)
            throw ConfigError(std::string("input ") + names[a] + " " +
                              std::to_string(cfg.input_shape[a]) + " must be divisible by " +
                              std::to_string(div) + " (pool^(levels-1))");
    }
}

nlohmann::ordered_json to_json(const UnetConfig& cfg)
{
    return {{"levels", cfg.levels},
            {"base_channels", cfg.base_channels},
            {"convs_down_per_level", cfg.convs_down_per_level},
            {"convs_up_per_level", cfg.convs_up_per_level},
            {"kernel", cfg.kernel},
            {"pool", cfg.pool},
            {"axial_disabled_at_deepest", cfg.axial_disabled_at_deepest},
            {"input_shape", cfg.input_shape}};
}

UnetConfig unet_config_from_json(const nlohmann::ordered_json& j)
{
    try {
        UnetConfig cfg;
        cfg.levels = j.at("levels").get<int>();
        cfg.base_channels = j.at("base_channels").get<int>();
        cfg.convs_down_per_level = j.at("convs_down_per_level").get<int>();
        cfg.convs_up_per_level = j.at("convs_up_per_level").get<int>();
        cfg.kernel = j.at("kernel").get<std::array<int, 3>>();
        cfg.pool = j.at("pool").get<std::array<int, 3>>();
        cfg.axial_disabled_at_deepest = j.at("axial_disabled_at_deepest").get<bool>();
        cfg.input_shape = j.at("input_shape").get<std::array<int, 3>>();
        validate(cfg);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed network config: ") + e.what());
    }
}

std::array<int, 3> valid_shrinkage(const UnetConfig& cfg)
{
    std::array<int, 3> total{0, 0, 0};
    std::array<int, 3> scale{1, 1, 1};
    std::vector<std::array<int, 3>> scales;
    for (int level = 0; level < cfg.levels; ++level) {
        if (level > 0) {
            const auto p = pool_into(cfg, level);
            for (int a = 0; a < 3; ++a)
                scale[a] *= p[a];
        }
        scales.push_back(scale);
        const auto k = level_kernel(cfg, level);
        for (int a = 0; a < 3; ++a)
            total[a] += cfg.convs_down_per_level * (k[a] - 1) / 2 * scale[a];
    }
    for (int level = cfg.levels - 2; level >= 0; --level)
        for (int a = 0; a < 3; ++a)
            total[a] += cfg.convs_up_per_level * (cfg.kernel[a] - 1) / 2 * scales[level][a];
    return total;
}

Unet::Unet(const UnetConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
    validate(cfg);
    Rng rng(seed);
    auto channels = [&](int level) { return cfg.base_channels << level; };

    for (int level = 0; level < cfg.levels; ++level)
        for (int i = 0; i < cfg.convs_down_per_level; ++i) {
            const int in = i > 0 ? channels(level) : (level == 0 ? 1 : channels(level - 1));
            down_.push_back(layers_.size());
            layers_.push_back({"enc" + std::to_string(level) + ".conv" + std::to_string(i),
                               make_kernel(in, channels(level), level_kernel(cfg, level), rng)});
        }
    for (int level = cfg.levels - 2; level >= 0; --level)
        for (int i = 0; i < cfg.convs_up_per_level; ++i) {
            const int in = i > 0 ? channels(level) : channels(level) + channels(level + 1);
            up_.push_back(layers_.size());
            layers_.push_back({"dec" + std::to_string(level) + ".conv" + std::to_string(i),
                               make_kernel(in, channels(level), level_kernel(cfg, level), rng)});
        }
    head_ = layers_.size();
    layers_.push_back({"head", make_kernel(channels(0), 1, {1, 1, 1}, rng)});
}

std::array<int, 3> Unet::pool_factor(int level) const { return pool_into(cfg_, level + 1); }

nn::Tensor Unet::forward(const nn::Tensor& x) const
{
    const nn::Shape& s = x.shape();
    if (s.c != 1 || s.d != cfg_.input_shape[0] || s.h != cfg_.input_shape[1] ||
        s.w != cfg_.input_shape[2])
        throw DomainError("unet input " + s.str() + " does not match configured shape (n,1," +
                          std::to_string(cfg_.input_shape[0]) + "," +
                          std::to_string(cfg_.input_shape[1]) + "," +
                          std::to_string(cfg_.input_shape[2]) + ")");

    std::vector<nn::Tensor> skips;
    nn::Tensor h = x;
    std::size_t li = 0;
    for (int level = 0; level < cfg_.levels; ++level) {
        if (level > 0)
            h = nn::maxpool3d(h, pool_into(cfg_, level));
        for (int i = 0; i < cfg_.convs_down_per_level; ++i)
            h = nn::relu(nn::conv3d(h, layers_[down_[li++]].kernel));
        if (level < cfg_.levels - 1)
            skips.push_back(h);
    }
    li = 0;
    for (int level = cfg_.levels - 2; level >= 0; --level) {
        h = nn::upsample3d(h, pool_into(cfg_, level + 1));
        h = nn::concat_channels(skips[static_cast<std::size_t>(level)], h);
        for (int i = 0; i < cfg_.convs_up_per_level; ++i)
            h = nn::relu(nn::conv3d(h, layers_[up_[li++]].kernel));
    }
    return nn::sigmoid(nn::conv3d(h, layers_[head_].kernel));
}

std::vector<nn::Tensor> Unet::parameters() const
{
    std::vector<nn::Tensor> params;
    for (const auto& l : layers_) {
        params.push_back(l.kernel.weight);
        params.push_back(l.kernel.bias);
    }
    return params;
}

std::vector<std::string> Unet::parameter_names() const
{
    std::vector<std::string> names;
    for (const auto& l : layers_) {
        names.push_back(l.name + ".weight");
        names.push_back(l.name + ".bias");
    }
    return names;
}

std::size_t Unet::count_parameters() const
{
    std::size_t n = 0;
    for (const auto& p : parameters())
        n += p.numel();
    return n;
}

std::vector<int> Unet::encoder_channels() const
{
    std::vector<int> ch;
    for (int level = 0; level < cfg_.levels; ++level)
        ch.push_back(cfg_.base_channels << level);
    return ch;
}

void Unet::store(nn::Checkpoint& ckpt) const
{
    const auto params = parameters();
    const auto names = parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const nn::Shape& s = params[i].shape();
        ckpt.arrays.push_back({"param/" + names[i],
                               {s.n, s.c, s.d, s.h, s.w},
                               {params[i].values().begin(), params[i].values().end()}});
    }
}

void Unet::load(const nn::Checkpoint& ckpt)
{
    auto params = parameters();
    const auto names = parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const nn::NamedArray* a = ckpt.find("param/" + names[i]);
        if (!a)
            throw ConfigError("checkpoint lacks parameter '" + names[i] + "'");
        const nn::Shape& s = params[i].shape();
        if (a->shape != std::vector<int>{s.n, s.c, s.d, s.h, s.w})
            throw ConfigError("checkpoint parameter '" + names[i] +
                              "' has a shape that disagrees with the network config");
        std::copy(a->data.begin(), a->data.end(), params[i].values().begin());
    }
}

}  // namespace volseg
