#pragma once

#include <string>

#include "volseg/phantom.hpp"
#include "volseg/trainer.hpp"

namespace fixtures {

inline volseg::Scan phantom_scan(std::uint64_t seed, double noise = 0.15,
                                 volseg::Dims dims = {40, 32, 32})
{
    volseg::TreeSpec spec;
    spec.seed = seed;
    spec.noise_sd = noise;
    volseg::Phantom p = volseg::generate_phantom(spec, dims);
    return {"phantom" + std::to_string(seed), std::move(p.image), std::move(p.lung),
            std::move(p.truth), std::move(p.exclude)};
}

/// Small network and short schedule for tests that only need the mechanics.
inline volseg::TrainConfig tiny_config()
{
    volseg::TrainConfig c;
    c.net.levels = 2;
    c.net.base_channels = 2;
    c.net.input_shape = {8, 32, 32};
    c.lr = 1e-3;
    c.max_epochs = 2;
    c.patience = 5;
    c.crop_margin = 2;
    c.elastic_sigma = 2.0;
    return c;
}

/// The desk configuration: three levels, base 4, 16×32×32 patches.
inline volseg::TrainConfig desk_config()
{
    volseg::TrainConfig c;
    c.net.levels = 3;
    c.net.base_channels = 4;
    c.net.input_shape = {16, 32, 32};
    c.lr = 1e-3;
    c.max_epochs = 300;
    c.patience = 15;
    c.crop_margin = 2;
    c.elastic_sigma = 3.3;
    return c;
}

}  // namespace fixtures
