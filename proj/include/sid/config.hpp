#pragma once

// Config loader. The native format is line-based `key = value` with numbers,
// 'strings', bare tokens (v, sigmoid:-3), [lists] and (tuples); '#' starts a
// comment. Files ending in .json are accepted with the same keys. Unknown
// keys, malformed values and type mismatches raise ConfigError naming the key
// and line. An empty file yields the small 128^2 preset defaults.

#include <string>

#include "sid/diffusion.hpp"
#include "sid/trainer.hpp"
#include "sid/uvit.hpp"

namespace sid {

struct LoadedConfig {
    UViTConfig model;
    TrainConfig train;
    SamplerConfig sampler;

    // the model config sized to the dataset instead of the image preset
    UViTConfig toy_model() const { return default_toy_model_config(train.dataset); }
};

LoadedConfig config_load(const std::string& path);

// defaults only (as if loading an empty file)
LoadedConfig config_defaults();

// applies the SID2_SEED environment override, if set
void apply_env_seed(LoadedConfig& cfg);

// schedule name parser: cosine | cosine_shifted_<res> |
// cosine_interpolated_low_<a>_high_<b>
LogSnrSchedule schedule_from_name(const std::string& name, int image_res, double logsnr_min,
                                  double logsnr_max);

}  // namespace sid
