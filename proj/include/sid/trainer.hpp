#pragma once

// Toy-scale end-to-end training: v-prediction Residual U-ViT under the
// configured weighted loss, Adam with linear warmup, and EMA weights.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sid/dataset.hpp"
#include "sid/diffusion.hpp"
#include "sid/oracle.hpp"
#include "sid/schedule.hpp"
#include "sid/uvit.hpp"
#include "sid/weighting.hpp"

namespace sid {

struct TrainConfig {
    int64_t batch_size = 128;
    double learning_rate = 1e-4;
    int64_t warmup_steps = 100;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-12;
    double weight_decay = 0.0;  // accepted for config parity; must stay 0
    double ema_decay = 0.9999;
    int64_t max_steps = 1000;
    WeightingSpec weighting;
    LogSnrSchedule schedule = LogSnrSchedule::cosine_interpolated(-10.0, 10.0, 128, 32, 128);
    double label_drop_prob = 0.1;
    uint64_t seed = 0;
    ToyDataset dataset = ToyDataset::two_gaussians_1d();

    void validate() const;
};

struct TrainState {
    TrainConfig cfg;
    UViTConfig model_cfg;
    UViT model;
    NamedTensors ema;
    std::vector<std::vector<double>> adam_m, adam_v;
    int64_t step = 0;
};

// model config sized for the dataset when none is given
UViTConfig default_toy_model_config(const ToyDataset& data);

TrainState init_train(const TrainConfig& cfg, const UViTConfig& model_cfg);

struct StepStats {
    int64_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double bias = 0.0;
};

// One optimization step on the given batch. Aborts with a diagnostic when the
// loss goes non-finite.
StepStats train_step(TrainState& state, const Tensor& images, const std::vector<int64_t>& labels);

// Draws the step's batch deterministically from (cfg.seed, state.step).
StepStats train_step(TrainState& state);

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalMetrics {
    int64_t num_samples = 0;
    std::optional<double> wasserstein;            // 1-D kinds
    std::optional<double> class_histogram_dist;   // shapes kind
    std::optional<double> guidance_delta;         // shapes kind, |guided - unguided|
};

EvalMetrics eval_toy(const TrainState& state, const SamplerConfig& sampler_cfg,
                     int64_t num_samples, bool use_ema = false);

// denoiser adapters for the sampler
DenoiseFn model_denoiser(const UViT& model);
DenoiseFn model_denoiser_ema(const TrainState& state);
// closed-form optimal denoiser for unit-variance Gaussian data: x_hat = alpha z
DenoiseFn gaussian_data_denoiser();
// closed-form optimal denoiser for 2^n-grid data, applied elementwise
DenoiseFn grid_data_denoiser(int n_bits);

}  // namespace sid
