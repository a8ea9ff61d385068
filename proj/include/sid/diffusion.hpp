#pragma once

// Forward diffusion, the denoising posterior, prediction-space conversions,
// ancestral DDPM sampling with gamma-interpolated step noise, and
// classifier-free guidance restricted to a log-SNR interval.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sid/schedule.hpp"
#include "sid/tensor.hpp"

namespace sid {

enum class PredSpace { X, Eps, V };

const char* pred_space_name(PredSpace s);

struct Prediction {
    PredSpace space = PredSpace::V;
    Tensor value;
    NoiseLevel level;
};

// Convert between x / eps / v parameterizations at a single noise level.
// z is the noisy input the prediction refers to.
Prediction convert(const Prediction& pred, const Tensor& z, PredSpace target);

// Differentiable per-example conversion used in training: x_hat = alpha*z - sigma*v.
Tensor v_to_x_per_example(const Tensor& v, const Tensor& z, const std::vector<NoiseLevel>& levels);

// z = alpha*x + sigma*eps with eps drawn from rng; returns (z, eps)
std::pair<Tensor, Tensor> forward_sample(const Tensor& x, const NoiseLevel& level, Rng& rng);
std::pair<Tensor, Tensor> forward_sample(const Tensor& x, const std::vector<NoiseLevel>& levels,
                                         Rng& rng);

struct PosteriorParams {
    Tensor mu;
    double sigma_small = 0.0;  // sigma_{t->s}: the variational posterior std
    double sigma_large = 0.0;  // sigma_{t|s}: the forward transition std
};

// q(z_s | z_t, x = x_hat) for lambda_s > lambda_t (s earlier, less noisy)
PosteriorParams posterior_params(const NoiseLevel& level_s, const NoiseLevel& level_t,
                                 const Tensor& z_t, const Tensor& x_hat);

// z_s = mu + sigma_small^gamma * sigma_large^(1-gamma) * eps'.
// A null rng adds no noise and returns mu (the final step of a chain).
Tensor ancestral_step(const Tensor& z_t, const Tensor& x_hat, const NoiseLevel& level_s,
                      const NoiseLevel& level_t, double gamma, Rng* rng);

struct GuidanceInterval {
    double lambda_lo = -3.0;
    double lambda_hi = 5.0;
};

// cond + g*(cond - uncond) when level.lambda is inside the interval and g > 0;
// otherwise cond unchanged. g = 0 means no guidance anywhere.
Prediction guided_prediction(const Prediction& cond, const Prediction& uncond, double g,
                             const GuidanceInterval& interval, const NoiseLevel& level);

enum class ClipX { None, Static };

struct SamplerConfig {
    int num_steps = 512;
    double gamma = 0.3;           // log-linear interpolation of the two stds
    double guidance_scale = 0.0;  // 0 disables guidance entirely
    GuidanceInterval guidance_interval;
    PredSpace guidance_space = PredSpace::X;  // where cond/uncond are mixed
    ClipX clip_x = ClipX::Static;
    uint64_t seed = 0;
    double t_min = 1e-4;  // uniform-in-t discretization lower endpoint

    void validate() const;
};

// model(z, level, labels); labels == nullptr requests the unconditional branch
using DenoiseFn =
    std::function<Prediction(const Tensor& z, const NoiseLevel& level, const std::vector<int64_t>* labels)>;

// Ancestral DDPM chain from t=1 down to cfg.t_min over a uniform-in-t grid.
// `example_shape` excludes the batch dim. Per-example RNG streams derive from
// (seed, example index) so batch evaluation order cannot change results. The
// unconditional branch is only ever evaluated when guidance is active and the
// current lambda lies inside the guidance interval.
Tensor sample(const DenoiseFn& model, const LogSnrSchedule& sched, const SamplerConfig& cfg,
              const std::vector<int64_t>& labels, int64_t batch, const Shape& example_shape);

// 8-bit binary PPM (P6); values in [-1,1], H x W x C with C == 1 or 3
void write_ppm(const std::string& path, const Tensor& image);

}  // namespace sid
