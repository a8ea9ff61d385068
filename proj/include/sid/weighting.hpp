#pragma once

// Loss weightings and training-loss assembly. The sigmoid weighting is
// sigma(b - lambda) over eps-mse, identically exp(b) * sigma(lambda - b) over
// x-mse. The power loss decomposes the residual into orthonormal Haar
// sub-bands and shifts the per-band bias by log(2) per low pass.

#include <optional>
#include <string>
#include <vector>

#include "sid/schedule.hpp"
#include "sid/tensor.hpp"

namespace sid {

enum class WeightingKind { Sigmoid, Edm, EdmMonotonic, Power };

struct TimeShift {
    double b_start = 0.0;
    double b_end = 0.0;
    int64_t t_b = 1;  // warmup steps, > 0
};

struct WeightingSpec {
    WeightingKind kind = WeightingKind::Sigmoid;
    double bias = 0.0;
    int power_levels = 0;     // power kind only
    double edm_shift = 0.0;   // edm kinds only; translation along lambda
    std::optional<TimeShift> time_shift;

    double bias_at_step(int64_t step) const;
};

// eps-space weighting sigma(b - lambda), monotonically decreasing in lambda
double sigmoid_weight_eps(double lambda, double b);
// x-space weighting exp(b) * sigma(lambda - b) == sigma(b - lambda) * exp(lambda)
double sigmoid_weight_x(double lambda, double b);

enum class EdmVariant { Original, Monotonic };

// eps-space EDM weighting expressed over log-SNR (Karras et al. 2022, with
// sigma_data = 0.5, P_mean = -1.2, P_std = 1.2, as laid out in Kingma & Gao
// 2023). `shift` translates the curve along lambda. The monotonic variant
// holds the peak value constant on the rising side so the result is
// non-increasing in lambda; the curves touch at the argmax.
double edm_weight(double lambda, EdmVariant variant, double shift = 0.0);
double edm_weight_argmax(double shift = 0.0);

// pointwise eps/x-space weights for the curve kinds (power is band-structured
// and not a pointwise function of lambda; requesting it throws)
double weight_eps(const WeightingSpec& spec, double lambda);
double weight_x(const WeightingSpec& spec, double lambda);

// Linear warmup of the bias: b_start + (b_end - b_start) * min(step / t_b, 1).
double time_shifted_bias(int64_t step, double b_start, double b_end, int64_t t_b);

// Bias suggestion from the ~1.5-per-resolution-doubling shift rule anchored
// at 128^2 -> 0. A suggestion only; configured presets take precedence.
double suggest_bias(int image_res);

// ---------------------------------------------------------------------------
// Haar sub-bands
// ---------------------------------------------------------------------------

struct SubBand {
    std::string label;   // letters over {L,H}; rows pass first, then columns
    Tensor band;         // [h, w, C]
    int low_pass_count;  // l(s): number of L letters in the label
};

struct SubBandSet {
    std::vector<SubBand> bands;
};

// Orthonormal Haar analysis of [H, W, C], rows then columns, iterated on the
// LL band `levels` times. levels = 2 yields {LLLL, LLLH, LLHL, LLHH, LH, HL,
// HH}; levels = 0 yields the input as a single band with l = 0.
SubBandSet haar_forward_2d(const Tensor& image, int levels);

// Exact inverse; reconstructs the [H, W, C] image from its band set.
Tensor haar_inverse_2d(const SubBandSet& bands, int64_t h, int64_t w, int64_t c);

// ---------------------------------------------------------------------------
// losses (differentiable w.r.t. x_hat; one value per example)
// ---------------------------------------------------------------------------

// -0.5 * dlambda/dt * exp(b) * sigma(lambda - b) * mean_except_batch((x - x_hat)^2)
Tensor sigmoid_loss(const Tensor& x, const Tensor& x_hat, const LogSnrSchedule& sched,
                    const std::vector<double>& t, double bias);

// PL = sum_s sigma(lambda + b_s) * (-dlambda/dt) * ||band_s||^2 with
// b_s = log(2) * l(s) - b over the Haar bands of the residual x_hat - x.
Tensor power_loss(const Tensor& x, const Tensor& x_hat, const LogSnrSchedule& sched,
                  const std::vector<double>& t, double bias, int levels);

}  // namespace sid
