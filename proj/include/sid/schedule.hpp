#pragma once

// Variance-preserving log-SNR noise schedules lambda(t) with analytic
// derivatives and inverses. alpha_t = sqrt(sigmoid(lambda)), sigma_t =
// sqrt(sigmoid(-lambda)), so alpha^2 + sigma^2 = 1 at every t.

#include <string>

#include "sid/common.hpp"

namespace sid {

struct NoiseLevel {
    double t = 0.0;       // unit time in [0,1]
    double lambda = 0.0;  // log signal-to-noise ratio
    double alpha = 1.0;
    double sigma = 0.0;
};

NoiseLevel level_from_logsnr(double lambda, double t = 0.0);

enum class ScheduleKind { Cosine, CosineShifted, CosineInterpolated };

class LogSnrSchedule {
public:
    static LogSnrSchedule cosine(double logsnr_min = -10.0, double logsnr_max = 10.0);
    static LogSnrSchedule cosine_shifted(double logsnr_min, double logsnr_max, int image_res,
                                         int shift_res);
    static LogSnrSchedule cosine_interpolated(double logsnr_min, double logsnr_max, int image_res,
                                              int noise_res_low, int noise_res_high);

    ScheduleKind kind() const { return kind_; }
    std::string name() const;

    // lambda(t); t in [0,1]
    double logsnr(double t) const;
    // analytic d lambda / dt, strictly negative; t in {0,1} is evaluated one
    // ulp inside the boundary
    double dlogsnr_dt(double t) const;
    // t such that logsnr(t) == lambda; lambda must lie in the attained range
    double invert(double lambda) const;

    NoiseLevel to_noise_level(double t) const;

    // attained endpoint values; for the interpolated kind these differ from
    // logsnr_min / logsnr_max because the resolution shift moves them
    double lambda_at_t0() const { return lambda_t0_; }
    double lambda_at_t1() const { return lambda_t1_; }

    double logsnr_min = -10.0;
    double logsnr_max = 10.0;
    int image_res = 0;
    int noise_res_low = 0;
    int noise_res_high = 0;
    int shift_res = 0;

private:
    LogSnrSchedule() = default;
    void finalize();

    double cosine_logsnr(double t) const;
    double cosine_dlogsnr_dt(double t) const;

    ScheduleKind kind_ = ScheduleKind::Cosine;
    double a_ = 0.0;  // arctan(exp(-logsnr_min/2)) - b
    double b_ = 0.0;  // arctan(exp(-logsnr_max/2))
    double shift_const_ = 0.0;  // cosine_shifted: log(image_res / shift_res)
    double ch_ = 0.0;           // interpolated: log(image_res / noise_res_high)
    double cl_ = 0.0;           // interpolated: log(image_res / noise_res_low)
    double lambda_t0_ = 0.0;
    double lambda_t1_ = 0.0;
};

}  // namespace sid
