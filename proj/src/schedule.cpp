#include "sid/schedule.hpp"

#include <cmath>

namespace sid {

NoiseLevel level_from_logsnr(double lambda, double t) {
    NoiseLevel lv;
    lv.t = t;
    lv.lambda = lambda;
    lv.alpha = std::sqrt(sigmoid(lambda));
    lv.sigma = std::sqrt(sigmoid(-lambda));
    return lv;
}

LogSnrSchedule LogSnrSchedule::cosine(double logsnr_min, double logsnr_max) {
    LogSnrSchedule s;
    s.kind_ = ScheduleKind::Cosine;
    s.logsnr_min = logsnr_min;
    s.logsnr_max = logsnr_max;
    s.finalize();
    return s;
}

LogSnrSchedule LogSnrSchedule::cosine_shifted(double logsnr_min, double logsnr_max, int image_res,
                                              int shift_res) {
    if (image_res <= 0 || shift_res <= 0) throw ConfigError("cosine_shifted: resolutions must be positive");
    LogSnrSchedule s;
    s.kind_ = ScheduleKind::CosineShifted;
    s.logsnr_min = logsnr_min;
    s.logsnr_max = logsnr_max;
    s.image_res = image_res;
    s.shift_res = shift_res;
    s.shift_const_ = std::log(static_cast<double>(image_res) / shift_res);
    s.finalize();
    return s;
}

LogSnrSchedule LogSnrSchedule::cosine_interpolated(double logsnr_min, double logsnr_max,
                                                   int image_res, int noise_res_low,
                                                   int noise_res_high) {
    if (image_res <= 0 || noise_res_low <= 0 || noise_res_high <= 0) {
        throw ConfigError("cosine_interpolated: resolutions must be positive");
    }
    if (noise_res_low > noise_res_high) {
        throw ConfigError("cosine_interpolated: noise_res_low must be <= noise_res_high");
    }
    LogSnrSchedule s;
    s.kind_ = ScheduleKind::CosineInterpolated;
    s.logsnr_min = logsnr_min;
    s.logsnr_max = logsnr_max;
    s.image_res = image_res;
    s.noise_res_low = noise_res_low;
    s.noise_res_high = noise_res_high;
    s.ch_ = std::log(static_cast<double>(image_res) / noise_res_high);
    s.cl_ = std::log(static_cast<double>(image_res) / noise_res_low);
    s.finalize();
    return s;
}

void LogSnrSchedule::finalize() {
    if (!(logsnr_min < logsnr_max)) throw ConfigError("schedule: logsnr_min must be < logsnr_max");
    b_ = std::atan(std::exp(-0.5 * logsnr_max));
    a_ = std::atan(std::exp(-0.5 * logsnr_min)) - b_;

    if (kind_ == ScheduleKind::CosineInterpolated) {
        // f'(t) = lambda_cos'(t) + (cl - ch); the first term peaks (is least
        // negative) where sin(2(a t + b)) = 1, i.e. u = pi/4 when reachable.
        double least_negative = -4.0 * a_;  // value at u = pi/4
        const double u0 = b_, u1 = a_ + b_;
        const double pi4 = 0.78539816339744830962;
        if (!(u0 <= pi4 && pi4 <= u1)) {
            auto d = [&](double u) { return -2.0 * a_ / (std::sin(u) * std::cos(u)); };
            least_negative = std::max(d(u0), d(u1));
        }
        if (least_negative + (cl_ - ch_) >= 0.0) {
            throw ConfigError("cosine_interpolated: resolution shift breaks monotonicity");
        }
    }
    lambda_t0_ = logsnr(0.0);
    lambda_t1_ = logsnr(1.0);
}

std::string LogSnrSchedule::name() const {
    switch (kind_) {
        case ScheduleKind::Cosine:
            return "cosine";
        case ScheduleKind::CosineShifted:
            return "cosine_shifted_" + std::to_string(shift_res);
        case ScheduleKind::CosineInterpolated:
            return "cosine_interpolated_low_" + std::to_string(noise_res_low) + "_high_" +
                   std::to_string(noise_res_high);
    }
    return "?";
}

double LogSnrSchedule::cosine_logsnr(double t) const {
    return -2.0 * std::log(std::tan(a_ * t + b_));
}

double LogSnrSchedule::cosine_dlogsnr_dt(double t) const {
    const double u = a_ * t + b_;
    return -2.0 * a_ / (std::sin(u) * std::cos(u));
}

double LogSnrSchedule::logsnr(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw DomainError("logsnr: t=" + std::to_string(t) + " outside [0,1]");
    }
    const double base = cosine_logsnr(t);
    switch (kind_) {
        case ScheduleKind::Cosine:
            return base;
        case ScheduleKind::CosineShifted:
            return base + shift_const_;
        case ScheduleKind::CosineInterpolated:
            // (1-t)*(base + ch) + t*(base + cl)
            return base + (1.0 - t) * ch_ + t * cl_;
    }
    return base;
}

double LogSnrSchedule::dlogsnr_dt(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw DomainError("dlogsnr_dt: t=" + std::to_string(t) + " outside [0,1]");
    }
    if (t == 0.0) t = std::nextafter(0.0, 1.0);
    if (t == 1.0) t = std::nextafter(1.0, 0.0);
    const double base = cosine_dlogsnr_dt(t);
    if (kind_ == ScheduleKind::CosineInterpolated) return base + (cl_ - ch_);
    return base;
}

double LogSnrSchedule::invert(double lambda) const {
    const double hi = lambda_t0_, lo = lambda_t1_;
    if (!(lambda >= lo && lambda <= hi)) {
        throw DomainError("invert: lambda=" + std::to_string(lambda) +
                          " outside attained range [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
    }
    if (kind_ != ScheduleKind::CosineInterpolated) {
        // analytic: t = (arctan(exp(-(lambda - shift)/2)) - b) / a
        const double shift = kind_ == ScheduleKind::CosineShifted ? shift_const_ : 0.0;
        double t = (std::atan(std::exp(-0.5 * (lambda - shift))) - b_) / a_;
        return std::min(1.0, std::max(0.0, t));
    }
    // strictly decreasing, so bisection converges unconditionally
    double t_lo = 0.0, t_hi = 1.0;
    for (int it = 0; it < 200 && (t_hi - t_lo) > 1e-12; ++it) {
        const double mid = 0.5 * (t_lo + t_hi);
        if (logsnr(mid) > lambda) {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    return 0.5 * (t_lo + t_hi);
}

NoiseLevel LogSnrSchedule::to_noise_level(double t) const {
    return level_from_logsnr(logsnr(t), t);
}

}  // namespace sid
