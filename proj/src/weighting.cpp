#include "sid/weighting.hpp"

#include <cmath>

namespace sid {

double WeightingSpec::bias_at_step(int64_t step) const {
    if (!time_shift) return bias;
    return time_shifted_bias(step, time_shift->b_start, time_shift->b_end, time_shift->t_b);
}

double sigmoid_weight_eps(double lambda, double b) { return sigmoid(b - lambda); }

double sigmoid_weight_x(double lambda, double b) { return std::exp(b) * sigmoid(lambda - b); }

namespace {

// bell-shaped eps-space EDM weighting before any shift:
// N(lambda; 2.4, 2.4^2) * (1 + 4 exp(-lambda))
double edm_base(double u) {
    const double mu = 2.4, s = 2.4;
    const double z = (u - mu) / s;
    const double gauss = std::exp(-0.5 * z * z) / (s * 2.50662827463100050242);
    // log1p form keeps the product finite for very negative u
    return gauss * std::exp(std::log1p(4.0 * std::exp(-u)));
}

double edm_base_argmax() {
    static const double cached = [] {
        // coarse scan then golden-section refinement; the bump is unimodal
        double best_u = 0.0, best_v = -1.0;
        for (double u = -20.0; u <= 20.0; u += 1e-3) {
            const double v = edm_base(u);
            if (v > best_v) {
                best_v = v;
                best_u = u;
            }
        }
        double lo = best_u - 2e-3, hi = best_u + 2e-3;
        const double gr = 0.61803398874989484820;
        double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
        for (int it = 0; it < 200; ++it) {
            if (edm_base(c) < edm_base(d)) {
                lo = c;
            } else {
                hi = d;
            }
            c = hi - gr * (hi - lo);
            d = lo + gr * (hi - lo);
        }
        return 0.5 * (lo + hi);
    }();
    return cached;
}

}  // namespace

double edm_weight_argmax(double shift) { return edm_base_argmax() + shift; }

double edm_weight(double lambda, EdmVariant variant, double shift) {
    const double u = lambda - shift;
    switch (variant) {
        case EdmVariant::Original:
            return edm_base(u);
        case EdmVariant::Monotonic: {
            const double peak = edm_base_argmax();
            return edm_base(std::max(u, peak));
        }
    }
    throw ConfigError("edm_weight: unknown variant");
}

double weight_eps(const WeightingSpec& spec, double lambda) {
    switch (spec.kind) {
        case WeightingKind::Sigmoid:
            return sigmoid_weight_eps(lambda, spec.bias);
        case WeightingKind::Edm:
            return edm_weight(lambda, EdmVariant::Original, spec.edm_shift);
        case WeightingKind::EdmMonotonic:
            return edm_weight(lambda, EdmVariant::Monotonic, spec.edm_shift);
        case WeightingKind::Power:
            throw ConfigError("weight_eps: power loss is band-structured, not pointwise");
    }
    throw ConfigError("weight_eps: unknown kind");
}

double weight_x(const WeightingSpec& spec, double lambda) {
    if (spec.kind == WeightingKind::Sigmoid) {
        return sigmoid_weight_x(lambda, spec.bias);  // stable closed form
    }
    return std::exp(lambda) * weight_eps(spec, lambda);
}

double time_shifted_bias(int64_t step, double b_start, double b_end, int64_t t_b) {
    if (t_b <= 0) throw ConfigError("time_shifted_bias: t_b must be positive");
    const double frac = std::min(static_cast<double>(step) / static_cast<double>(t_b), 1.0);
    return b_start + (b_end - b_start) * frac;
}

double suggest_bias(int image_res) {
    if (image_res <= 0) throw ConfigError("suggest_bias: resolution must be positive");
    return -1.5 * std::log2(static_cast<double>(image_res) / 128.0);
}

// ---------------------------------------------------------------------------
// Haar
// ---------------------------------------------------------------------------

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// one analysis pass along W (axis 2 of [H,W,C]): smooth left, detail right
std::vector<double> haar_rows_plain(const std::vector<double>& x, int64_t h, int64_t w, int64_t c) {
    std::vector<double> y(x.size());
    for (int64_t r = 0; r < h; ++r)
        for (int64_t j = 0; j < w / 2; ++j)
            for (int64_t k = 0; k < c; ++k) {
                const double e = x[(r * w + 2 * j) * c + k];
                const double o = x[(r * w + 2 * j + 1) * c + k];
                y[(r * w + j) * c + k] = (e + o) * kInvSqrt2;
                y[(r * w + w / 2 + j) * c + k] = (e - o) * kInvSqrt2;
            }
    return y;
}

std::vector<double> haar_cols_plain(const std::vector<double>& x, int64_t h, int64_t w, int64_t c) {
    std::vector<double> y(x.size());
    for (int64_t j = 0; j < h / 2; ++j)
        for (int64_t s = 0; s < w; ++s)
            for (int64_t k = 0; k < c; ++k) {
                const double e = x[((2 * j) * w + s) * c + k];
                const double o = x[((2 * j + 1) * w + s) * c + k];
                y[(j * w + s) * c + k] = (e + o) * kInvSqrt2;
                y[((h / 2 + j) * w + s) * c + k] = (e - o) * kInvSqrt2;
            }
    return y;
}

std::vector<double> haar_rows_inv_plain(const std::vector<double>& y, int64_t h, int64_t w,
                                        int64_t c) {
    std::vector<double> x(y.size());
    for (int64_t r = 0; r < h; ++r)
        for (int64_t j = 0; j < w / 2; ++j)
            for (int64_t k = 0; k < c; ++k) {
                const double s = y[(r * w + j) * c + k];
                const double d = y[(r * w + w / 2 + j) * c + k];
                x[(r * w + 2 * j) * c + k] = (s + d) * kInvSqrt2;
                x[(r * w + 2 * j + 1) * c + k] = (s - d) * kInvSqrt2;
            }
    return x;
}

std::vector<double> haar_cols_inv_plain(const std::vector<double>& y, int64_t h, int64_t w,
                                        int64_t c) {
    std::vector<double> x(y.size());
    for (int64_t j = 0; j < h / 2; ++j)
        for (int64_t s = 0; s < w; ++s)
            for (int64_t k = 0; k < c; ++k) {
                const double sm = y[(j * w + s) * c + k];
                const double d = y[((h / 2 + j) * w + s) * c + k];
                x[((2 * j) * w + s) * c + k] = (sm + d) * kInvSqrt2;
                x[((2 * j + 1) * w + s) * c + k] = (sm - d) * kInvSqrt2;
            }
    return x;
}

std::vector<double> quadrant(const std::vector<double>& x, int64_t /*h*/, int64_t w, int64_t c,
                             int64_t r0, int64_t s0, int64_t hh, int64_t ww) {
    std::vector<double> q(static_cast<size_t>(hh * ww * c));
    for (int64_t r = 0; r < hh; ++r)
        for (int64_t s = 0; s < ww; ++s)
            for (int64_t k = 0; k < c; ++k)
                q[(r * ww + s) * c + k] = x[((r0 + r) * w + s0 + s) * c + k];
    return q;
}

void check_haar_dims(const Shape& shape, int levels) {
    if (shape.size() != 3) throw DimensionError("haar_forward_2d: expected [H, W, C]");
    if (levels < 0) throw ConfigError("haar: levels must be >= 0");
    const int64_t div = int64_t(1) << levels;
    if (shape[0] % div != 0 || shape[1] % div != 0) {
        throw DimensionError("haar: dims " + shape_str(shape) + " not divisible by 2^" +
                             std::to_string(levels));
    }
}

}  // namespace

SubBandSet haar_forward_2d(const Tensor& image, int levels) {
    check_haar_dims(image.shape(), levels);
    const int64_t c = image.dim(2);
    SubBandSet out;
    if (levels == 0) {
        out.bands.push_back(
            {"", Tensor::from_data(image.shape(), {image.data().begin(), image.data().end()}), 0});
        return out;
    }
    std::vector<double> cur(image.data().begin(), image.data().end());
    int64_t h = image.dim(0), w = image.dim(1);
    std::string prefix;
    std::vector<SubBand> details;  // collected shallow-to-deep, emitted deep-first
    for (int lev = 1; lev <= levels; ++lev) {
        auto y = haar_cols_plain(haar_rows_plain(cur, h, w, c), h, w, c);
        const int64_t h2 = h / 2, w2 = w / 2;
        // first letter: rows pass (L = left half), second: columns pass (L = top half)
        auto band = [&](const char* lbl, int64_t r0, int64_t s0) {
            std::string label = prefix + lbl;
            const int l = static_cast<int>(std::count(label.begin(), label.end(), 'L'));
            return SubBand{label, Tensor::from_data({h2, w2, c}, quadrant(y, h, w, c, r0, s0, h2, w2)),
                           l};
        };
        if (lev == levels) {
            out.bands.push_back(band("LL", 0, 0));
            out.bands.push_back(band("LH", h2, 0));
            out.bands.push_back(band("HL", 0, w2));
            out.bands.push_back(band("HH", h2, w2));
        } else {
            details.push_back(band("LH", h2, 0));
            details.push_back(band("HL", 0, w2));
            details.push_back(band("HH", h2, w2));
        }
        cur = quadrant(y, h, w, c, 0, 0, h2, w2);
        h = h2;
        w = w2;
        prefix += "LL";
    }
    for (int lev = levels - 1; lev >= 1; --lev) {
        const size_t base = static_cast<size_t>(3 * (lev - 1));
        out.bands.push_back(details[base + 0]);  // LH
        out.bands.push_back(details[base + 1]);  // HL
        out.bands.push_back(details[base + 2]);  // HH
    }
    return out;
}

Tensor haar_inverse_2d(const SubBandSet& set, int64_t h, int64_t w, int64_t c) {
    if (set.bands.size() == 1 && set.bands[0].label.empty()) {
        const Tensor& b = set.bands[0].band;
        return Tensor::from_data(b.shape(), {b.data().begin(), b.data().end()});
    }
    // deepest level first: find the LL...LL band (max low_pass_count)
    int levels = 0;
    for (const auto& b : set.bands) levels = std::max(levels, static_cast<int>(b.label.size()) / 2);
    auto find = [&](const std::string& label) -> const SubBand& {
        for (const auto& b : set.bands) {
            if (b.label == label) return b;
        }
        throw DimensionError("haar_inverse_2d: missing band " + label);
    };
    std::string prefix(static_cast<size_t>(2 * (levels - 1)), ' ');
    for (int i = 0; i < levels - 1; ++i) {
        prefix[2 * i] = 'L';
        prefix[2 * i + 1] = 'L';
    }
    const int64_t hd = h >> levels, wd = w >> levels;
    std::vector<double> cur(find(prefix + "LL").band.data().begin(),
                            find(prefix + "LL").band.data().end());
    int64_t ch = hd, cw = wd;
    for (int lev = levels; lev >= 1; --lev) {
        const std::string pre(static_cast<size_t>(2 * (lev - 1)), 'L');
        const auto& lh = find(pre + "LH").band;
        const auto& hl = find(pre + "HL").band;
        const auto& hh = find(pre + "HH").band;
        std::vector<double> full(static_cast<size_t>(4 * ch * cw * c));
        auto put = [&](const std::vector<double>& q, int64_t r0, int64_t s0) {
            for (int64_t r = 0; r < ch; ++r)
                for (int64_t s = 0; s < cw; ++s)
                    for (int64_t k = 0; k < c; ++k)
                        full[((r0 + r) * (2 * cw) + s0 + s) * c + k] = q[(r * cw + s) * c + k];
        };
        put(cur, 0, 0);
        put({lh.data().begin(), lh.data().end()}, ch, 0);
        put({hl.data().begin(), hl.data().end()}, 0, cw);
        put({hh.data().begin(), hh.data().end()}, ch, cw);
        cur = haar_rows_inv_plain(haar_cols_inv_plain(full, 2 * ch, 2 * cw, c), 2 * ch, 2 * cw, c);
        ch *= 2;
        cw *= 2;
    }
    return Tensor::from_data({h, w, c}, std::move(cur));
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {

void check_loss_inputs(const Tensor& x, const Tensor& x_hat, const std::vector<double>& t) {
    if (x.shape() != x_hat.shape()) {
        throw DimensionError("loss: x " + shape_str(x.shape()) + " vs x_hat " +
                             shape_str(x_hat.shape()));
    }
    if (x.rank() < 1 || x.dim(0) != static_cast<int64_t>(t.size())) {
        throw DimensionError("loss: batch size " + std::to_string(x.rank() ? x.dim(0) : 0) +
                             " vs " + std::to_string(t.size()) + " time samples");
    }
    for (double ti : t) {
        if (!(ti > 0.0 && ti < 1.0)) {
            throw DomainError("loss: t=" + std::to_string(ti) + " outside (0,1)");
        }
    }
}

}  // namespace

Tensor sigmoid_loss(const Tensor& x, const Tensor& x_hat, const LogSnrSchedule& sched,
                    const std::vector<double>& t, double bias) {
    check_loss_inputs(x, x_hat, t);
    std::vector<double> weight(t.size());
    for (size_t i = 0; i < t.size(); ++i) {
        const double lam = sched.logsnr(t[i]);
        weight[i] = -0.5 * sched.dlogsnr_dt(t[i]) * std::exp(bias) * sigmoid(lam - bias);
    }
    auto diff = sub(x, x_hat);
    return scale_per_example(mean_except_batch(mul(diff, diff)), weight);
}

Tensor power_loss(const Tensor& x, const Tensor& x_hat, const LogSnrSchedule& sched,
                  const std::vector<double>& t, double bias, int levels) {
    check_loss_inputs(x, x_hat, t);
    if (x.rank() != 4) throw DimensionError("power_loss: expected [N, H, W, C]");
    if (levels < 0) throw ConfigError("power_loss: levels must be >= 0");
    const int64_t div = int64_t(1) << levels;
    if (x.dim(1) % div != 0 || x.dim(2) % div != 0) {
        throw DimensionError("power_loss: dims " + shape_str(x.shape()) +
                             " not divisible by 2^" + std::to_string(levels));
    }
    const size_t n = t.size();
    std::vector<double> lam(n), neg_dlam(n);
    for (size_t i = 0; i < n; ++i) {
        lam[i] = sched.logsnr(t[i]);
        neg_dlam[i] = -sched.dlogsnr_dt(t[i]);
    }
    auto band_weight = [&](int low_passes) {
        const double bs = std::log(2.0) * low_passes - bias;
        std::vector<double> w(n);
        for (size_t i = 0; i < n; ++i) w[i] = sigmoid(lam[i] + bs) * neg_dlam[i];
        return w;
    };
    auto band_term = [&](const Tensor& band, int low_passes) {
        return scale_per_example(sum_except_batch(mul(band, band)), band_weight(low_passes));
    };

    Tensor residual = sub(x_hat, x);
    if (levels == 0) return band_term(residual, 0);

    Tensor total;
    Tensor cur = residual;
    int prefix_l = 0;
    for (int lev = 1; lev <= levels; ++lev) {
        auto y = haar_cols(haar_rows(cur));
        const int64_t h2 = y.dim(1) / 2, w2 = y.dim(2) / 2;
        auto ll = slice_spatial(y, 0, 0, h2, w2);
        auto lh = slice_spatial(y, h2, 0, h2, w2);
        auto hl = slice_spatial(y, 0, w2, h2, w2);
        auto hh = slice_spatial(y, h2, w2, h2, w2);
        auto acc = add(add(band_term(lh, prefix_l + 1), band_term(hl, prefix_l + 1)),
                       band_term(hh, prefix_l + 0));
        if (lev == levels) acc = add(acc, band_term(ll, prefix_l + 2));
        total = total.defined() ? add(total, acc) : acc;
        cur = ll;
        prefix_l += 2;
    }
    return total;
}

}  // namespace sid
