#include "sid/diffusion.hpp"

#include <cmath>
#include <cstdio>

namespace sid {

const char* pred_space_name(PredSpace s) {
    switch (s) {
        case PredSpace::X:
            return "x";
        case PredSpace::Eps:
            return "eps";
        case PredSpace::V:
            return "v";
    }
    return "?";
}

namespace {

Tensor lincomb(double ca, const Tensor& a, double cb, const Tensor& b) {
    return add(scale(a, ca), scale(b, cb));
}

}  // namespace

Prediction convert(const Prediction& pred, const Tensor& z, PredSpace target) {
    if (pred.value.shape() != z.shape()) {
        throw DimensionError("convert: prediction " + shape_str(pred.value.shape()) + " vs z " +
                             shape_str(z.shape()));
    }
    if (pred.space == target) return pred;
    const double a = pred.level.alpha, s = pred.level.sigma;
    Tensor x;
    switch (pred.space) {
        case PredSpace::X:
            x = pred.value;
            break;
        case PredSpace::V:
            x = lincomb(a, z, -s, pred.value);
            break;
        case PredSpace::Eps:
            x = scale(lincomb(1.0, z, -s, pred.value), 1.0 / a);
            break;
    }
    Prediction out;
    out.level = pred.level;
    out.space = target;
    switch (target) {
        case PredSpace::X:
            out.value = x;
            break;
        case PredSpace::V:
            out.value = scale(lincomb(a, z, -1.0, x), 1.0 / s);
            break;
        case PredSpace::Eps:
            out.value = scale(lincomb(1.0, z, -a, x), 1.0 / s);
            break;
    }
    return out;
}

Tensor v_to_x_per_example(const Tensor& v, const Tensor& z, const std::vector<NoiseLevel>& levels) {
    if (v.shape() != z.shape()) {
        throw DimensionError("v_to_x: v " + shape_str(v.shape()) + " vs z " + shape_str(z.shape()));
    }
    std::vector<double> alphas(levels.size()), sigmas(levels.size());
    for (size_t i = 0; i < levels.size(); ++i) {
        alphas[i] = levels[i].alpha;
        sigmas[i] = levels[i].sigma;
    }
    return sub(scale_per_example(z, alphas), scale_per_example(v, sigmas));
}

std::pair<Tensor, Tensor> forward_sample(const Tensor& x, const NoiseLevel& level, Rng& rng) {
    auto eps = Tensor::zeros(x.shape());
    auto ed = eps.mutable_data();
    rng.fill_normal(ed.begin(), ed.end());
    return {lincomb(level.alpha, x, level.sigma, eps), eps};
}

std::pair<Tensor, Tensor> forward_sample(const Tensor& x, const std::vector<NoiseLevel>& levels,
                                         Rng& rng) {
    if (x.rank() < 1 || x.dim(0) != static_cast<int64_t>(levels.size())) {
        throw DimensionError("forward_sample: batch " + shape_str(x.shape()) + " vs " +
                             std::to_string(levels.size()) + " levels");
    }
    auto eps = Tensor::zeros(x.shape());
    auto ed = eps.mutable_data();
    rng.fill_normal(ed.begin(), ed.end());
    std::vector<double> alphas(levels.size()), sigmas(levels.size());
    for (size_t i = 0; i < levels.size(); ++i) {
        alphas[i] = levels[i].alpha;
        sigmas[i] = levels[i].sigma;
    }
    return {add(scale_per_example(x, alphas), scale_per_example(eps, sigmas)), eps};
}

PosteriorParams posterior_params(const NoiseLevel& level_s, const NoiseLevel& level_t,
                                 const Tensor& z_t, const Tensor& x_hat) {
    if (!(level_s.lambda > level_t.lambda)) {
        throw OrderingError("posterior_params: requires lambda_s > lambda_t (got " +
                            std::to_string(level_s.lambda) + " vs " +
                            std::to_string(level_t.lambda) + ")");
    }
    if (z_t.shape() != x_hat.shape()) {
        throw DimensionError("posterior_params: z " + shape_str(z_t.shape()) + " vs x_hat " +
                             shape_str(x_hat.shape()));
    }
    const double a_ts = level_t.alpha / level_s.alpha;
    const double s2_s = level_s.sigma * level_s.sigma;
    const double s2_t = level_t.sigma * level_t.sigma;
    const double s2_ts = s2_t - a_ts * a_ts * s2_s;
    const double s2_small = 1.0 / (1.0 / s2_s + a_ts * a_ts / s2_ts);
    PosteriorParams out;
    out.sigma_small = std::sqrt(s2_small);
    out.sigma_large = std::sqrt(s2_ts);
    out.mu = lincomb(s2_small * a_ts / s2_ts, z_t, s2_small * level_s.alpha / s2_s, x_hat);
    if (!std::isfinite(out.sigma_small) || !std::isfinite(out.sigma_large)) {
        throw NumericError("posterior_params: non-finite std (levels too close?)");
    }
    return out;
}

Tensor ancestral_step(const Tensor& z_t, const Tensor& x_hat, const NoiseLevel& level_s,
                      const NoiseLevel& level_t, double gamma, Rng* rng) {
    PosteriorParams p = posterior_params(level_s, level_t, z_t, x_hat);
    if (rng == nullptr) return p.mu;
    const double std_dev = std::pow(p.sigma_small, gamma) * std::pow(p.sigma_large, 1.0 - gamma);
    auto noise = Tensor::zeros(z_t.shape());
    auto nd = noise.mutable_data();
    rng->fill_normal(nd.begin(), nd.end());
    return add(p.mu, scale(noise, std_dev));
}

Prediction guided_prediction(const Prediction& cond, const Prediction& uncond, double g,
                             const GuidanceInterval& interval, const NoiseLevel& level) {
    if (g < 0.0) throw ConfigError("guided_prediction: guidance scale must be >= 0");
    if (g == 0.0 || level.lambda < interval.lambda_lo || level.lambda > interval.lambda_hi) {
        return cond;
    }
    if (cond.space != uncond.space) {
        throw ConfigError(std::string("guided_prediction: space mismatch (") +
                          pred_space_name(cond.space) + " vs " + pred_space_name(uncond.space) +
                          ")");
    }
    if (cond.value.shape() != uncond.value.shape()) {
        throw DimensionError("guided_prediction: shape mismatch");
    }
    Prediction out;
    out.space = cond.space;
    out.level = cond.level;
    out.value = add(cond.value, scale(sub(cond.value, uncond.value), g));
    return out;
}

void SamplerConfig::validate() const {
    if (num_steps < 1) throw ConfigError("sampler: num_steps must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("sampler: gamma must be in [0,1]");
    if (guidance_scale < 0.0) throw ConfigError("sampler: guidance must be >= 0");
    if (!(guidance_interval.lambda_lo <= guidance_interval.lambda_hi)) {
        throw ConfigError("sampler: guidance interval must have lo <= hi");
    }
    if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("sampler: t_min must be in (0,1)");
}

Tensor sample(const DenoiseFn& model, const LogSnrSchedule& sched, const SamplerConfig& cfg,
              const std::vector<int64_t>& labels, int64_t batch, const Shape& example_shape) {
    cfg.validate();
    if (!labels.empty() && static_cast<int64_t>(labels.size()) != batch) {
        throw DimensionError("sample: labels size vs batch");
    }
    Shape full_shape;
    full_shape.push_back(batch);
    full_shape.insert(full_shape.end(), example_shape.begin(), example_shape.end());
    const int64_t per = numel(Shape(example_shape));

    // per-example streams: (seed, example index); stream 0 is reserved for
    // chain-independent uses so example streams start at 1
    std::vector<Rng> streams;
    streams.reserve(static_cast<size_t>(batch));
    for (int64_t i = 0; i < batch; ++i) streams.emplace_back(cfg.seed, static_cast<uint64_t>(i) + 1);

    auto draw_noise = [&](Tensor& out) {
        auto d = out.mutable_data();
        for (int64_t i = 0; i < batch; ++i) {
            auto* p = d.data() + i * per;
            streams[static_cast<size_t>(i)].fill_normal(p, p + per);
        }
    };

    Tensor z = Tensor::zeros(full_shape);
    draw_noise(z);

    const std::vector<int64_t>* cond_labels = labels.empty() ? nullptr : &labels;
    const double t_hi = 1.0, t_lo = cfg.t_min;
    auto t_at = [&](int i) {
        return t_hi + (t_lo - t_hi) * static_cast<double>(i) / static_cast<double>(cfg.num_steps);
    };

    for (int i = 0; i < cfg.num_steps; ++i) {
        const NoiseLevel level_t = sched.to_noise_level(t_at(i));
        const NoiseLevel level_s = sched.to_noise_level(t_at(i + 1));

        Prediction pred = model(z, level_t, cond_labels);
        if (pred.value.shape() != z.shape()) {
            throw DimensionError("sample: model output " + shape_str(pred.value.shape()) +
                                 " vs z " + shape_str(z.shape()));
        }
        const bool guided = cfg.guidance_scale > 0.0 && cond_labels != nullptr &&
                            level_t.lambda >= cfg.guidance_interval.lambda_lo &&
                            level_t.lambda <= cfg.guidance_interval.lambda_hi;
        if (guided) {
            Prediction uncond = model(z, level_t, nullptr);
            Prediction c = convert(pred, z, cfg.guidance_space);
            Prediction u = convert(uncond, z, cfg.guidance_space);
            pred = guided_prediction(c, u, cfg.guidance_scale, cfg.guidance_interval, level_t);
        }
        Tensor x_hat = convert(pred, z, PredSpace::X).value;
        if (cfg.clip_x == ClipX::Static) {
            auto d = x_hat.mutable_data();
            for (auto& v : d) v = std::min(1.0, std::max(-1.0, v));
        }

        PosteriorParams post = posterior_params(level_s, level_t, z, x_hat);
        if (i + 1 == cfg.num_steps) {
            z = post.mu;  // final step: posterior mean, no added noise
        } else {
            const double std_dev =
                std::pow(post.sigma_small, cfg.gamma) * std::pow(post.sigma_large, 1.0 - cfg.gamma);
            Tensor noise = Tensor::zeros(full_shape);
            draw_noise(noise);
            z = add(post.mu, scale(noise, std_dev));
        }
    }
    return z;
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
        throw DimensionError("write_ppm: expected [H, W, 1|3], got " + shape_str(image.shape()));
    }
    const int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) throw IoError("write_ppm: cannot open " + tmp);
    std::fprintf(f, "P6\n%lld %lld\n255\n", static_cast<long long>(w), static_cast<long long>(h));
    auto d = image.data();
    std::vector<unsigned char> row(static_cast<size_t>(w * 3));
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t s = 0; s < w; ++s) {
            for (int64_t k = 0; k < 3; ++k) {
                const double v = d[(r * w + s) * c + (c == 3 ? k : 0)];
                const double u = std::min(1.0, std::max(-1.0, v));
                row[static_cast<size_t>(s * 3 + k)] =
                    static_cast<unsigned char>(std::lround((u + 1.0) * 0.5 * 255.0));
            }
        }
        std::fwrite(row.data(), 1, row.size(), f);
    }
    const bool ok = std::fflush(f) == 0;
    std::fclose(f);
    if (!ok || std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("write_ppm: failed writing " + path);
    }
}

}  // namespace sid
