#include "sid/trainer.hpp"

#include <cmath>

namespace sid {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup_steps > max_steps) throw ConfigError("train: warmup_steps must be <= max_steps");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay in [0,1)");
    if (weight_decay != 0.0) throw ConfigError("train: weight decay is not supported");
    if (!(label_drop_prob >= 0.0 && label_drop_prob <= 1.0)) {
        throw ConfigError("train: label_drop_prob in [0,1]");
    }
    if (learning_rate < 0.0) throw ConfigError("train: learning_rate must be >= 0");
}

UViTConfig default_toy_model_config(const ToyDataset& data) {
    UViTConfig m;
    m.image_res = data.resolution();
    m.in_channels = data.channels();
    m.num_classes = data.num_classes();
    if (data.resolution() == 1) {
        // single-level net on 1x1 maps
        m.patch_size = 1;
        m.channels = {32};
        m.num_down_blocks = {};
        m.num_up_blocks = {};
        m.num_mid_blocks = 4;
        m.block_type = {BlockKind::ResBlock};
        m.block_dropout = {0.0};
        m.temb_dim = 64;
    } else {
        m.patch_size = 2;
        m.channels = {16, 32};
        m.num_down_blocks = {2};
        m.num_up_blocks = {2};
        m.num_mid_blocks = 2;
        m.block_type = {BlockKind::ResBlock, BlockKind::Transformer};
        m.block_dropout = {0.0, 0.0};
        m.head_dim = 16;
        m.temb_dim = 64;
    }
    return m;
}

TrainState init_train(const TrainConfig& cfg, const UViTConfig& model_cfg) {
    cfg.validate();
    model_cfg.validate();
    TrainState st;
    st.cfg = cfg;
    st.model_cfg = model_cfg;
    Rng rng(cfg.seed, 7);
    st.model = UViT::build(model_cfg, rng);
    for (const auto& [name, t] : st.model.named_params()) {
        st.ema.emplace_back(name, Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}));
        st.adam_m.emplace_back(t.data().size(), 0.0);
        st.adam_v.emplace_back(t.data().size(), 0.0);
    }
    return st;
}

namespace {

// fixed stream layout per step so replays are bit-identical
constexpr uint64_t kDataStream = 1;
constexpr uint64_t kDiffusionStream = 2;
constexpr uint64_t kDropoutStream = 3;

uint64_t step_stream(uint64_t step, uint64_t which) { return 16 + step * 4 + which; }

}  // namespace

StepStats train_step(TrainState& state, const Tensor& images, const std::vector<int64_t>& labels) {
    const TrainConfig& cfg = state.cfg;
    const int64_t n = images.dim(0);
    Rng diff_rng(cfg.seed, step_stream(static_cast<uint64_t>(state.step), kDiffusionStream));
    Rng drop_rng(cfg.seed, step_stream(static_cast<uint64_t>(state.step), kDropoutStream));

    // per-example times, uniform on (0,1)
    std::vector<double> t(static_cast<size_t>(n));
    for (auto& ti : t) ti = std::min(std::max(diff_rng.uniform(), 1e-12), 1.0 - 1e-12);
    std::vector<NoiseLevel> levels(static_cast<size_t>(n));
    for (size_t i = 0; i < t.size(); ++i) levels[i] = cfg.schedule.to_noise_level(t[i]);

    // classifier-free guidance needs an unconditional branch: drop labels
    std::vector<int64_t> used_labels = labels;
    if (state.model_cfg.num_classes > 0) {
        for (auto& l : used_labels) {
            if (diff_rng.uniform() < cfg.label_drop_prob) l = -1;
        }
    }

    auto [z, eps] = forward_sample(images, levels, diff_rng);
    (void)eps;

    for (auto& [name, p] : state.model.named_params()) p.zero_grad();

    const double bias = cfg.weighting.bias_at_step(state.step);
    double loss_value = 0.0;
    {
        Tape tape;
        Prediction pred = state.model.forward(z, levels, used_labels, &drop_rng);
        Tensor x_hat = v_to_x_per_example(pred.value, z, levels);
        Tensor per_example;
        switch (cfg.weighting.kind) {
            case WeightingKind::Sigmoid:
                per_example = sigmoid_loss(images, x_hat, cfg.schedule, t, bias);
                break;
            case WeightingKind::Power: {
                per_example =
                    power_loss(images, x_hat, cfg.schedule, t, bias, cfg.weighting.power_levels);
                // normalized by element count so levels=0 is comparable to the
                // sigmoid loss (mean-vs-sum reduction)
                const double m = static_cast<double>(numel(images.shape()) / n);
                per_example = scale(per_example, 1.0 / m);
                break;
            }
            default:
                throw ConfigError("train: weighting kind not trainable (use sigmoid or power)");
        }
        Tensor loss = mean_all(per_example);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            double lam_lo = 1e300, lam_hi = -1e300;
            for (const auto& lv : levels) {
                lam_lo = std::min(lam_lo, lv.lambda);
                lam_hi = std::max(lam_hi, lv.lambda);
            }
            throw NumericError("train: non-finite loss at step " + std::to_string(state.step) +
                               " (lambda in [" + std::to_string(lam_lo) + ", " +
                               std::to_string(lam_hi) + "])");
        }
        tape.backward(loss);
    }

    // Adam with bias correction and linear warmup
    const double warm =
        cfg.warmup_steps > 0
            ? std::min(1.0, static_cast<double>(state.step + 1) / static_cast<double>(cfg.warmup_steps))
            : 1.0;
    const double lr = cfg.learning_rate * warm;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step + 1));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step + 1));

    double grad_sq = 0.0;
    auto& params = state.model.named_params();
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi].second;
        auto g = p.grad();
        auto d = p.mutable_data();
        auto& m = state.adam_m[pi];
        auto& v = state.adam_v[pi];
        auto ema = state.ema[pi].second.mutable_data();
        for (size_t i = 0; i < d.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            grad_sq += gi * gi;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            d[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
            ema[i] = cfg.ema_decay * ema[i] + (1.0 - cfg.ema_decay) * d[i];
        }
    }

    StepStats stats;
    stats.step = state.step;
    stats.loss = loss_value;
    stats.grad_norm = std::sqrt(grad_sq);
    stats.lr = lr;
    stats.bias = bias;
    state.step += 1;
    return stats;
}

StepStats train_step(TrainState& state) {
    Rng data_rng(state.cfg.seed, step_stream(static_cast<uint64_t>(state.step), kDataStream));
    Tensor images;
    std::vector<int64_t> labels;
    state.cfg.dataset.sample_batch(state.cfg.batch_size, data_rng, &images, &labels);
    return train_step(state, images, labels);
}

// ---------------------------------------------------------------------------
// denoiser adapters
// ---------------------------------------------------------------------------

DenoiseFn model_denoiser(const UViT& model) {
    const int num_classes = model.config().num_classes;
    return [&model, num_classes](const Tensor& z, const NoiseLevel& level,
                                 const std::vector<int64_t>* labels) {
        const size_t n = static_cast<size_t>(z.dim(0));
        std::vector<NoiseLevel> levels(n, level);
        std::vector<int64_t> lab;
        if (num_classes > 0) {
            lab = labels != nullptr ? *labels : std::vector<int64_t>(n, -1);
        }
        return model.forward(z, levels, lab, nullptr);
    };
}

DenoiseFn model_denoiser_ema(const TrainState& state) {
    Rng rng(0);
    auto ema_model = std::make_shared<UViT>(UViT::build(state.model_cfg, rng));
    auto& params = ema_model->named_params();
    for (size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].second.mutable_data();
        auto src = state.ema[i].second.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    const int num_classes = state.model_cfg.num_classes;
    return [ema_model, num_classes](const Tensor& z, const NoiseLevel& level,
                                    const std::vector<int64_t>* labels) {
        const size_t n = static_cast<size_t>(z.dim(0));
        std::vector<NoiseLevel> levels(n, level);
        std::vector<int64_t> lab;
        if (num_classes > 0) {
            lab = labels != nullptr ? *labels : std::vector<int64_t>(n, -1);
        }
        return ema_model->forward(z, levels, lab, nullptr);
    };
}

DenoiseFn gaussian_data_denoiser() {
    return [](const Tensor& z, const NoiseLevel& level, const std::vector<int64_t>*) {
        Prediction p;
        p.space = PredSpace::X;
        p.level = level;
        p.value = scale(z, level.alpha);  // E[x|z] for x ~ N(0,1): alpha z / (alpha^2+sigma^2)
        return p;
    };
}

DenoiseFn grid_data_denoiser(int n_bits) {
    auto data = std::make_shared<GridData>(n_bits);
    return [data](const Tensor& z, const NoiseLevel& level, const std::vector<int64_t>*) {
        Prediction p;
        p.space = PredSpace::X;
        p.level = level;
        Tensor out = Tensor::zeros(z.shape());
        auto od = out.mutable_data();
        auto zd = z.data();
        for (size_t i = 0; i < zd.size(); ++i) od[i] = optimal_denoiser(*data, zd[i], level);
        p.value = out;
        return p;
    };
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

EvalMetrics eval_toy(const TrainState& state, const SamplerConfig& sampler_cfg,
                     int64_t num_samples, bool use_ema) {
    EvalMetrics out;
    out.num_samples = num_samples;
    if (num_samples <= 0) return out;  // empty budget: empty metrics, no error

    const ToyDataset& data = state.cfg.dataset;
    DenoiseFn fn = use_ema ? model_denoiser_ema(state) : model_denoiser(state.model);
    const Shape ex = data.example_shape();

    if (data.kind() == DatasetKind::TwoGaussians1d || data.kind() == DatasetKind::GridBits1d) {
        Tensor samples = sample(fn, state.cfg.schedule, sampler_cfg, {}, num_samples, ex);
        std::vector<double> gen(samples.data().begin(), samples.data().end());
        Rng rng(state.cfg.seed, 9001);
        out.wasserstein = wasserstein_1d(gen, data.sample_values(num_samples, rng));
        return out;
    }

    if (data.kind() == DatasetKind::Shapes16x16) {
        std::vector<int64_t> labels(static_cast<size_t>(num_samples));
        for (size_t i = 0; i < labels.size(); ++i) {
            labels[i] = static_cast<int64_t>(i % static_cast<size_t>(data.num_classes()));
        }
        Tensor samples = sample(fn, state.cfg.schedule, sampler_cfg, labels, num_samples, ex);

        // per-class pixel-value histograms against fresh data draws
        constexpr int kBins = 16;
        const int classes = data.num_classes();
        std::vector<double> hist_gen(static_cast<size_t>(classes * kBins), 0.0);
        std::vector<double> hist_dat(static_cast<size_t>(classes * kBins), 0.0);
        auto bin_of = [&](double v) {
            int b = static_cast<int>((v + 1.0) * 0.5 * kBins);
            return std::min(kBins - 1, std::max(0, b));
        };
        const int64_t per = numel(ex);
        for (int64_t i = 0; i < num_samples; ++i) {
            const int cls = static_cast<int>(labels[static_cast<size_t>(i)]);
            for (int64_t j = 0; j < per; ++j) {
                hist_gen[static_cast<size_t>(cls * kBins +
                                             bin_of(samples.data()[i * per + j]))] += 1.0;
            }
        }
        Rng rng(state.cfg.seed, 9002);
        Tensor ref;
        std::vector<int64_t> ref_labels;
        data.sample_batch(num_samples, rng, &ref, &ref_labels);
        for (int64_t i = 0; i < num_samples; ++i) {
            const int cls = static_cast<int>(ref_labels[static_cast<size_t>(i)]);
            for (int64_t j = 0; j < per; ++j) {
                hist_dat[static_cast<size_t>(cls * kBins + bin_of(ref.data()[i * per + j]))] += 1.0;
            }
        }
        double dist = 0.0;
        for (size_t i = 0; i < hist_gen.size(); ++i) {
            dist += std::abs(hist_gen[i] - hist_dat[i]);
        }
        out.class_histogram_dist = dist / static_cast<double>(num_samples * per);

        // guidance A/B: same seed with and without guidance
        SamplerConfig guided = sampler_cfg;
        guided.guidance_scale = sampler_cfg.guidance_scale > 0.0 ? sampler_cfg.guidance_scale : 1.0;
        SamplerConfig unguided = sampler_cfg;
        unguided.guidance_scale = 0.0;
        const int64_t ab = std::min<int64_t>(num_samples, 8);
        std::vector<int64_t> ab_labels(labels.begin(), labels.begin() + ab);
        Tensor a = sample(fn, state.cfg.schedule, guided, ab_labels, ab, ex);
        Tensor b = sample(fn, state.cfg.schedule, unguided, ab_labels, ab, ex);
        double delta = 0.0;
        for (size_t i = 0; i < a.data().size(); ++i) delta += std::abs(a.data()[i] - b.data()[i]);
        out.guidance_delta = delta / static_cast<double>(a.data().size());
        return out;
    }

    throw ConfigError("eval_toy: no metrics for this dataset kind");
}

}  // namespace sid
