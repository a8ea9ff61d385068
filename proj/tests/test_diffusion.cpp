#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sid/diffusion.hpp"
#include "sid/trainer.hpp"
#include "testutil.hpp"

using namespace sid;

TEST_CASE("prediction conversions round-trip at random levels") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const NoiseLevel lv = level_from_logsnr(rng.uniform(-12.0, 12.0));
        auto z = Tensor::randn({2, 3}, rng);
        Prediction x{PredSpace::X, Tensor::randn({2, 3}, rng), lv};
        auto x2 = convert(convert(x, z, PredSpace::V), z, PredSpace::X);
        CHECK(sid::test::max_abs_diff(x.value.data(), x2.value.data()) < 1e-10);
        auto x3 = convert(convert(x, z, PredSpace::Eps), z, PredSpace::X);
        CHECK(sid::test::max_abs_diff(x.value.data(), x3.value.data()) < 1e-10);
    }
}

TEST_CASE("v_to_x matches the closed form per example") {
    Rng rng(5);
    std::vector<NoiseLevel> levels{level_from_logsnr(-1.0), level_from_logsnr(2.5)};
    auto v = Tensor::randn({2, 4}, rng);
    auto z = Tensor::randn({2, 4}, rng);
    auto x = v_to_x_per_example(v, z, levels);
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 4; ++j) {
            const auto& lv = levels[static_cast<size_t>(i)];
            const double want = lv.alpha * z.data()[i * 4 + j] - lv.sigma * v.data()[i * 4 + j];
            CHECK(x.data()[i * 4 + j] == doctest::Approx(want).epsilon(1e-14));
        }
    }
}

TEST_CASE("forward_sample limits and Monte Carlo mean") {
    Rng rng(7);
    auto x = Tensor::randn({4, 2}, rng);

    // lambda -> +inf: z == x (alpha -> 1, sigma -> 0)
    auto [z_hi, eps_hi] = forward_sample(x, level_from_logsnr(40.0), rng);
    (void)eps_hi;
    CHECK(sid::test::max_abs_diff(z_hi.data(), x.data()) < 1e-8);

    // lambda = 0, x = 0: z = eps / sqrt(2), bitwise
    auto zero = Tensor::zeros({4, 2});
    auto [z0, eps0] = forward_sample(zero, level_from_logsnr(0.0), rng);
    for (size_t i = 0; i < z0.data().size(); ++i) {
        CHECK(z0.data()[i] == level_from_logsnr(0.0).sigma * eps0.data()[i]);
    }

    // empirical mean of z at lambda=0 with fixed x approaches alpha x
    const int n = 100000;
    auto xf = Tensor::full({1, 1}, 0.7);
    const NoiseLevel lv = level_from_logsnr(0.0);
    double acc = 0.0;
    Rng mc(11);
    for (int i = 0; i < n; ++i) {
        auto [z, e] = forward_sample(xf, lv, mc);
        (void)e;
        acc += z.data()[0];
    }
    const double mean = acc / n;
    const double tol = 3.0 * lv.sigma / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - lv.alpha * 0.7) < tol);
}

TEST_CASE("posterior params: ordering error, degenerate step, hand-derived numbers") {
    auto z = Tensor::from_data({1}, {1.0});
    auto xh = Tensor::from_data({1}, {1.0});
    CHECK_THROWS_AS(posterior_params(level_from_logsnr(-1.0), level_from_logsnr(1.0), z, xh),
                    OrderingError);

    // s -> t: mu -> z_t, sigma_small -> 0
    {
        auto p = posterior_params(level_from_logsnr(1.0 + 1e-9), level_from_logsnr(1.0),
                                  Tensor::from_data({1}, {0.37}), Tensor::from_data({1}, {-0.9}));
        CHECK(p.mu.data()[0] == doctest::Approx(0.37).epsilon(1e-6));
        CHECK(p.sigma_small < 1e-4);
    }

    // lambda_t = 0, lambda_s = 2: frozen from the independent scalar
    // derivation below
    const NoiseLevel ls = level_from_logsnr(2.0);
    const NoiseLevel lt = level_from_logsnr(0.0);
    const double a_ts = lt.alpha / ls.alpha;
    const double s2_ts = lt.sigma * lt.sigma - a_ts * a_ts * ls.sigma * ls.sigma;
    const double s2_small =
        1.0 / (1.0 / (ls.sigma * ls.sigma) + a_ts * a_ts / s2_ts);
    auto p = posterior_params(ls, lt, Tensor::from_data({1}, {0.3}),
                              Tensor::from_data({1}, {0.1}));
    CHECK(p.sigma_large * p.sigma_large == doctest::Approx(s2_ts).epsilon(1e-12));
    CHECK(p.sigma_small * p.sigma_small == doctest::Approx(s2_small).epsilon(1e-12));
    // closed form: alpha_ts^2 sigma_s^2 = 0.5 e^-2, so s2_ts = 0.5 (1 - e^-2)
    CHECK(s2_ts == doctest::Approx(0.5 * (1.0 - std::exp(-2.0))).epsilon(1e-14));
    CHECK(s2_small == doctest::Approx(0.10307056).epsilon(1e-7));
    // mu coefficients: linearity probe z = x_hat = 1
    auto p1 = posterior_params(ls, lt, Tensor::from_data({1}, {1.0}),
                               Tensor::from_data({1}, {1.0}));
    const double want_mu = s2_small * (a_ts / s2_ts + ls.alpha / (ls.sigma * ls.sigma));
    CHECK(p1.mu.data()[0] == doctest::Approx(want_mu).epsilon(1e-12));
}

TEST_CASE("posterior matches the numerically normalized product of Gaussians") {
    // brute force: q(z_s | z_t, x) ~ N(z_t; a_ts z_s, s2_ts) N(z_s; alpha_s x, sigma_s^2)
    const NoiseLevel ls = level_from_logsnr(1.3);
    const NoiseLevel lt = level_from_logsnr(-0.8);
    const double zt = 0.42, x = -0.35;
    auto p = posterior_params(ls, lt, Tensor::from_data({1}, {zt}), Tensor::from_data({1}, {x}));

    const double a_ts = lt.alpha / ls.alpha;
    const double s2_ts = lt.sigma * lt.sigma - a_ts * a_ts * ls.sigma * ls.sigma;
    const int n = 200001;
    const double lo = p.mu.data()[0] - 8.0 * p.sigma_small;
    const double hi = p.mu.data()[0] + 8.0 * p.sigma_small;
    const double dz = (hi - lo) / (n - 1);
    double mass = 0.0, mean = 0.0, m2 = 0.0, gauss_mass = 0.0;
    for (int i = 0; i < n; ++i) {
        const double zs = lo + i * dz;
        const double d1 = zt - a_ts * zs;
        const double d2 = zs - ls.alpha * x;
        double f = std::exp(-0.5 * d1 * d1 / s2_ts - 0.5 * d2 * d2 / (ls.sigma * ls.sigma));
        const double g = std::exp(-0.5 * std::pow((zs - p.mu.data()[0]) / p.sigma_small, 2)) /
                         (p.sigma_small * std::sqrt(2.0 * M_PI));
        const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        mass += w * f;
        mean += w * f * zs;
        m2 += w * f * zs * zs;
        gauss_mass += w * g * dz;
    }
    mean /= mass;
    m2 /= mass;
    const double var = m2 - mean * mean;
    CHECK(std::abs(gauss_mass - 1.0) < 1e-6);  // N(mu, sigma_small) integrates to 1
    CHECK(mean == doctest::Approx(p.mu.data()[0]).epsilon(1e-8));
    CHECK(std::sqrt(var) == doctest::Approx(p.sigma_small).epsilon(1e-6));
}

TEST_CASE("ancestral step: gamma endpoints and no-noise final step") {
    const NoiseLevel ls = level_from_logsnr(2.0);
    const NoiseLevel lt = level_from_logsnr(0.0);
    auto z = Tensor::from_data({3}, {0.3, -0.1, 0.8});
    auto xh = Tensor::from_data({3}, {0.2, 0.0, -0.4});
    auto p = posterior_params(ls, lt, z, xh);

    for (double gamma : {0.0, 0.3, 1.0}) {
        Rng r1(99), r2(99);
        auto zs = ancestral_step(z, xh, ls, lt, gamma, &r1);
        const double std_dev =
            std::pow(p.sigma_small, gamma) * std::pow(p.sigma_large, 1.0 - gamma);
        for (size_t i = 0; i < 3; ++i) {
            const double want = p.mu.data()[i] + std_dev * r2.normal();
            CHECK(zs.data()[i] == doctest::Approx(want).epsilon(1e-14));
        }
    }
    auto mu_only = ancestral_step(z, xh, ls, lt, 0.3, nullptr);
    CHECK(sid::test::max_abs_diff(mu_only.data(), p.mu.data()) == 0.0);
}

TEST_CASE("guided prediction: convention, gating, forced arithmetic") {
    const NoiseLevel inside = level_from_logsnr(0.0);
    const NoiseLevel outside = level_from_logsnr(7.0);
    GuidanceInterval gi{-3.0, 5.0};
    Prediction cond{PredSpace::X, Tensor::from_data({1}, {2.0}), inside};
    Prediction uncond{PredSpace::X, Tensor::from_data({1}, {1.0}), inside};

    CHECK(guided_prediction(cond, uncond, 0.0, gi, inside).value.data()[0] == 2.0);
    CHECK(guided_prediction(cond, uncond, 3.0, gi, outside).value.data()[0] == 2.0);
    CHECK(guided_prediction(cond, uncond, 1.0, gi, inside).value.data()[0] ==
          doctest::Approx(3.0));

    Prediction bad{PredSpace::V, Tensor::from_data({1}, {1.0}), inside};
    CHECK_THROWS_AS(guided_prediction(cond, bad, 1.0, gi, inside), ConfigError);
}

TEST_CASE("sampler determinism and the single-step degenerate chain") {
    auto sched = LogSnrSchedule::cosine(-10, 10);
    SamplerConfig cfg;
    cfg.num_steps = 16;
    cfg.seed = 42;
    cfg.clip_x = ClipX::None;
    auto model = gaussian_data_denoiser();

    auto a = sample(model, sched, cfg, {}, 8, {1, 1, 1});
    auto b = sample(model, sched, cfg, {}, 8, {1, 1, 1});
    CHECK(sid::test::max_abs_diff(a.data(), b.data()) == 0.0);

    // one step: the output is the posterior mean at lambda_max, which equals
    // clip(x_hat(z_1)) up to the alpha saturation at the endpoint
    SamplerConfig one = cfg;
    one.num_steps = 1;
    one.clip_x = ClipX::Static;
    auto out = sample(model, sched, one, {}, 4, {1, 1, 1});
    Rng streams0(one.seed, 1);
    const NoiseLevel l1 = sched.to_noise_level(1.0);
    // reconstruct example 0's chain by hand
    const double z1 = streams0.normal();
    double xh = std::min(1.0, std::max(-1.0, l1.alpha * z1));
    CHECK(out.data()[0] == doctest::Approx(xh).epsilon(1e-4));
}

TEST_CASE("marginal consistency: intermediate z keeps unit variance") {
    // with the Gaussian-data oracle the forward marginal is N(0,1) at every
    // level, so the chain's intermediate states must stay near unit variance
    auto sched = LogSnrSchedule::cosine(-10, 10);
    SamplerConfig cfg;
    cfg.num_steps = 128;
    cfg.seed = 13;
    cfg.clip_x = ClipX::None;
    const int64_t n = 20000;

    auto oracle = gaussian_data_denoiser();
    int step = 0;
    double worst = 0.0;
    DenoiseFn instrumented = [&](const Tensor& z, const NoiseLevel& level,
                                 const std::vector<int64_t>* labels) {
        if (step % 16 == 0) {
            double mean = 0.0, m2 = 0.0;
            for (double v : z.data()) mean += v;
            mean /= static_cast<double>(z.numel());
            for (double v : z.data()) m2 += (v - mean) * (v - mean);
            const double var = m2 / static_cast<double>(z.numel() - 1);
            worst = std::max(worst, std::abs(var - 1.0));
        }
        ++step;
        return oracle(z, level, labels);
    };
    sample(instrumented, sched, cfg, {}, n, {1, 1, 1});
    // 3 sigma of the variance estimator (~0.03) plus the small gamma bias
    CHECK(worst < 0.05);
}

TEST_CASE("write_ppm emits a valid P6 header and payload") {
    Rng rng(17);
    auto img = Tensor::randn({5, 7, 3}, rng, 0.5);
    const std::string path = "/tmp/sid_test_img.ppm";
    write_ppm(path, img);
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    char magic[3] = {0};
    int w, h, maxv;
    REQUIRE(std::fscanf(f, "%2s %d %d %d", magic, &w, &h, &maxv) == 4);
    CHECK(std::string(magic) == "P6");
    CHECK(w == 7);
    CHECK(h == 5);
    CHECK(maxv == 255);
    std::fgetc(f);
    std::vector<unsigned char> payload(5 * 7 * 3);
    CHECK(std::fread(payload.data(), 1, payload.size(), f) == payload.size());
    std::fclose(f);
    std::remove(path.c_str());
}
