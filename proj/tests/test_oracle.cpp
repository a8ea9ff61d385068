#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sid/oracle.hpp"
#include "sid/quadrature.hpp"
#include "sid/weighting.hpp"

using namespace sid;

TEST_CASE("quadrature rules integrate known functions") {
    // Gauss-Legendre: x^4 over [-1,1] = 2/5; odd powers vanish
    quad::Rule gl = quad::gauss_legendre(8);
    double acc = 0.0, odd = 0.0;
    for (size_t i = 0; i < gl.nodes.size(); ++i) {
        acc += gl.weights[i] * std::pow(gl.nodes[i], 4);
        odd += gl.weights[i] * std::pow(gl.nodes[i], 5);
    }
    CHECK(acc == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(std::abs(odd) < 1e-14);

    // mapped rule: integral of x^2 over [0,3] = 9
    quad::Rule m = quad::gauss_legendre(16, 0.0, 3.0);
    acc = 0.0;
    for (size_t i = 0; i < m.nodes.size(); ++i) acc += m.weights[i] * m.nodes[i] * m.nodes[i];
    CHECK(acc == doctest::Approx(9.0).epsilon(1e-12));

    // Gauss-Hermite: E[eps^2] = 1 and E[eps^4] = 3 under the standard normal
    quad::Rule gh = quad::gauss_hermite(31);
    CHECK(quad::expect_standard_normal(gh, [](double e) { return e * e; }) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(quad::expect_standard_normal(gh, [](double e) { return e * e * e * e; }) ==
          doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("grid embedding spans [-1,1] with equispaced points") {
    GridData g1(1);
    REQUIRE(g1.support.size() == 2);
    CHECK(g1.support[0] == -1.0);
    CHECK(g1.support[1] == 1.0);
    GridData g3(3);
    REQUIRE(g3.support.size() == 8);
    CHECK(g3.support[0] == -1.0);
    CHECK(g3.support[7] == 1.0);
    CHECK(g3.support[1] - g3.support[0] == doctest::Approx(2.0 / 7.0));
    CHECK_THROWS_AS(GridData(0), ConfigError);
}

TEST_CASE("optimal denoiser closed forms") {
    GridData g1(1);
    const NoiseLevel lv = level_from_logsnr(0.5);
    for (double z : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
        const double want = std::tanh(lv.alpha * z / (lv.sigma * lv.sigma));
        CHECK(optimal_denoiser(g1, z, lv) == doctest::Approx(want).epsilon(1e-12));
    }
    // symmetric support at z=0
    GridData g3(3);
    CHECK(std::abs(optimal_denoiser(g3, 0.0, lv)) < 1e-14);

    // n=2, lambda=0, z=0.5: direct four-term softmax sum
    GridData g2(2);
    const NoiseLevel l0 = level_from_logsnr(0.0);
    double num = 0.0, den = 0.0;
    for (double xi : {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0}) {
        const double d = 0.5 - l0.alpha * xi;
        const double p = std::exp(-d * d / (2.0 * l0.sigma * l0.sigma));
        num += p * xi;
        den += p;
    }
    CHECK(optimal_denoiser(g2, 0.5, l0) == doctest::Approx(num / den).epsilon(1e-12));

    // posterior mean stays inside the support
    for (double z : {-50.0, 50.0}) {
        const double v = optimal_denoiser(g3, z, lv);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("optimal denoiser minimizes the quadrature mse (n=1, lambda=0)") {
    GridData g1(1);
    const NoiseLevel lv = level_from_logsnr(0.0);
    quad::Rule gh = quad::gauss_hermite(127);
    auto mse_with = [&](double delta) {
        double acc = 0.0;
        for (double x : g1.support) {
            acc += quad::expect_standard_normal(gh, [&](double eps) {
                const double z = lv.alpha * x + lv.sigma * eps;
                const double u = lv.alpha * z / (lv.sigma * lv.sigma);
                const double t = std::tanh(u);
                const double xh = t + delta * (1.0 - t * t);  // perturb along tanh'
                return (x - xh) * (x - xh);
            });
        }
        return acc / 2.0;
    };
    const double base = mse_with(0.0);
    CHECK(mse_with(1e-3) > base);
    CHECK(mse_with(-1e-3) > base);
}

TEST_CASE("eps-mse at n=1, lambda=0: positive, and GH matches brute-force trapezoid") {
    GridData g1(1);
    OracleOptions opts;
    const double gh_value = eps_mse_curve(g1, {0.0}, opts).values[0];
    CHECK(gh_value > 0.0);

    // independent route: trapezoid over eps in [-8, 8] with 1e5 points
    const NoiseLevel lv = level_from_logsnr(0.0);
    const int n = 100000;
    double acc = 0.0;
    for (int xi = 0; xi < 2; ++xi) {
        const double x = g1.support[static_cast<size_t>(xi)];
        double inner = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double eps = -8.0 + 16.0 * i / n;
            const double z = lv.alpha * x + lv.sigma * eps;
            const double xh = optimal_denoiser(g1, z, lv);
            const double eh = (z - lv.alpha * xh) / lv.sigma;
            const double phi = std::exp(-0.5 * eps * eps) / std::sqrt(2.0 * M_PI);
            const double f = phi * (eps - eh) * (eps - eh);
            inner += (i == 0 || i == n) ? 0.5 * f : f;
        }
        acc += inner * (16.0 / n);
    }
    acc /= 2.0;
    CHECK(gh_value == doctest::Approx(acc).epsilon(1e-6));
}

TEST_CASE("eps-mse tails vanish and quadrature doubling is stable") {
    OracleOptions opts;
    opts.convergence_tol = 1e-8;
    for (int bits : {1, 4, 8}) {
        GridData g(bits);
        LossCurve c = eps_mse_curve(g, {-30.0, 30.0}, opts);
        CHECK(c.values[0] < 1e-4);
        CHECK(c.values[1] < 1e-4);
    }
}

TEST_CASE("eps-mse equals exp(lambda) * x-mse, each by its own quadrature") {
    GridData g(4);
    OracleOptions opts;
    const std::vector<double> lambdas{-6.0, -2.0, 0.0, 2.0, 6.0, 10.0};
    LossCurve eps = eps_mse_curve(g, lambdas, opts);
    LossCurve x = x_mse_curve(g, lambdas, opts);
    for (size_t i = 0; i < lambdas.size(); ++i) {
        const double want = std::exp(lambdas[i]) * x.values[i];
        CHECK(std::abs(eps.values[i] - want) / (std::abs(want) + 1e-12) < 1e-8);
    }
}

TEST_CASE("weighted curve: unit weight, sigmoid midpoint, unimodality") {
    GridData g(8);
    OracleOptions opts;
    opts.check_convergence = false;  // 141 grid points; convergence covered above
    std::vector<double> lambdas;
    for (int i = 0; i <= 140; ++i) lambdas.push_back(-10.0 + 35.0 * i / 140.0);

    LossCurve plain = eps_mse_curve(g, lambdas, opts);
    LossCurve unit = weighted_curve(g, lambdas, [](double) { return 1.0; }, opts);
    for (size_t i = 0; i < lambdas.size(); ++i) CHECK(unit.values[i] == plain.values[i]);

    auto w = [](double lam) { return sigmoid(10.7 - lam); };
    LossCurve weighted = weighted_curve(g, lambdas, w, opts);
    // at lambda = 10.7 the weight is exactly one half
    LossCurve at = weighted_curve(g, {10.7}, w, opts);
    LossCurve at_plain = eps_mse_curve(g, {10.7}, opts);
    CHECK(at.values[0] == doctest::Approx(0.5 * at_plain.values[0]).epsilon(1e-12));

    // single interior maximum over the grid
    size_t argmax = 0;
    for (size_t i = 0; i < weighted.values.size(); ++i) {
        if (weighted.values[i] > weighted.values[argmax]) argmax = i;
    }
    CHECK(argmax > 0);
    CHECK(argmax + 1 < weighted.values.size());
    for (size_t i = 0; i + 1 < weighted.values.size(); ++i) {
        if (i < argmax) {
            CHECK(weighted.values[i + 1] >= weighted.values[i] - 1e-12);
        } else {
            CHECK(weighted.values[i + 1] <= weighted.values[i] + 1e-12);
        }
    }
}

TEST_CASE("mixture curves: degenerate, normalization invariance, proximity report") {
    OracleOptions opts;
    opts.check_convergence = false;
    std::vector<double> lambdas;
    for (int i = 0; i <= 60; ++i) lambdas.push_back(-10.0 + 35.0 * i / 60.0);

    PrecisionMixture single{{{5, 2.0}}};
    LossCurve ms = mixture_curve(single, lambdas, opts);
    LossCurve direct = eps_mse_curve(GridData(5), lambdas, opts);
    for (size_t i = 0; i < lambdas.size(); ++i) {
        CHECK(ms.values[i] == doctest::Approx(direct.values[i]).epsilon(1e-12));
    }

    PrecisionMixture mix{{{8, 1.0}, {7, 4.0}, {6, 4.0}, {5, 6.0}}};
    PrecisionMixture mix_scaled{{{8, 3.0}, {7, 12.0}, {6, 12.0}, {5, 18.0}}};
    LossCurve a = mixture_curve(mix, lambdas, opts);
    LossCurve b = mixture_curve(mix_scaled, lambdas, opts);
    for (size_t i = 0; i < lambdas.size(); ++i) {
        CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
    }

    // proximity of the mixture to the sigma(10.7 - lambda)-weighted 8-bit
    // curve is reported, not asserted
    LossCurve w8 = weighted_curve(GridData(8), lambdas,
                                  [](double lam) { return sigmoid(10.7 - lam); }, opts);
    double l2 = 0.0, ref = 0.0;
    for (size_t i = 0; i < lambdas.size(); ++i) {
        l2 += (a.values[i] - w8.values[i]) * (a.values[i] - w8.values[i]);
        ref += w8.values[i] * w8.values[i];
    }
    MESSAGE("mixture-vs-weighted L2 distance: " << std::sqrt(l2) << " (curve norm "
                                                << std::sqrt(ref) << ")");
    CHECK_THROWS_AS(mixture_curve(PrecisionMixture{}, lambdas, opts), ConfigError);
}
