#include "sid/oracle.hpp"

#include <cmath>
#include <list>

#include "sid/quadrature.hpp"

namespace sid {

GridData::GridData(int bits) : n_bits(bits) {
    if (bits < 1 || bits > 24) throw ConfigError("GridData: n_bits must be in [1, 24]");
    const int64_t count = int64_t(1) << bits;
    support.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        support[static_cast<size_t>(i)] =
            -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(count - 1);
    }
}

double optimal_denoiser(const GridData& data, double z, const NoiseLevel& level) {
    // posterior mean over the grid: softmax of -(z - alpha x_i)^2 / (2 sigma^2)
    const double inv2s2 = 1.0 / (2.0 * level.sigma * level.sigma);
    double best = -1e300;
    thread_local std::vector<double> logits;
    logits.resize(data.support.size());
    for (size_t i = 0; i < data.support.size(); ++i) {
        const double d = z - level.alpha * data.support[i];
        logits[i] = -d * d * inv2s2;
        best = std::max(best, logits[i]);
    }
    double norm = 0.0, acc = 0.0;
    for (size_t i = 0; i < data.support.size(); ++i) {
        const double p = std::exp(logits[i] - best);
        norm += p;
        acc += p * data.support[i];
    }
    return acc / norm;
}

namespace {

const quad::Rule& gh_rule(int n) {
    static std::list<std::pair<int, quad::Rule>> cache;  // stable references
    for (auto& [nodes, rule] : cache) {
        if (nodes == n) return rule;
    }
    cache.emplace_back(n, quad::gauss_hermite(n));
    return cache.back().second;
}

enum class Space { Eps, X };

double mse_at(const GridData& data, double lambda, int nodes, Space space) {
    const NoiseLevel lv = level_from_logsnr(lambda);
    const quad::Rule& gh = gh_rule(nodes);
    double acc = 0.0;
    for (double x : data.support) {
        acc += quad::expect_standard_normal(gh, [&](double eps) {
            const double z = lv.alpha * x + lv.sigma * eps;
            const double x_hat = optimal_denoiser(data, z, lv);
            if (space == Space::Eps) {
                const double eps_hat = (z - lv.alpha * x_hat) / lv.sigma;
                const double d = eps - eps_hat;
                return d * d;
            }
            const double d = x - x_hat;
            return d * d;
        });
    }
    return acc / static_cast<double>(data.support.size());
}

LossCurve curve(const GridData& data, const std::vector<double>& lambdas,
                const OracleOptions& opts, Space space) {
    LossCurve c;
    c.lambdas = lambdas;
    c.values.resize(lambdas.size());
    for (size_t i = 0; i < lambdas.size(); ++i) {
        const double v = mse_at(data, lambdas[i], opts.gh_nodes, space);
        if (opts.check_convergence) {
            const double v2 = mse_at(data, lambdas[i], 2 * opts.gh_nodes, space);
            if (std::abs(v - v2) > opts.convergence_tol) {
                throw NumericError("oracle: quadrature not converged at lambda=" +
                                   std::to_string(lambdas[i]) + " (delta=" +
                                   std::to_string(std::abs(v - v2)) + ")");
            }
        }
        c.values[i] = v;
    }
    return c;
}

}  // namespace

LossCurve eps_mse_curve(const GridData& data, const std::vector<double>& lambdas,
                        const OracleOptions& opts) {
    return curve(data, lambdas, opts, Space::Eps);
}

LossCurve x_mse_curve(const GridData& data, const std::vector<double>& lambdas,
                      const OracleOptions& opts) {
    return curve(data, lambdas, opts, Space::X);
}

LossCurve mixture_curve(const PrecisionMixture& mix, const std::vector<double>& lambdas,
                        const OracleOptions& opts) {
    if (mix.components.empty()) throw ConfigError("mixture_curve: empty mixture");
    double total = 0.0;
    for (const auto& [bits, prop] : mix.components) {
        if (prop <= 0.0) throw ConfigError("mixture_curve: proportions must be positive");
        total += prop;
    }
    LossCurve out;
    out.lambdas = lambdas;
    out.values.assign(lambdas.size(), 0.0);
    for (const auto& [bits, prop] : mix.components) {
        GridData data(bits);
        LossCurve c = eps_mse_curve(data, lambdas, opts);
        const double p = prop / total;
        for (size_t i = 0; i < lambdas.size(); ++i) out.values[i] += p * c.values[i];
    }
    return out;
}

}  // namespace sid
