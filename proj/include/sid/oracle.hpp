#pragma once

// Closed-form references for uniform low-bit univariate data: the optimal
// denoiser is the posterior mean of a mixture of Gaussians centered on the
// 2^n grid values, and its eps-mse over lambda is computed by Gauss-Hermite
// quadrature. Everything here is an oracle for testing the learned pipeline.

#include <vector>

#include "sid/schedule.hpp"

namespace sid {

// 2^n equispaced values embedded in [-1, 1] endpoints-inclusive, uniform prior
struct GridData {
    explicit GridData(int n_bits);
    int n_bits;
    std::vector<double> support;
};

struct PrecisionMixture {
    // (n_bits, proportion); proportions are normalized to sum 1 before use
    std::vector<std::pair<int, double>> components;
};

struct LossCurve {
    std::vector<double> lambdas;
    std::vector<double> values;
};

// E[x | z] under the grid prior at the given noise level
double optimal_denoiser(const GridData& data, double z, const NoiseLevel& level);

struct OracleOptions {
    int gh_nodes = 127;
    // doubling the node count must change results by less than this
    double convergence_tol = 1e-6;
    bool check_convergence = true;
};

// E_{q(x), eps}[ (eps - eps_hat)^2 ] per lambda with eps_hat from the optimal
// denoiser; Gauss-Hermite in eps, exact enumeration over the grid prior.
LossCurve eps_mse_curve(const GridData& data, const std::vector<double>& lambdas,
                        const OracleOptions& opts = {});

// E[(x - x_hat)^2] per lambda, computed by its own quadrature path
// (eps-mse == exp(lambda) * x-mse pointwise).
LossCurve x_mse_curve(const GridData& data, const std::vector<double>& lambdas,
                      const OracleOptions& opts = {});

// pointwise product w(lambda) * eps_mse(lambda)
template <typename W>
LossCurve weighted_curve(const GridData& data, const std::vector<double>& lambdas, W&& w,
                         const OracleOptions& opts = {}) {
    LossCurve c = eps_mse_curve(data, lambdas, opts);
    for (size_t i = 0; i < c.lambdas.size(); ++i) c.values[i] *= w(c.lambdas[i]);
    return c;
}

// proportion-weighted eps-mse across per-precision optimal denoisers
LossCurve mixture_curve(const PrecisionMixture& mix, const std::vector<double>& lambdas,
                        const OracleOptions& opts = {});

}  // namespace sid
