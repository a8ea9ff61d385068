#pragma once

#include <vector>

namespace sid::quad {

struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre on [-1, 1]; integrates polynomials up to degree 2n-1 exactly.
Rule gauss_legendre(int n);

// Same rule mapped to [a, b].
Rule gauss_legendre(int n, double a, double b);

// Gauss-Hermite for weight exp(-x^2) on (-inf, inf) (physicists' convention),
// nodes/weights via Golub-Welsch on the Jacobi matrix.
Rule gauss_hermite(int n);

// E_{eps ~ N(0,1)}[f(eps)] using a Gauss-Hermite rule: sum w_i f(sqrt(2) x_i) / sqrt(pi).
template <typename F>
double expect_standard_normal(const Rule& gh, F&& f) {
    constexpr double inv_sqrt_pi = 0.56418958354775628695;
    constexpr double sqrt2 = 1.41421356237309504880;
    double acc = 0.0;
    for (size_t i = 0; i < gh.nodes.size(); ++i) {
        acc += gh.weights[i] * f(sqrt2 * gh.nodes[i]);
    }
    return acc * inv_sqrt_pi;
}

}  // namespace sid::quad
