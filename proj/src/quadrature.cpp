#include "sid/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "sid/common.hpp"

namespace sid::quad {

Rule gauss_legendre(int n) {
    if (n < 1) throw ConfigError("gauss_legendre: n must be >= 1");
    Rule r;
    r.nodes.resize(static_cast<size_t>(n));
    r.weights.resize(static_cast<size_t>(n));
    const double pi = 3.14159265358979323846;
    const int m = (n + 1) / 2;  // roots come in +/- pairs
    for (int i = 0; i < m; ++i) {
        // Newton iteration from the Chebyshev-like initial guess
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double p_prime = 0.0;
        for (int it = 0; it < 100; ++it) {
            // Legendre recurrence: (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
            double p0 = 1.0, p1 = x;
            for (int k = 1; k < n; ++k) {
                const double p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p_prime = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / p_prime;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * p_prime * p_prime);
        r.nodes[static_cast<size_t>(i)] = -x;
        r.nodes[static_cast<size_t>(n - 1 - i)] = x;
        r.weights[static_cast<size_t>(i)] = w;
        r.weights[static_cast<size_t>(n - 1 - i)] = w;
    }
    if (n % 2 == 1) r.nodes[static_cast<size_t>(n / 2)] = 0.0;
    return r;
}

Rule gauss_legendre(int n, double a, double b) {
    Rule r = gauss_legendre(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (size_t i = 0; i < r.nodes.size(); ++i) {
        r.nodes[i] = mid + half * r.nodes[i];
        r.weights[i] *= half;
    }
    return r;
}

Rule gauss_hermite(int n) {
    if (n < 1) throw ConfigError("gauss_hermite: n must be >= 1");
    // Golub-Welsch: eigen-decomposition of the symmetric tridiagonal Jacobi
    // matrix with off-diagonals sqrt(k/2); weights from the first eigenvector
    // components scaled by mu0 = integral of exp(-x^2) = sqrt(pi).
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double off = std::sqrt(0.5 * k);
        j(k - 1, k) = off;
        j(k, k - 1) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    if (es.info() != Eigen::Success) throw NumericError("gauss_hermite: eigensolver failed");
    const double sqrt_pi = 1.77245385090551602730;
    Rule r;
    r.nodes.resize(static_cast<size_t>(n));
    r.weights.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        r.nodes[static_cast<size_t>(i)] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        r.weights[static_cast<size_t>(i)] = sqrt_pi * v0 * v0;
    }
    return r;
}

}  // namespace sid::quad
