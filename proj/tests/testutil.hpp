#pragma once

#include <functional>
#include <vector>

#include "sid/tensor.hpp"

namespace sid::test {

// Central finite-difference gradient oracle, independent of the tape.
// `f` must be a pure function of the inputs' data and return a scalar.
// Returns max over all coordinates of |ad - fd| / (|fd| + 1e-8).
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                        std::vector<Tensor> inputs, double h = 1e-5) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();  // leaf grads accumulate across tapes
    }
    double loss0;
    {
        Tape tape;
        Tensor loss = f(inputs);
        tape.backward(loss);
        loss0 = loss.item();
    }
    (void)loss0;
    double worst = 0.0;
    for (auto& t : inputs) {
        auto data = t.mutable_data();
        auto grad = t.grad();
        for (size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double fp = f(inputs).item();
            data[i] = keep - h;
            const double fm = f(inputs).item();
            data[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = grad.empty() ? 0.0 : grad[i];
            const double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    return Tensor::randn(std::move(shape), rng, scale);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace sid::test
