#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sid {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Shape/rank mismatches between tensors or against an op's contract.
struct DimensionError : Error {
    using Error::Error;
};
// Argument outside the mathematical domain (t not in [0,1], lambda out of range).
struct DomainError : Error {
    using Error::Error;
};
// Invalid or inconsistent configuration (bad level arithmetic, unknown variant).
struct ConfigError : Error {
    using Error::Error;
};
// Noise levels supplied in the wrong order (requires lambda_s > lambda_t).
struct OrderingError : Error {
    using Error::Error;
};
// Numeric procedure failed to converge or produced non-finite values.
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

inline double sigmoid(double x) {
    // split to avoid overflow of exp for large |x|
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

// Deterministic RNG. Draws are pinned to explicit bit manipulation of the
// mt19937_64 output (not std::*_distribution) so that identical seeds give
// identical streams for every consumer in this codebase.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        // mix seed and stream so nearby pairs give unrelated sequences
        uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
        s ^= s >> 33;
        s *= 0xff51afd7ed558ccdull;
        s ^= s >> 33;
        eng_.seed(s);
    }

    uint64_t bits() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t n) {  // [0, n)
        return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
    }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename It>
    void fill_normal(It first, It last) {
        for (; first != last; ++first) *first = normal();
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sid
