#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "sid/common.hpp"
#include "sid/kernels.hpp"

using namespace sid;

namespace {

template <typename T>
std::vector<T> random_vec(size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return v;
}

// Scalar and AVX2 kernels must agree bit-for-bit: same reduction order,
// no FMA contraction on either side.
template <typename T>
void check_equivalence() {
    const kern::Ops<T>& ref = kern::scalar_ops<T>();
    const kern::Ops<T>* simd = kern::avx2_ops<T>();
    if (simd == nullptr) return;  // non-x86 build

    Rng rng(1234);
    for (size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 129u, 1000u}) {
        auto a = random_vec<T>(n, rng);
        auto b = random_vec<T>(n, rng);
        std::vector<T> y1(n), y2(n);

        ref.add(a.data(), b.data(), y1.data(), n);
        simd->add(a.data(), b.data(), y2.data(), n);
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0);

        ref.sub(a.data(), b.data(), y1.data(), n);
        simd->sub(a.data(), b.data(), y2.data(), n);
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0);

        ref.mul(a.data(), b.data(), y1.data(), n);
        simd->mul(a.data(), b.data(), y2.data(), n);
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0);

        const T c = static_cast<T>(rng.normal());
        ref.scale(a.data(), c, y1.data(), n);
        simd->scale(a.data(), c, y2.data(), n);
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0);

        y1 = b;
        y2 = b;
        ref.axpy(c, a.data(), y1.data(), n);
        simd->axpy(c, a.data(), y2.data(), n);
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0);
    }

    // madd_rows: K x N panels, odd tails included
    for (auto [k, n] : std::vector<std::pair<size_t, size_t>>{{1, 1}, {3, 5}, {8, 8}, {13, 37}, {64, 63}}) {
        auto x = random_vec<T>(k, rng);
        auto w = random_vec<T>(k * n, rng);
        auto acc1 = random_vec<T>(n, rng);
        auto acc2 = acc1;
        ref.madd_rows(acc1.data(), x.data(), w.data(), k, n);
        simd->madd_rows(acc2.data(), x.data(), w.data(), k, n);
        CHECK(std::memcmp(acc1.data(), acc2.data(), n * sizeof(T)) == 0);
    }
}

}  // namespace

TEST_CASE("scalar and avx2 kernels are bit-identical (f64)") { check_equivalence<double>(); }

TEST_CASE("scalar and avx2 kernels are bit-identical (f32)") { check_equivalence<float>(); }

TEST_CASE("dispatch reports a valid backend") {
    const char* b = kern::active_backend();
    CHECK((std::string(b) == "avx2" || std::string(b) == "scalar"));
}

TEST_CASE("madd_rows computes acc += x W") {
    // 2x3 panel, hand-computed
    const kern::Ops<double>& ref = kern::scalar_ops<double>();
    std::vector<double> x{2.0, -1.0};
    std::vector<double> w{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    std::vector<double> acc{10.0, 10.0, 10.0};
    ref.madd_rows(acc.data(), x.data(), w.data(), 2, 3);
    CHECK(acc[0] == doctest::Approx(10 + 2 * 1 - 4));
    CHECK(acc[1] == doctest::Approx(10 + 2 * 2 - 5));
    CHECK(acc[2] == doctest::Approx(10 + 2 * 3 - 6));
}
