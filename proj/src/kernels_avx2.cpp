// AVX2 kernel variants. This translation unit is compiled with -mavx2; the
// caller checks CPU support at runtime before dispatching here. Lanes run
// across independent output elements and use separate mul/add so results are
// bit-identical to the scalar reference.
#include "sid/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace sid::kern {

namespace avx2 {

// ---- double (4 lanes) ----

inline void add_f64(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

inline void sub_f64(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

inline void mul_f64(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

inline void scale_f64(const double* a, double c, double* y, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(vc, _mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) y[i] = c * a[i];
}

inline void axpy_f64(double c, const double* x, double* y, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

inline void madd_rows_f64(double* acc, const double* x, const double* w, size_t k, size_t n) {
    for (size_t i = 0; i < k; ++i) {
        const __m256d xi = _mm256_set1_pd(x[i]);
        const double* wr = w + i * n;
        size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256d prod = _mm256_mul_pd(xi, _mm256_loadu_pd(wr + j));
            _mm256_storeu_pd(acc + j, _mm256_add_pd(_mm256_loadu_pd(acc + j), prod));
        }
        const double xs = x[i];
        for (; j < n; ++j) acc[j] += xs * wr[j];
    }
}

// ---- float (8 lanes) ----

inline void add_f32(const float* a, const float* b, float* y, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

inline void sub_f32(const float* a, const float* b, float* y, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

inline void mul_f32(const float* a, const float* b, float* y, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

inline void scale_f32(const float* a, float c, float* y, size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_mul_ps(vc, _mm256_loadu_ps(a + i)));
    }
    for (; i < n; ++i) y[i] = c * a[i];
}

inline void axpy_f32(float c, const float* x, float* y, size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(vc, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

inline void madd_rows_f32(float* acc, const float* x, const float* w, size_t k, size_t n) {
    for (size_t i = 0; i < k; ++i) {
        const __m256 xi = _mm256_set1_ps(x[i]);
        const float* wr = w + i * n;
        size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256 prod = _mm256_mul_ps(xi, _mm256_loadu_ps(wr + j));
            _mm256_storeu_ps(acc + j, _mm256_add_ps(_mm256_loadu_ps(acc + j), prod));
        }
        const float xs = x[i];
        for (; j < n; ++j) acc[j] += xs * wr[j];
    }
}

}  // namespace avx2

template <>
const Ops<double>* avx2_ops<double>() {
    static const Ops<double> table = {
        &avx2::add_f64, &avx2::sub_f64,  &avx2::mul_f64,
        &avx2::scale_f64, &avx2::axpy_f64, &avx2::madd_rows_f64,
    };
    return &table;
}

template <>
const Ops<float>* avx2_ops<float>() {
    static const Ops<float> table = {
        &avx2::add_f32, &avx2::sub_f32,  &avx2::mul_f32,
        &avx2::scale_f32, &avx2::axpy_f32, &avx2::madd_rows_f32,
    };
    return &table;
}

}  // namespace sid::kern

#else  // !__AVX2__

namespace sid::kern {

template <>
const Ops<double>* avx2_ops<double>() {
    return nullptr;
}

template <>
const Ops<float>* avx2_ops<float>() {
    return nullptr;
}

}  // namespace sid::kern

#endif
