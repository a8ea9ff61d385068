#include "sid/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

namespace sid::kern {

namespace scalar {

template <typename T>
void add(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void scale(const T* a, T c, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = c * a[i];
}

template <typename T>
void axpy(T c, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

template <typename T>
void madd_rows(T* acc, const T* x, const T* w, size_t k, size_t n) {
    for (size_t i = 0; i < k; ++i) {
        const T xi = x[i];
        const T* wr = w + i * n;
        for (size_t j = 0; j < n; ++j) acc[j] += xi * wr[j];
    }
}

}  // namespace scalar

template <typename T>
const Ops<T>& scalar_ops() {
    static const Ops<T> table = {
        &scalar::add<T>, &scalar::sub<T>,   &scalar::mul<T>,
        &scalar::scale<T>, &scalar::axpy<T>, &scalar::madd_rows<T>,
    };
    return table;
}

template const Ops<float>& scalar_ops<float>();
template const Ops<double>& scalar_ops<double>();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

enum class Backend { kAuto, kScalar, kAvx2 };

Backend requested_backend() {
    const char* env = std::getenv("SID2_KERNEL");
    if (env == nullptr) return Backend::kAuto;
    std::string v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2") return Backend::kAvx2;
    return Backend::kAuto;
}

template <typename T>
const Ops<T>* select() {
    Backend want = requested_backend();
    const Ops<T>* simd = avx2_ops<T>();
    if (want == Backend::kScalar) return &scalar_ops<T>();
    if (want == Backend::kAvx2 && simd != nullptr) return simd;
    if (want == Backend::kAuto && simd != nullptr && cpu_has_avx2()) return simd;
    return &scalar_ops<T>();
}

}  // namespace

template <typename T>
const Ops<T>& ops() {
    static const Ops<T>* table = select<T>();
    return *table;
}

template const Ops<float>& ops<float>();
template const Ops<double>& ops<double>();

const char* active_backend() {
    return &ops<double>() == avx2_ops<double>() ? "avx2" : "scalar";
}

}  // namespace sid::kern
