#pragma once

#include <cstddef>

namespace sid::kern {

// Hot inner loops of the tensor engine. Scalar reference implementations and
// AVX2 variants share one dispatch table; the AVX2 kernels vectorize only
// across independent output elements and use separate mul/add (no FMA), so
// for a fixed input every backend produces bit-identical results.
template <typename T>
struct Ops {
    void (*add)(const T* a, const T* b, T* y, size_t n);
    void (*sub)(const T* a, const T* b, T* y, size_t n);
    void (*mul)(const T* a, const T* b, T* y, size_t n);
    void (*scale)(const T* a, T c, T* y, size_t n);    // y = c * a
    void (*axpy)(T c, const T* x, T* y, size_t n);     // y += c * x
    // acc[j] += sum_k x[k] * w[k*n + j]; row-major W[k][j], fixed k order.
    void (*madd_rows)(T* acc, const T* x, const T* w, size_t k, size_t n);
};

template <typename T>
const Ops<T>& scalar_ops();

// null when this build/CPU has no AVX2 path
template <typename T>
const Ops<T>* avx2_ops();

// Active table: AVX2 when the CPU supports it, else scalar. The environment
// variable SID2_KERNEL ("scalar" or "avx2") overrides, read once.
template <typename T>
const Ops<T>& ops();

const char* active_backend();

}  // namespace sid::kern
