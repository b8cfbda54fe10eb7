#pragma once

#include <cstdint>

namespace mdtrack {

// Data-parallel inner loops behind the tensor ops. Each entry has a scalar
// reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at startup. Every variant performs the identical
// per-element operation sequence as the scalar reference — multiplies and
// adds are kept separate (no FMA contraction) and gemm accumulates in fixed
// k order — so all backends produce bit-identical buffers and the
// equivalence tests can assert exact equality.
template <typename T>
struct Kernels {
    void (*add)(const T* a, const T* b, T* out, std::int64_t n);
    void (*sub)(const T* a, const T* b, T* out, std::int64_t n);
    void (*mul)(const T* a, const T* b, T* out, std::int64_t n);
    void (*scale)(const T* a, T s, T* out, std::int64_t n);
    void (*axpy)(T a, const T* x, T* y, std::int64_t n);  // y += a*x
    // c[i0..i1) rows of C[m,n] = A[m,k] * B[k,n], row-major, zero-initialized.
    void (*gemm_rows)(const T* a, const T* b, T* c, int i0, int i1, int k, int n);
};

template <typename T>
const Kernels<T>& kernels();

// Active backend name: "scalar", "avx2", or "neon".
const char* kernel_backend();

// Thread cap from MDTRACK_THREADS (default 1). Parallel gemm partitions
// output rows, so each element keeps its fixed reduction order regardless
// of the partitioning.
int max_threads();

// C[m,n] = A[m,k] * B[k,n]; threads bounded by max_threads().
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n);

namespace detail {
bool fill_scalar(Kernels<float>& kf, Kernels<double>& kd);
bool fill_avx2(Kernels<float>& kf, Kernels<double>& kd);
bool fill_neon(Kernels<float>& kf, Kernels<double>& kd);
}  // namespace detail

}  // namespace mdtrack
