#include <algorithm>

#include "mdtrack/kernels.hpp"

// Scalar reference kernels. These define the semantics the SIMD variants
// must reproduce exactly; compiled with -ffp-contract=off so the compiler
// cannot fuse the mul/add pairs into FMAs.

namespace mdtrack::detail {

namespace {

template <typename T>
void add_(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_(const T* a, T s, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void axpy_(T a, const T* x, T* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void gemm_rows_(const T* a, const T* b, T* c, int i0, int i1, int k, int n) {
    for (int i = i0; i < i1; ++i) {
        T* crow = c + static_cast<std::int64_t>(i) * n;
        std::fill(crow, crow + n, T(0));
        for (int p = 0; p < k; ++p) {
            const T av = a[static_cast<std::int64_t>(i) * k + p];
            const T* brow = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void fill_one(Kernels<T>& ks) {
    ks.add = add_<T>;
    ks.sub = sub_<T>;
    ks.mul = mul_<T>;
    ks.scale = scale_<T>;
    ks.axpy = axpy_<T>;
    ks.gemm_rows = gemm_rows_<T>;
}

}  // namespace

bool fill_scalar(Kernels<float>& kf, Kernels<double>& kd) {
    fill_one(kf);
    fill_one(kd);
    return true;
}

}  // namespace mdtrack::detail
