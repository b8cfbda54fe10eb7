#include "mdtrack/kernels.hpp"

// AVX2 kernel variants. Lane-parallel only: each output element sees the
// same mul/add sequence as the scalar reference (vmulps + vaddps, never
// vfmadd), so results match the scalar backend bit for bit.

#if defined(__AVX2__) && (defined(__x86_64__) || defined(_M_X64))

#include <immintrin.h>

#include <algorithm>

namespace mdtrack::detail {

namespace {

// ---- float, 8 lanes ----

void add_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float s, float* out, std::int64_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f32(float a, const float* x, float* y, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_rows_f32(const float* a, const float* b, float* c, int i0, int i1, int k, int n) {
    for (int i = i0; i < i1; ++i) {
        float* crow = c + static_cast<std::int64_t>(i) * n;
        std::fill(crow, crow + n, 0.0f);
        for (int p = 0; p < k; ++p) {
            const float as = a[static_cast<std::int64_t>(i) * k + p];
            const __m256 av = _mm256_set1_ps(as);
            const float* brow = b + static_cast<std::int64_t>(p) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 prod = _mm256_mul_ps(av, _mm256_loadu_ps(brow + j));
                _mm256_storeu_ps(crow + j, _mm256_add_ps(_mm256_loadu_ps(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

// ---- double, 4 lanes ----

void add_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f64(const double* a, double s, double* out, std::int64_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f64(double a, const double* x, double* y, std::int64_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_rows_f64(const double* a, const double* b, double* c, int i0, int i1, int k, int n) {
    for (int i = i0; i < i1; ++i) {
        double* crow = c + static_cast<std::int64_t>(i) * n;
        std::fill(crow, crow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double as = a[static_cast<std::int64_t>(i) * k + p];
            const __m256d av = _mm256_set1_pd(as);
            const double* brow = b + static_cast<std::int64_t>(p) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

}  // namespace

bool fill_avx2(Kernels<float>& kf, Kernels<double>& kd) {
    if (!__builtin_cpu_supports("avx2")) return false;
    kf.add = add_f32;
    kf.sub = sub_f32;
    kf.mul = mul_f32;
    kf.scale = scale_f32;
    kf.axpy = axpy_f32;
    kf.gemm_rows = gemm_rows_f32;
    kd.add = add_f64;
    kd.sub = sub_f64;
    kd.mul = mul_f64;
    kd.scale = scale_f64;
    kd.axpy = axpy_f64;
    kd.gemm_rows = gemm_rows_f64;
    return true;
}

}  // namespace mdtrack::detail

#else

namespace mdtrack::detail {
bool fill_avx2(Kernels<float>&, Kernels<double>&) { return false; }
}  // namespace mdtrack::detail

#endif
