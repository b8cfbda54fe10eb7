#include "mdtrack/kernels.hpp"

// NEON kernel variants (aarch64). Same lane-parallel structure as the AVX2
// backend: separate mul and add, fixed k-order accumulation in gemm, so the
// output is bit-identical to the scalar reference.

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <algorithm>

namespace mdtrack::detail {

namespace {

void add_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float s, float* out, std::int64_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f32(float a, const float* x, float* y, std::int64_t n) {
    const float32x4_t va = vdupq_n_f32(a);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t prod = vmulq_f32(va, vld1q_f32(x + i));
        vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_rows_f32(const float* a, const float* b, float* c, int i0, int i1, int k, int n) {
    for (int i = i0; i < i1; ++i) {
        float* crow = c + static_cast<std::int64_t>(i) * n;
        std::fill(crow, crow + n, 0.0f);
        for (int p = 0; p < k; ++p) {
            const float as = a[static_cast<std::int64_t>(i) * k + p];
            const float32x4_t av = vdupq_n_f32(as);
            const float* brow = b + static_cast<std::int64_t>(p) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                float32x4_t prod = vmulq_f32(av, vld1q_f32(brow + j));
                vst1q_f32(crow + j, vaddq_f32(vld1q_f32(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

void add_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f64(const double* a, double s, double* out, std::int64_t n) {
    const float64x2_t vs = vdupq_n_f64(s);
    std::int64_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_f64(double a, const double* x, double* y, std::int64_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::int64_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_rows_f64(const double* a, const double* b, double* c, int i0, int i1, int k, int n) {
    for (int i = i0; i < i1; ++i) {
        double* crow = c + static_cast<std::int64_t>(i) * n;
        std::fill(crow, crow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double as = a[static_cast<std::int64_t>(i) * k + p];
            const float64x2_t av = vdupq_n_f64(as);
            const double* brow = b + static_cast<std::int64_t>(p) * n;
            int j = 0;
            for (; j + 2 <= n; j += 2) {
                float64x2_t prod = vmulq_f64(av, vld1q_f64(brow + j));
                vst1q_f64(crow + j, vaddq_f64(vld1q_f64(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

}  // namespace

bool fill_neon(Kernels<float>& kf, Kernels<double>& kd) {
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
bool fill_neon(Kernels<float>&, Kernels<double>&) { return false; }
}  // namespace mdtrack::detail

#endif
