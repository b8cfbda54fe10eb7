#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "mdtrack/common.hpp"
#include "mdtrack/kernels.hpp"

namespace mdtrack {

namespace {

struct Dispatch {
    Kernels<float> f32{};
    Kernels<double> f64{};
    const char* backend = "scalar";
    int threads = 1;

    Dispatch() {
        detail::fill_scalar(f32, f64);

        const char* want = std::getenv("MDTRACK_KERNELS");
        std::string mode = want ? want : "auto";
        if (mode == "auto") {
            if (detail::fill_avx2(f32, f64))
                backend = "avx2";
            else if (detail::fill_neon(f32, f64))
                backend = "neon";
        } else if (mode == "avx2") {
            if (!detail::fill_avx2(f32, f64))
                throw ConfigError("MDTRACK_KERNELS=avx2 but AVX2 is unavailable");
            backend = "avx2";
        } else if (mode == "neon") {
            if (!detail::fill_neon(f32, f64))
                throw ConfigError("MDTRACK_KERNELS=neon but NEON is unavailable");
            backend = "neon";
        } else if (mode != "scalar") {
            throw ConfigError("MDTRACK_KERNELS must be auto, scalar, avx2, or neon");
        }

        if (const char* t = std::getenv("MDTRACK_THREADS")) {
            threads = std::atoi(t);
            if (threads < 1) throw ConfigError("MDTRACK_THREADS must be >= 1");
        }
    }
};

const Dispatch& dispatch_table() {
    static Dispatch d;
    return d;
}

}  // namespace

template <>
const Kernels<float>& kernels<float>() {
    return dispatch_table().f32;
}

template <>
const Kernels<double>& kernels<double>() {
    return dispatch_table().f64;
}

const char* kernel_backend() { return dispatch_table().backend; }

int max_threads() { return dispatch_table().threads; }

template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n) {
    const auto& ks = kernels<T>();
    const int nt = max_threads();
    const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
    if (nt <= 1 || m < 2 * nt || flops < (1 << 18)) {
        ks.gemm_rows(a, b, c, 0, m, k, n);
        return;
    }
    const int workers = nt < m ? nt : m;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    const int chunk = (m + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        int i0 = w * chunk;
        int i1 = i0 + chunk < m ? i0 + chunk : m;
        if (i0 >= i1) break;
        pool.emplace_back([=, &ks] { ks.gemm_rows(a, b, c, i0, i1, k, n); });
    }
    ks.gemm_rows(a, b, c, 0, chunk < m ? chunk : m, k, n);
    for (auto& t : pool) t.join();
}

template void gemm<float>(const float*, const float*, float*, int, int, int);
template void gemm<double>(const double*, const double*, double*, int, int, int);

}  // namespace mdtrack
