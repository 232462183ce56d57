#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "dygait/kernels.hpp"
#include "dygait/reference.hpp"
#include "dygait/rng.hpp"

// Times the OpenMP kernels against the serial reference on training-sized
// workloads and cross-checks their outputs while at it.

using namespace dygait;

namespace {

Tensor4<float> randt(int c, int t, int h, int w, Rng& rng) {
    Tensor4<float> x(c, t, h, w);
    for (auto& v : x.data) v = static_cast<float>(rng.next_symmetric(1.0));
    return x;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count());
    }
    return best;
}

double max_diff(const Tensor4<float>& a, const Tensor4<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

void row(const char* name, double ser, double par, double diff) {
    std::printf("%-22s %10.2f ms %10.2f ms %8.2fx   max|d|=%.3g\n", name, ser * 1e3, par * 1e3,
                ser / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--threads" && i + 1 < argc) omp_set_num_threads(std::atoi(argv[++i]));
        else if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
    }
    std::printf("threads=%d reps=%d (best-of timing)\n", omp_get_max_threads(), reps);
    std::printf("%-22s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    Rng rng(4242);
    {
        auto x = randt(32, 10, 64, 44, rng);
        auto w = randt(64, 32 * 3, 3, 3, rng);
        Conv3Spec s{64, 32, 3, 3, 3, 1, 1, 1, 1};
        Tensor4<float> ys, yp;
        const double ts = time_best_of(reps, [&] { ys = ref::conv3d(x, w, s); });
        const double tp = time_best_of(reps, [&] { yp = kernels::conv3d_forward(x, w, s); });
        row("conv3d 32->64 3x3x3", ts, tp, max_diff(ys, yp));
    }
    {
        auto x = randt(32, 30, 64, 44, rng);
        auto w = randt(32, 32 * 3, 1, 1, rng);
        Conv3Spec s{32, 32, 3, 1, 1, 3, 0, 0, 0};
        Tensor4<float> ys, yp;
        const double ts = time_best_of(reps, [&] { ys = ref::conv3d(x, w, s); });
        const double tp = time_best_of(reps, [&] { yp = kernels::conv3d_forward(x, w, s); });
        row("conv3d stride-3 time", ts, tp, max_diff(ys, yp));
    }
    {
        auto x = randt(64, 10, 64, 44, rng);
        Tensor4<float> ys, yp;
        const double ts = time_best_of(reps, [&] { ys = ref::maxpool_spatial(x, 2, 2); });
        const double tp =
            time_best_of(reps, [&] { yp = kernels::maxpool_spatial_forward(x, 2, 2, nullptr); });
        row("maxpool 2x2", ts, tp, max_diff(ys, yp));
    }
    {
        auto x = randt(128, 10, 16, 11, rng);
        Tensor4<float> ys, yp;
        const double ts = time_best_of(reps, [&] { ys = ref::max_over_time(x); });
        const double tp = time_best_of(reps, [&] { yp = kernels::max_over_time_forward(x, nullptr); });
        row("max_over_time", ts, tp, max_diff(ys, yp));
    }
    return 0;
}
