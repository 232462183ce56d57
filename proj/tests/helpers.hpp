#pragma once

#include <cstring>
#include <memory>

#include "dygait/rng.hpp"
#include "dygait/tensor.hpp"

namespace testutil {

template <typename T>
dygait::Tensor4<T> random_tensor(int c, int t, int h, int w, dygait::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
    dygait::Tensor4<T> x(c, t, h, w);
    for (auto& v : x.data) v = static_cast<T>(lo + (hi - lo) * rng.next_real());
    return x;
}

template <typename T>
bool bit_equal(const dygait::Tensor4<T>& a, const dygait::Tensor4<T>& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const dygait::Tensor4<T>& a, const dygait::Tensor4<T>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, static_cast<double>(std::fabs(a.data[i] - b.data[i])));
    return m;
}

}  // namespace testutil

#include "dygait/gradcheck.hpp"
#include "dygait/tape.hpp"

namespace testutil {

// Runs a finite-difference check of a tape-built scalar. `build` receives a
// fresh tape plus the node id of each named parameter and returns the loss id.
template <typename BuildFn>
dygait::gradcheck::Report run_check(const dygait::gradcheck::ParamMap& params, BuildFn&& build,
                                    double eps = 1e-5, int samples = 16, double tol = 1e-5,
                                    uint64_t seed = 42) {
    auto loss_fn = [&](const dygait::gradcheck::ParamMap& p) {
        dygait::Tape<double> tp;
        std::map<std::string, int> ids;
        for (const auto& [k, v] : p) ids[k] = tp.leaf(v);
        return tp.val(build(tp, ids)).data[0];
    };
    dygait::Tape<double> tp;
    std::map<std::string, int> ids;
    for (const auto& [k, v] : params) ids[k] = tp.leaf(v);
    tp.backward(build(tp, ids));
    dygait::gradcheck::ParamMap analytic;
    for (const auto& [k, v] : params) analytic[k] = tp.grad(ids[k]);
    dygait::Rng rng(seed);
    return dygait::gradcheck::check(params, analytic, loss_fn, eps, samples, tol, rng);
}

}  // namespace testutil
