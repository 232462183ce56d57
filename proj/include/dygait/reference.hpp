#pragma once

#include <algorithm>
#include <vector>

#include "dygait/tensor.hpp"

// Serial reference kernels written as plain nested loops straight from the
// operator definitions. Deliberately naive: they exist to pin down correct
// numerics for the OpenMP kernels and to serve as oracles in the test suite.

namespace dygait::ref {

template <typename T>
Tensor4<T> conv3d(const Tensor4<T>& x, const Tensor4<T>& w, const Conv3Spec& s) {
    s.check_input(x);
    Tensor4<T> y(s.c_out, s.out_t(x.t), s.out_h(x.h), s.out_w(x.w));
    for (int co = 0; co < y.c; ++co)
        for (int to = 0; to < y.t; ++to)
            for (int ho = 0; ho < y.h; ++ho)
                for (int wo = 0; wo < y.w; ++wo) {
                    T acc = T(0);
                    for (int ci = 0; ci < s.c_in; ++ci)
                        for (int kt = 0; kt < s.k_t; ++kt)
                            for (int kh = 0; kh < s.k_h; ++kh)
                                for (int kw = 0; kw < s.k_w; ++kw) {
                                    const int ti = to * s.stride_t + kt - s.pad_t;
                                    const int hi = ho + kh - s.pad_h;
                                    const int wi = wo + kw - s.pad_w;
                                    if (ti < 0 || ti >= x.t || hi < 0 || hi >= x.h || wi < 0 ||
                                        wi >= x.w)
                                        continue;  // zero padding
                                    acc += w.at(co, ci * s.k_t + kt, kh, kw) * x.at(ci, ti, hi, wi);
                                }
                    y.at(co, to, ho, wo) = acc;
                }
    return y;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope) {
    Tensor4<T> y = Tensor4<T>::zeros_like(x);
    for (size_t i = 0; i < x.size(); ++i)
        y.data[i] = x.data[i] >= T(0) ? x.data[i] : slope * x.data[i];
    return y;
}

template <typename T>
Tensor4<T> mean_over_time(const Tensor4<T>& x) {
    Tensor4<T> y(x.c, 1, x.h, x.w);
    for (int ci = 0; ci < x.c; ++ci)
        for (int hi = 0; hi < x.h; ++hi)
            for (int wi = 0; wi < x.w; ++wi) {
                T acc = T(0);
                for (int ti = 0; ti < x.t; ++ti) acc += x.at(ci, ti, hi, wi);
                y.at(ci, 0, hi, wi) = acc / static_cast<T>(x.t);
            }
    return y;
}

template <typename T>
Tensor4<T> subtract_broadcast(const Tensor4<T>& x, const Tensor4<T>& m) {
    Tensor4<T> y = Tensor4<T>::zeros_like(x);
    for (int ci = 0; ci < x.c; ++ci)
        for (int ti = 0; ti < x.t; ++ti)
            for (int hi = 0; hi < x.h; ++hi)
                for (int wi = 0; wi < x.w; ++wi)
                    y.at(ci, ti, hi, wi) = x.at(ci, ti, hi, wi) - m.at(ci, 0, hi, wi);
    return y;
}

template <typename T>
Tensor4<T> pad_time_edge(const Tensor4<T>& x, int p) {
    Tensor4<T> y(x.c, x.t + 2 * p, x.h, x.w);
    for (int ci = 0; ci < x.c; ++ci)
        for (int to = 0; to < y.t; ++to) {
            const int ti = std::clamp(to - p, 0, x.t - 1);
            for (int hi = 0; hi < x.h; ++hi)
                for (int wi = 0; wi < x.w; ++wi)
                    y.at(ci, to, hi, wi) = x.at(ci, ti, hi, wi);
        }
    return y;
}

template <typename T>
Tensor4<T> max_over_time(const Tensor4<T>& x) {
    Tensor4<T> y(x.c, 1, x.h, x.w);
    for (int ci = 0; ci < x.c; ++ci)
        for (int hi = 0; hi < x.h; ++hi)
            for (int wi = 0; wi < x.w; ++wi) {
                T best = x.at(ci, 0, hi, wi);
                for (int ti = 1; ti < x.t; ++ti) best = std::max(best, x.at(ci, ti, hi, wi));
                y.at(ci, 0, hi, wi) = best;
            }
    return y;
}

template <typename T>
Tensor4<T> maxpool_spatial(const Tensor4<T>& x, int wh, int ww) {
    Tensor4<T> y(x.c, x.t, x.h / wh, x.w / ww);
    for (int ci = 0; ci < y.c; ++ci)
        for (int ti = 0; ti < y.t; ++ti)
            for (int ho = 0; ho < y.h; ++ho)
                for (int wo = 0; wo < y.w; ++wo) {
                    T best = x.at(ci, ti, ho * wh, wo * ww);
                    for (int dh = 0; dh < wh; ++dh)
                        for (int dw = 0; dw < ww; ++dw)
                            best = std::max(best, x.at(ci, ti, ho * wh + dh, wo * ww + dw));
                    y.at(ci, ti, ho, wo) = best;
                }
    return y;
}

template <typename T>
Tensor4<T> strip_pool(const Tensor4<T>& x, int strips) {
    const int band = x.h / strips;
    Tensor4<T> y(strips, 1, 1, x.c);
    for (int s = 0; s < strips; ++s)
        for (int ci = 0; ci < x.c; ++ci) {
            T best = x.at(ci, 0, s * band, 0);
            T sum = T(0);
            for (int hi = s * band; hi < (s + 1) * band; ++hi)
                for (int wi = 0; wi < x.w; ++wi) {
                    best = std::max(best, x.at(ci, 0, hi, wi));
                    sum += x.at(ci, 0, hi, wi);
                }
            y.at(s, 0, 0, ci) = best + sum / static_cast<T>(band * x.w);
        }
    return y;
}

template <typename T>
Tensor4<T> matvec(const Tensor4<T>& w, const Tensor4<T>& x) {
    Tensor4<T> y(w.c, 1, 1, 1);
    for (int i = 0; i < w.c; ++i) {
        T acc = T(0);
        for (int j = 0; j < w.w; ++j) acc += w.at(i, 0, 0, j) * x.data[j];
        y.data[i] = acc;
    }
    return y;
}

}  // namespace dygait::ref
