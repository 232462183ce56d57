#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "dygait/tensor.hpp"

// Forward and backward kernels for every network operation. Hot loops are
// OpenMP-parallel; each output element is written by exactly one thread and
// every reduction runs serially inside its owning iteration, so results are
// bit-identical for any thread count. tests/ verify these against the serial
// reference kernels in dygait/reference.hpp.

namespace dygait::kernels {

inline constexpr long kParallelCutoff = 1 << 13;

template <typename T>
Tensor4<T> conv3d_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Conv3Spec& s) {
    s.check_input(x);
    require_shape(w.c == s.c_out && w.t == s.c_in * s.k_t && w.h == s.k_h && w.w == s.k_w,
                  "conv3d weights", w.shape_str(), "spec");
    const int to_n = s.out_t(x.t), ho_n = s.out_h(x.h), wo_n = s.out_w(x.w);
    Tensor4<T> y(s.c_out, to_n, ho_n, wo_n);
    const long work = static_cast<long>(y.size()) * s.c_in * s.k_t * s.k_h * s.k_w;

#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelCutoff)
    for (int co = 0; co < s.c_out; ++co) {
        for (int to = 0; to < to_n; ++to) {
            for (int ho = 0; ho < ho_n; ++ho) {
                T* yrow = y.row(co, to, ho);
                for (int ci = 0; ci < s.c_in; ++ci) {
                    for (int kt = 0; kt < s.k_t; ++kt) {
                        const int ti = to * s.stride_t + kt - s.pad_t;
                        if (ti < 0 || ti >= x.t) continue;
                        for (int kh = 0; kh < s.k_h; ++kh) {
                            const int hi = ho + kh - s.pad_h;
                            if (hi < 0 || hi >= x.h) continue;
                            const T* xrow = x.row(ci, ti, hi);
                            for (int kw = 0; kw < s.k_w; ++kw) {
                                const T wgt = w.at(co, ci * s.k_t + kt, kh, kw);
                                const int shift = kw - s.pad_w;
                                const int lo = std::max(0, -shift);
                                const int hi_w = std::min(wo_n, x.w - shift);
                                for (int wo = lo; wo < hi_w; ++wo)
                                    yrow[wo] += wgt * xrow[wo + shift];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

// gx += dL/dx. Parallel over input channel/frame; each input row has a single writer.
template <typename T>
void conv3d_backward_input(const Tensor4<T>& gy, const Tensor4<T>& w, const Conv3Spec& s,
                           Tensor4<T>& gx) {
    const long work = static_cast<long>(gx.size()) * s.c_out * s.k_t * s.k_h * s.k_w;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelCutoff)
    for (int ci = 0; ci < gx.c; ++ci) {
        for (int ti = 0; ti < gx.t; ++ti) {
            for (int hi = 0; hi < gx.h; ++hi) {
                T* gxrow = gx.row(ci, ti, hi);
                for (int co = 0; co < s.c_out; ++co) {
                    for (int kt = 0; kt < s.k_t; ++kt) {
                        const int to_num = ti + s.pad_t - kt;
                        if (to_num < 0 || to_num % s.stride_t != 0) continue;
                        const int to = to_num / s.stride_t;
                        if (to >= gy.t) continue;
                        for (int kh = 0; kh < s.k_h; ++kh) {
                            const int ho = hi + s.pad_h - kh;
                            if (ho < 0 || ho >= gy.h) continue;
                            const T* gyrow = gy.row(co, to, ho);
                            for (int kw = 0; kw < s.k_w; ++kw) {
                                const T wgt = w.at(co, ci * s.k_t + kt, kh, kw);
                                const int shift = s.pad_w - kw;  // wo = wi + shift
                                const int lo = std::max(0, -shift);
                                const int hi_w = std::min(gx.w, gy.w - shift);
                                for (int wi = lo; wi < hi_w; ++wi)
                                    gxrow[wi] += wgt * gyrow[wi + shift];
                            }
                        }
                    }
                }
            }
        }
    }
}

// gw += dL/dw. Parallel over (c_out, c_in); each weight has a single writer.
template <typename T>
void conv3d_backward_weights(const Tensor4<T>& gy, const Tensor4<T>& x, const Conv3Spec& s,
                             Tensor4<T>& gw) {
    const long work = static_cast<long>(gy.size()) * s.c_in * s.k_t * s.k_h * s.k_w;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelCutoff)
    for (int co = 0; co < s.c_out; ++co) {
        for (int ci = 0; ci < s.c_in; ++ci) {
            for (int kt = 0; kt < s.k_t; ++kt) {
                for (int kh = 0; kh < s.k_h; ++kh) {
                    for (int kw = 0; kw < s.k_w; ++kw) {
                        T acc = T(0);
                        for (int to = 0; to < gy.t; ++to) {
                            const int ti = to * s.stride_t + kt - s.pad_t;
                            if (ti < 0 || ti >= x.t) continue;
                            for (int ho = 0; ho < gy.h; ++ho) {
                                const int hi = ho + kh - s.pad_h;
                                if (hi < 0 || hi >= x.h) continue;
                                const T* gyrow = gy.row(co, to, ho);
                                const T* xrow = x.row(ci, ti, hi);
                                const int shift = kw - s.pad_w;  // wi = wo + shift
                                const int lo = std::max(0, -shift);
                                const int hi_w = std::min(gy.w, x.w - shift);
                                for (int wo = lo; wo < hi_w; ++wo)
                                    acc += gyrow[wo] * xrow[wo + shift];
                            }
                        }
                        gw.at(co, ci * s.k_t + kt, kh, kw) += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor4<T> leaky_relu_forward(const Tensor4<T>& x, T slope) {
    Tensor4<T> y = Tensor4<T>::zeros_like(x);
    const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (long i = 0; i < n; ++i) {
        const T v = x.data[i];
        y.data[i] = v >= T(0) ? v : slope * v;
    }
    return y;
}

template <typename T>
void leaky_relu_backward(const Tensor4<T>& gy, const Tensor4<T>& x, T slope, Tensor4<T>& gx) {
    const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (long i = 0; i < n; ++i) gx.data[i] += x.data[i] >= T(0) ? gy.data[i] : slope * gy.data[i];
}

template <typename T>
Tensor4<T> mean_over_time_forward(const Tensor4<T>& x) {
    if (x.t < 1) throw ShapeError("mean_over_time: empty sequence " + x.shape_str());
    Tensor4<T> y(x.c, 1, x.h, x.w);
    const T inv = T(1) / static_cast<T>(x.t);
    const long n = static_cast<long>(x.c) * x.h;
#pragma omp parallel for collapse(2) schedule(static) if (n * x.w * x.t > kParallelCutoff)
    for (int ci = 0; ci < x.c; ++ci) {
        for (int hi = 0; hi < x.h; ++hi) {
            T* yrow = y.row(ci, 0, hi);
            for (int ti = 0; ti < x.t; ++ti) {
                const T* xrow = x.row(ci, ti, hi);
                for (int wi = 0; wi < x.w; ++wi) yrow[wi] += xrow[wi];
            }
            for (int wi = 0; wi < x.w; ++wi) yrow[wi] *= inv;
        }
    }
    return y;
}

template <typename T>
void mean_over_time_backward(const Tensor4<T>& gy, int in_t, Tensor4<T>& gx) {
    const T inv = T(1) / static_cast<T>(in_t);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(gx.size()) > kParallelCutoff)
    for (int ci = 0; ci < gx.c; ++ci) {
        for (int ti = 0; ti < gx.t; ++ti) {
            const T* gyf = gy.frame(ci, 0);
            T* gxf = gx.frame(ci, ti);
            const long m = static_cast<long>(gx.h) * gx.w;
            for (long i = 0; i < m; ++i) gxf[i] += inv * gyf[i];
        }
    }
}

// y[:,i] = x[:,i] - m[:,0] for every frame i.
template <typename T>
Tensor4<T> subtract_broadcast_forward(const Tensor4<T>& x, const Tensor4<T>& m) {
    require_shape(m.t == 1 && m.c == x.c && m.h == x.h && m.w == x.w, "subtract_broadcast",
                  x.shape_str(), m.shape_str());
    Tensor4<T> y = Tensor4<T>::zeros_like(x);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(x.size()) > kParallelCutoff)
    for (int ci = 0; ci < x.c; ++ci) {
        for (int ti = 0; ti < x.t; ++ti) {
            const T* xf = x.frame(ci, ti);
            const T* mf = m.frame(ci, 0);
            T* yf = y.frame(ci, ti);
            const long n = static_cast<long>(x.h) * x.w;
            for (long i = 0; i < n; ++i) yf[i] = xf[i] - mf[i];
        }
    }
    return y;
}

template <typename T>
void subtract_broadcast_backward(const Tensor4<T>& gy, Tensor4<T>& gx, Tensor4<T>& gm) {
    const long n = static_cast<long>(gy.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (long i = 0; i < n; ++i) gx.data[i] += gy.data[i];
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int ci = 0; ci < gy.c; ++ci) {
        T* gmf = gm.frame(ci, 0);
        const long m = static_cast<long>(gy.h) * gy.w;
        for (int ti = 0; ti < gy.t; ++ti) {
            const T* gyf = gy.frame(ci, ti);
            for (long i = 0; i < m; ++i) gmf[i] -= gyf[i];
        }
    }
}

// Extends the sequence by p copies of the first and last frame on each end.
// Repeating the edges (instead of zero frames) keeps a temporally constant
// sequence constant through padded convolutions.
template <typename T>
Tensor4<T> pad_time_edge_forward(const Tensor4<T>& x, int p) {
    if (p < 0) throw ShapeError("pad_time_edge: negative pad");
    Tensor4<T> y(x.c, x.t + 2 * p, x.h, x.w);
    const long plane = static_cast<long>(x.h) * x.w;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(y.size()) > kParallelCutoff)
    for (int ci = 0; ci < x.c; ++ci) {
        for (int to = 0; to < x.t + 2 * p; ++to) {
            const int ti = std::clamp(to - p, 0, x.t - 1);
            std::copy_n(x.frame(ci, ti), plane, y.frame(ci, to));
        }
    }
    return y;
}

template <typename T>
void pad_time_edge_backward(const Tensor4<T>& gy, int p, Tensor4<T>& gx) {
    const long plane = static_cast<long>(gx.h) * gx.w;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(gx.size()) > kParallelCutoff)
    for (int ci = 0; ci < gx.c; ++ci) {
        for (int ti = 0; ti < gx.t; ++ti) {
            T* dst = gx.frame(ci, ti);
            const T* src = gy.frame(ci, ti + p);
            for (long i = 0; i < plane; ++i) dst[i] += src[i];
            if (ti == 0)
                for (int e = 0; e < p; ++e) {
                    const T* extra = gy.frame(ci, e);
                    for (long i = 0; i < plane; ++i) dst[i] += extra[i];
                }
            if (ti == gx.t - 1)
                for (int e = 0; e < p; ++e) {
                    const T* extra = gy.frame(ci, gx.t + p + e);
                    for (long i = 0; i < plane; ++i) dst[i] += extra[i];
                }
        }
    }
}

// Elementwise max across frames. Ties resolve to the earliest frame so the
// backward routing is deterministic.
template <typename T>
Tensor4<T> max_over_time_forward(const Tensor4<T>& x, std::vector<int>* argmax = nullptr) {
    if (x.t < 1) throw ShapeError("max_over_time: empty sequence " + x.shape_str());
    Tensor4<T> y(x.c, 1, x.h, x.w);
    if (argmax) argmax->assign(y.size(), 0);
    const long plane = static_cast<long>(x.h) * x.w;
#pragma omp parallel for schedule(static) if (static_cast<long>(x.size()) > kParallelCutoff)
    for (int ci = 0; ci < x.c; ++ci) {
        T* yf = y.frame(ci, 0);
        int* am = argmax ? argmax->data() + static_cast<long>(ci) * plane : nullptr;
        const T* x0 = x.frame(ci, 0);
        for (long i = 0; i < plane; ++i) yf[i] = x0[i];
        for (int ti = 1; ti < x.t; ++ti) {
            const T* xf = x.frame(ci, ti);
            for (long i = 0; i < plane; ++i) {
                if (xf[i] > yf[i]) {
                    yf[i] = xf[i];
                    if (am) am[i] = ti;
                }
            }
        }
    }
    return y;
}

template <typename T>
void max_over_time_backward(const Tensor4<T>& gy, const std::vector<int>& argmax, Tensor4<T>& gx) {
    const long plane = static_cast<long>(gx.h) * gx.w;
#pragma omp parallel for schedule(static) if (static_cast<long>(gy.size()) > kParallelCutoff)
    for (int ci = 0; ci < gx.c; ++ci) {
        const T* gyf = gy.frame(ci, 0);
        const int* am = argmax.data() + static_cast<long>(ci) * plane;
        for (long i = 0; i < plane; ++i) gx.frame(ci, am[i])[i] += gyf[i];
    }
}

// Non-overlapping spatial max pooling; H and W must divide by the window.
template <typename T>
Tensor4<T> maxpool_spatial_forward(const Tensor4<T>& x, int wh, int ww,
                                   std::vector<int>* argmax = nullptr) {
    if (wh < 1 || ww < 1 || x.h % wh != 0 || x.w % ww != 0)
        throw ShapeError("maxpool_spatial: " + x.shape_str() + " not divisible by window (" +
                         std::to_string(wh) + "," + std::to_string(ww) + ")");
    Tensor4<T> y(x.c, x.t, x.h / wh, x.w / ww);
    if (argmax) argmax->assign(y.size(), 0);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(x.size()) > kParallelCutoff)
    for (int ci = 0; ci < x.c; ++ci) {
        for (int ti = 0; ti < x.t; ++ti) {
            for (int ho = 0; ho < y.h; ++ho) {
                for (int wo = 0; wo < y.w; ++wo) {
                    T best = x.at(ci, ti, ho * wh, wo * ww);
                    int best_idx = (ho * wh) * x.w + wo * ww;
                    for (int dh = 0; dh < wh; ++dh) {
                        const T* xrow = x.row(ci, ti, ho * wh + dh);
                        for (int dw = 0; dw < ww; ++dw) {
                            const T v = xrow[wo * ww + dw];
                            if (v > best) {
                                best = v;
                                best_idx = (ho * wh + dh) * x.w + wo * ww + dw;
                            }
                        }
                    }
                    y.at(ci, ti, ho, wo) = best;
                    if (argmax) (*argmax)[y.idx(ci, ti, ho, wo)] = best_idx;
                }
            }
        }
    }
    return y;
}

template <typename T>
void maxpool_spatial_backward(const Tensor4<T>& gy, const std::vector<int>& argmax,
                              Tensor4<T>& gx) {
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(gx.size()) > kParallelCutoff)
    for (int ci = 0; ci < gy.c; ++ci) {
        for (int ti = 0; ti < gy.t; ++ti) {
            T* gxf = gx.frame(ci, ti);
            const T* gyf = gy.frame(ci, ti);
            const int* am = argmax.data() + (static_cast<long>(ci) * gy.t + ti) * gy.h * gy.w;
            const long n = static_cast<long>(gy.h) * gy.w;
            for (long i = 0; i < n; ++i) gxf[am[i]] += gyf[i];
        }
    }
}

template <typename T>
Tensor4<T> add_forward(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_shape(a.same_shape(b), "add", a.shape_str(), b.shape_str());
    Tensor4<T> y = Tensor4<T>::zeros_like(a);
    const long n = static_cast<long>(a.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (long i = 0; i < n; ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

template <typename T>
void accumulate(Tensor4<T>& dst, const Tensor4<T>& src) {
    const long n = static_cast<long>(dst.size());
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (long i = 0; i < n; ++i) dst.data[i] += src.data[i];
}

// Strip pooling for Horizontal Mapping. Input (C,1,H,W) is cut into `strips`
// horizontal bands; each band reduces to a C-vector of per-channel max+mean.
// Output dims (strips,1,1,C).
template <typename T>
Tensor4<T> strip_pool_forward(const Tensor4<T>& x, int strips,
                              std::vector<int>* argmax = nullptr) {
    if (x.t != 1) throw ShapeError("strip_pool: expected T=1, got " + x.shape_str());
    if (strips < 1 || x.h % strips != 0)
        throw ShapeError("strip_pool: H in " + x.shape_str() + " not divisible by strips=" +
                         std::to_string(strips));
    const int band = x.h / strips;
    Tensor4<T> y(strips, 1, 1, x.c);
    if (argmax) argmax->assign(static_cast<size_t>(strips) * x.c, 0);
    const T inv = T(1) / static_cast<T>(band * x.w);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(x.size()) > kParallelCutoff)
    for (int s = 0; s < strips; ++s) {
        for (int ci = 0; ci < x.c; ++ci) {
            T best = x.at(ci, 0, s * band, 0);
            int best_idx = (s * band) * x.w;
            T sum = T(0);
            for (int hi = s * band; hi < (s + 1) * band; ++hi) {
                const T* xrow = x.row(ci, 0, hi);
                for (int wi = 0; wi < x.w; ++wi) {
                    sum += xrow[wi];
                    if (xrow[wi] > best) {
                        best = xrow[wi];
                        best_idx = hi * x.w + wi;
                    }
                }
            }
            y.at(s, 0, 0, ci) = best + sum * inv;
            if (argmax) (*argmax)[static_cast<size_t>(s) * x.c + ci] = best_idx;
        }
    }
    return y;
}

template <typename T>
void strip_pool_backward(const Tensor4<T>& gy, const std::vector<int>& argmax, int strips,
                         Tensor4<T>& gx) {
    const int band = gx.h / strips;
    const T inv = T(1) / static_cast<T>(band * gx.w);
#pragma omp parallel for schedule(static) if (static_cast<long>(gx.size()) > kParallelCutoff)
    for (int ci = 0; ci < gx.c; ++ci) {
        for (int s = 0; s < strips; ++s) {
            const T g = gy.at(s, 0, 0, ci);
            gx.frame(ci, 0)[argmax[static_cast<size_t>(s) * gx.c + ci]] += g;
            const T gmean = g * inv;
            for (int hi = s * band; hi < (s + 1) * band; ++hi) {
                T* gxrow = gx.row(ci, 0, hi);
                for (int wi = 0; wi < gx.w; ++wi) gxrow[wi] += gmean;
            }
        }
    }
}

// Bilinear resize of one (h,w) plane, half-pixel-center convention. Forward
// only; used for presenting activation heatmaps, not inside the network.
template <typename T>
std::vector<T> bilinear_resize_plane(const T* src, int sh, int sw, int oh, int ow) {
    std::vector<T> out(static_cast<size_t>(oh) * ow);
    const double fy = static_cast<double>(sh) / oh;
    const double fx = static_cast<double>(sw) / ow;
    for (int y = 0; y < oh; ++y) {
        double sy = (y + 0.5) * fy - 0.5;
        sy = std::max(0.0, std::min(sy, static_cast<double>(sh - 1)));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = sy - y0;
        for (int x = 0; x < ow; ++x) {
            double sx = (x + 0.5) * fx - 0.5;
            sx = std::max(0.0, std::min(sx, static_cast<double>(sw - 1)));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = sx - x0;
            const double top = (1.0 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1];
            const double bot = (1.0 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1];
            out[static_cast<size_t>(y) * ow + x] = static_cast<T>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

// y = W x with W stored as (n,1,1,m) and x as (m,1,1,1). No bias.
template <typename T>
Tensor4<T> matvec_forward(const Tensor4<T>& w, const Tensor4<T>& x) {
    require_shape(w.w == x.c && x.t == 1 && x.h == 1 && x.w == 1, "matvec", w.shape_str(),
                  x.shape_str());
    Tensor4<T> y(w.c, 1, 1, 1);
    for (int i = 0; i < w.c; ++i) {
        const T* wrow = w.row(i, 0, 0);
        T acc = T(0);
        for (int j = 0; j < w.w; ++j) acc += wrow[j] * x.data[j];
        y.data[i] = acc;
    }
    return y;
}

template <typename T>
void matvec_backward(const Tensor4<T>& gy, const Tensor4<T>& w, const Tensor4<T>& x,
                     Tensor4<T>& gw, Tensor4<T>& gx) {
    for (int i = 0; i < w.c; ++i) {
        const T g = gy.data[i];
        T* gwrow = gw.row(i, 0, 0);
        const T* wrow = w.row(i, 0, 0);
        for (int j = 0; j < w.w; ++j) {
            gwrow[j] += g * x.data[j];
            gx.data[j] += g * wrow[j];
        }
    }
}

}  // namespace dygait::kernels
