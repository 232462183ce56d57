#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dygait {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense 4-D array, row-major (C,T,H,W) with W innermost.
template <typename T>
struct Tensor4 {
    int c = 0, t = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int c_, int t_, int h_, int w_, T fill = T(0))
        : c(c_), t(t_), h(h_), w(w_), data(checked_len(c_, t_, h_, w_), fill) {}

    static size_t checked_len(int c_, int t_, int h_, int w_) {
        if (c_ < 1 || t_ < 1 || h_ < 1 || w_ < 1)
            throw ShapeError("Tensor4: non-positive dimension in (" + std::to_string(c_) + "," +
                             std::to_string(t_) + "," + std::to_string(h_) + "," +
                             std::to_string(w_) + ")");
        return static_cast<size_t>(c_) * t_ * h_ * w_;
    }

    static Tensor4 zeros_like(const Tensor4& o) { return Tensor4(o.c, o.t, o.h, o.w); }

    size_t size() const { return data.size(); }

    size_t idx(int ci, int ti, int hi, int wi) const {
        return ((static_cast<size_t>(ci) * t + ti) * h + hi) * w + wi;
    }
    T& at(int ci, int ti, int hi, int wi) { return data[idx(ci, ti, hi, wi)]; }
    T at(int ci, int ti, int hi, int wi) const { return data[idx(ci, ti, hi, wi)]; }

    T* frame(int ci, int ti) { return data.data() + (static_cast<size_t>(ci) * t + ti) * h * w; }
    const T* frame(int ci, int ti) const {
        return data.data() + (static_cast<size_t>(ci) * t + ti) * h * w;
    }
    T* row(int ci, int ti, int hi) { return data.data() + idx(ci, ti, hi, 0); }
    const T* row(int ci, int ti, int hi) const { return data.data() + idx(ci, ti, hi, 0); }

    bool same_shape(const Tensor4& o) const {
        return c == o.c && t == o.t && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(c) + "," + std::to_string(t) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(c, t, h, w);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline void require_shape(bool ok, const std::string& what, const std::string& a,
                          const std::string& b) {
    if (!ok) throw ShapeError(what + ": " + a + " vs " + b);
}

// Geometry of one 3-D convolution. Weights live separately as a Tensor4 of
// dims (c_out, c_in*k_t, k_h, k_w); flat layout matches row-major
// (c_out, c_in, k_t, k_h, k_w).
struct Conv3Spec {
    int c_out = 0, c_in = 0;
    int k_t = 1, k_h = 1, k_w = 1;
    int stride_t = 1;
    int pad_t = 0, pad_h = 0, pad_w = 0;

    void validate() const {
        if (c_out < 1 || c_in < 1) throw ShapeError("Conv3Spec: channel counts must be positive");
        if (k_t % 2 == 0 || k_h % 2 == 0 || k_w % 2 == 0)
            throw ShapeError("Conv3Spec: kernel dims must be odd, got (" + std::to_string(k_t) +
                             "," + std::to_string(k_h) + "," + std::to_string(k_w) + ")");
        if (stride_t < 1) throw ShapeError("Conv3Spec: temporal stride must be >= 1");
        if (pad_t < 0 || pad_h < 0 || pad_w < 0) throw ShapeError("Conv3Spec: negative padding");
    }

    size_t weight_count() const {
        return static_cast<size_t>(c_out) * c_in * k_t * k_h * k_w;
    }

    // Weight tensor layout used throughout: (c_out, c_in*k_t, k_h, k_w).
    template <typename T>
    Tensor4<T> make_weights() const {
        return Tensor4<T>(c_out, c_in * k_t, k_h, k_w);
    }

    int out_t(int in_t) const { return (in_t + 2 * pad_t - k_t) / stride_t + 1; }
    int out_h(int in_h) const { return in_h + 2 * pad_h - k_h + 1; }
    int out_w(int in_w) const { return in_w + 2 * pad_w - k_w + 1; }

    template <typename T>
    void check_input(const Tensor4<T>& x) const {
        if (x.c != c_in)
            throw ShapeError("conv3d: input channels " + x.shape_str() + " vs kernel c_in=" +
                             std::to_string(c_in));
        if (x.t + 2 * pad_t < k_t || x.h + 2 * pad_h < k_h || x.w + 2 * pad_w < k_w)
            throw ShapeError("conv3d: input " + x.shape_str() + " too small for kernel (" +
                             std::to_string(k_t) + "," + std::to_string(k_h) + "," +
                             std::to_string(k_w) + ")");
    }
};

// 3-D convolution kernel: geometry plus owned weights. No bias term by
// construction; a temporally constant input with zero dynamics therefore
// maps to exactly zero through the dynamic branch.
template <typename T>
struct ConvKernel3 {
    Conv3Spec spec;
    Tensor4<T> weights;

    ConvKernel3() = default;
    explicit ConvKernel3(const Conv3Spec& s) : spec(s), weights(s.template make_weights<T>()) {
        spec.validate();
    }

    T& wt(int co, int ci, int kt, int kh, int kw) {
        return weights.at(co, ci * spec.k_t + kt, kh, kw);
    }
    T wt(int co, int ci, int kt, int kh, int kw) const {
        return weights.at(co, ci * spec.k_t + kt, kh, kw);
    }
};

}  // namespace dygait
