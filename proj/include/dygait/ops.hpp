#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/kernels.hpp"
#include "dygait/tape.hpp"

// Tape-building wrappers around the kernels, one per differentiable network
// operation, plus the fused Batch-All triplet node. Each returns the id of
// the node it appended. Backward closures capture parent ids by value, never
// node references.

namespace dygait::ops {

template <typename T>
int conv3d(Tape<T>& tp, int x, int w, const Conv3Spec& s) {
    Tensor4<T> y = kernels::conv3d_forward(tp.val(x), tp.val(w), s);
    return tp.push(std::move(y), {x, w}, [x, w, s](Tape<T>& t, int self) {
        kernels::conv3d_backward_input(t.grad(self), t.val(w), s, t.grad_mut(x));
        kernels::conv3d_backward_weights(t.grad(self), t.val(x), s, t.grad_mut(w));
    });
}

template <typename T>
int leaky_relu(Tape<T>& tp, int x, T slope) {
    Tensor4<T> y = kernels::leaky_relu_forward(tp.val(x), slope);
    return tp.push(std::move(y), {x}, [x, slope](Tape<T>& t, int self) {
        kernels::leaky_relu_backward(t.grad(self), t.val(x), slope, t.grad_mut(x));
    });
}

template <typename T>
int mean_over_time(Tape<T>& tp, int x) {
    Tensor4<T> y = kernels::mean_over_time_forward(tp.val(x));
    const int in_t = tp.val(x).t;
    return tp.push(std::move(y), {x}, [x, in_t](Tape<T>& t, int self) {
        kernels::mean_over_time_backward(t.grad(self), in_t, t.grad_mut(x));
    });
}

template <typename T>
int subtract_broadcast(Tape<T>& tp, int x, int m) {
    Tensor4<T> y = kernels::subtract_broadcast_forward(tp.val(x), tp.val(m));
    return tp.push(std::move(y), {x, m}, [x, m](Tape<T>& t, int self) {
        kernels::subtract_broadcast_backward(t.grad(self), t.grad_mut(x), t.grad_mut(m));
    });
}

// Temporal mean-centering in one node: y_i = x_i - mean_t(x). Computed as
// d_i = x_i - x_0 followed by d_i - mean_t(d), which is algebraically the
// same but yields exact zeros for temporally constant input (d_i is exactly
// 0, so no rounding from the mean can leak through). The Jacobian is the
// centering projector, so backward is g_i - mean_t(g).
template <typename T>
int center_over_time(Tape<T>& tp, int x) {
    const Tensor4<T>& xv = tp.val(x);
    Tensor4<T> d = Tensor4<T>::zeros_like(xv);
    const long plane = static_cast<long>(xv.h) * xv.w;
    for (int ci = 0; ci < xv.c; ++ci) {
        const T* x0 = xv.frame(ci, 0);
        for (int ti = 0; ti < xv.t; ++ti) {
            const T* xf = xv.frame(ci, ti);
            T* df = d.frame(ci, ti);
            for (long i = 0; i < plane; ++i) df[i] = xf[i] - x0[i];
        }
    }
    Tensor4<T> m = kernels::mean_over_time_forward(d);
    Tensor4<T> y = kernels::subtract_broadcast_forward(d, m);
    return tp.push(std::move(y), {x}, [x](Tape<T>& t, int self) {
        const Tensor4<T>& g = t.grad(self);
        Tensor4<T> gm = kernels::mean_over_time_forward(g);
        Tensor4<T> gc = kernels::subtract_broadcast_forward(g, gm);
        kernels::accumulate(t.grad_mut(x), gc);
    });
}

template <typename T>
int pad_time_edge(Tape<T>& tp, int x, int p) {
    Tensor4<T> y = kernels::pad_time_edge_forward(tp.val(x), p);
    return tp.push(std::move(y), {x}, [x, p](Tape<T>& t, int self) {
        kernels::pad_time_edge_backward(t.grad(self), p, t.grad_mut(x));
    });
}

template <typename T>
int max_over_time(Tape<T>& tp, int x) {
    auto argmax = std::make_shared<std::vector<int>>();
    Tensor4<T> y = kernels::max_over_time_forward(tp.val(x), argmax.get());
    return tp.push(std::move(y), {x}, [x, argmax](Tape<T>& t, int self) {
        kernels::max_over_time_backward(t.grad(self), *argmax, t.grad_mut(x));
    });
}

template <typename T>
int maxpool_spatial(Tape<T>& tp, int x, int wh, int ww) {
    auto argmax = std::make_shared<std::vector<int>>();
    Tensor4<T> y = kernels::maxpool_spatial_forward(tp.val(x), wh, ww, argmax.get());
    return tp.push(std::move(y), {x}, [x, argmax](Tape<T>& t, int self) {
        kernels::maxpool_spatial_backward(t.grad(self), *argmax, t.grad_mut(x));
    });
}

template <typename T>
int add(Tape<T>& tp, int a, int b) {
    Tensor4<T> y = kernels::add_forward(tp.val(a), tp.val(b));
    return tp.push(std::move(y), {a, b}, [a, b](Tape<T>& t, int self) {
        kernels::accumulate(t.grad_mut(a), t.grad(self));
        kernels::accumulate(t.grad_mut(b), t.grad(self));
    });
}

template <typename T>
int strip_pool(Tape<T>& tp, int x, int strips) {
    auto argmax = std::make_shared<std::vector<int>>();
    Tensor4<T> y = kernels::strip_pool_forward(tp.val(x), strips, argmax.get());
    return tp.push(std::move(y), {x}, [x, strips, argmax](Tape<T>& t, int self) {
        kernels::strip_pool_backward(t.grad(self), *argmax, strips, t.grad_mut(x));
    });
}

template <typename T>
int matvec(Tape<T>& tp, int w, int x) {
    Tensor4<T> y = kernels::matvec_forward(tp.val(w), tp.val(x));
    return tp.push(std::move(y), {w, x}, [w, x](Tape<T>& t, int self) {
        kernels::matvec_backward(t.grad(self), t.val(w), t.val(x), t.grad_mut(w), t.grad_mut(x));
    });
}

// y = W x + b with b of dims (n,1,1,1).
template <typename T>
int affine(Tape<T>& tp, int w, int x, int b) {
    Tensor4<T> y = kernels::matvec_forward(tp.val(w), tp.val(x));
    require_shape(tp.val(b).same_shape(y), "affine bias", tp.val(b).shape_str(), y.shape_str());
    for (size_t i = 0; i < y.size(); ++i) y.data[i] += tp.val(b).data[i];
    return tp.push(std::move(y), {w, x, b}, [w, x, b](Tape<T>& t, int self) {
        kernels::matvec_backward(t.grad(self), t.val(w), t.val(x), t.grad_mut(w), t.grad_mut(x));
        kernels::accumulate(t.grad_mut(b), t.grad(self));
    });
}

// Copies channel row `ch` of a (C,1,1,W) tensor out as a (W,1,1,1) vector.
template <typename T>
int slice_channel_vec(Tape<T>& tp, int x, int ch) {
    const Tensor4<T>& xv = tp.val(x);
    if (xv.t != 1 || xv.h != 1 || ch < 0 || ch >= xv.c)
        throw ShapeError("slice_channel_vec: bad slice " + std::to_string(ch) + " of " +
                         xv.shape_str());
    Tensor4<T> y(xv.w, 1, 1, 1);
    const T* src = xv.row(ch, 0, 0);
    for (int i = 0; i < xv.w; ++i) y.data[i] = src[i];
    return tp.push(std::move(y), {x}, [x, ch](Tape<T>& t, int self) {
        const Tensor4<T>& g = t.grad(self);
        T* dst = t.grad_mut(x).row(ch, 0, 0);
        for (size_t i = 0; i < g.size(); ++i) dst[i] += g.data[i];
    });
}

// Stacks N vectors of dims (d,1,1,1) into (N,1,1,d).
template <typename T>
int stack_vecs(Tape<T>& tp, const std::vector<int>& ids) {
    if (ids.empty()) throw ShapeError("stack_vecs: no inputs");
    const int d = tp.val(ids[0]).c;
    Tensor4<T> y(static_cast<int>(ids.size()), 1, 1, d);
    for (size_t r = 0; r < ids.size(); ++r) {
        const Tensor4<T>& v = tp.val(ids[r]);
        require_shape(v.c == d && v.t == 1 && v.h == 1 && v.w == 1, "stack_vecs", v.shape_str(),
                      tp.val(ids[0]).shape_str());
        for (int i = 0; i < d; ++i) y.at(static_cast<int>(r), 0, 0, i) = v.data[i];
    }
    return tp.push(std::move(y), ids, [ids, d](Tape<T>& t, int self) {
        const Tensor4<T>& g = t.grad(self);
        for (size_t r = 0; r < ids.size(); ++r) {
            T* dst = t.grad_mut(ids[r]).data.data();
            const T* src = g.row(static_cast<int>(r), 0, 0);
            for (int i = 0; i < d; ++i) dst[i] += src[i];
        }
    });
}

// Scalar y = sum_i coeff[i] * val(ids[i]); every input must be scalar.
template <typename T>
int weighted_sum(Tape<T>& tp, const std::vector<int>& ids, const std::vector<T>& coeff) {
    if (ids.empty() || ids.size() != coeff.size())
        throw ShapeError("weighted_sum: ids/coeff size mismatch");
    Tensor4<T> y(1, 1, 1, 1);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (tp.val(ids[i]).size() != 1)
            throw ShapeError("weighted_sum: non-scalar input " + tp.val(ids[i]).shape_str());
        y.data[0] += coeff[i] * tp.val(ids[i]).data[0];
    }
    return tp.push(std::move(y), ids, [ids, coeff](Tape<T>& t, int self) {
        const T g = t.grad(self).data[0];
        for (size_t i = 0; i < ids.size(); ++i) t.grad_mut(ids[i]).data[0] += coeff[i] * g;
    });
}

// Scalar projection y = sum_i r[i]*x[i] against a fixed (non-learned) tensor.
// Reduces any op output to a scalar for gradient checking.
template <typename T>
int inner_const(Tape<T>& tp, int x, std::shared_ptr<const Tensor4<T>> r) {
    const Tensor4<T>& xv = tp.val(x);
    require_shape(xv.same_shape(*r), "inner_const", xv.shape_str(), r->shape_str());
    Tensor4<T> y(1, 1, 1, 1);
    for (size_t i = 0; i < xv.size(); ++i) y.data[0] += r->data[i] * xv.data[i];
    return tp.push(std::move(y), {x}, [x, r](Tape<T>& t, int self) {
        const T g = t.grad(self).data[0];
        Tensor4<T>& gx = t.grad_mut(x);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += g * r->data[i];
    });
}

// Numerically stable -log(softmax(logits)[label]); logits dims (n,1,1,1).
template <typename T>
int softmax_ce(Tape<T>& tp, int logits, int label) {
    const Tensor4<T>& l = tp.val(logits);
    if (l.t != 1 || l.h != 1 || l.w != 1) throw ShapeError("softmax_ce: logits " + l.shape_str());
    if (label < 0 || label >= l.c)
        throw DegenerateBatchError("softmax_ce: label " + std::to_string(label) + " outside [0," +
                                   std::to_string(l.c) + ")");
    T mx = l.data[0];
    for (int i = 1; i < l.c; ++i) mx = std::max(mx, l.data[i]);
    T sum = T(0);
    for (int i = 0; i < l.c; ++i) sum += std::exp(l.data[i] - mx);
    const T lse = mx + std::log(sum);
    Tensor4<T> y(1, 1, 1, 1);
    y.data[0] = lse - l.data[label];
    return tp.push(std::move(y), {logits}, [logits, label, lse](Tape<T>& t, int self) {
        const T g = t.grad(self).data[0];
        const Tensor4<T>& lv = t.val(logits);
        Tensor4<T>& gl = t.grad_mut(logits);
        for (int i = 0; i < lv.c; ++i) {
            T p = std::exp(lv.data[i] - lse);
            gl.data[i] += g * (p - (i == label ? T(1) : T(0)));
        }
    });
}

struct TripletStats {
    double active_fraction = 0.0;
    long active = 0;
    long total = 0;
};

// Fused Batch-All triplet loss over per-strip embeddings. Each input id is a
// (S,1,1,d) embedding. Per strip: Euclidean distances between strip vectors,
// hinge [D(a,p) - D(a,n) + m]_+ over all valid (a,p,n), mean over strictly
// positive hinges (0 if none); result is the mean over strips.
template <typename T>
int triplet_batch_all(Tape<T>& tp, const std::vector<int>& emb_ids, const std::vector<int>& labels,
                      T margin, TripletStats* stats = nullptr) {
    const int n = static_cast<int>(emb_ids.size());
    if (n < 2 || labels.size() != emb_ids.size())
        throw DegenerateBatchError("triplet_batch_all: batch of " + std::to_string(n));
    const Tensor4<T>& e0 = tp.val(emb_ids[0]);
    const int strips = e0.c, d = e0.w;
    for (int i = 1; i < n; ++i)
        require_shape(tp.val(emb_ids[i]).same_shape(e0), "triplet embeddings",
                      tp.val(emb_ids[i]).shape_str(), e0.shape_str());

    long valid = 0;
    for (int a = 0; a < n; ++a)
        for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q)
                if (a != p && labels[a] == labels[p] && labels[q] != labels[a]) ++valid;
    if (valid == 0) throw DegenerateBatchError("triplet_batch_all: no valid triplet in batch");

    // dist[s][i*n+j]; kept for the backward pass.
    auto dist = std::make_shared<std::vector<std::vector<T>>>(
        static_cast<size_t>(strips), std::vector<T>(static_cast<size_t>(n) * n, T(0)));
    auto strip_active = std::make_shared<std::vector<long>>(static_cast<size_t>(strips), 0);

    T loss = T(0);
    long active_total = 0;
    for (int s = 0; s < strips; ++s) {
        auto& D = (*dist)[static_cast<size_t>(s)];
        for (int i = 0; i < n; ++i) {
            const T* u = tp.val(emb_ids[i]).row(s, 0, 0);
            for (int j = i + 1; j < n; ++j) {
                const T* v = tp.val(emb_ids[j]).row(s, 0, 0);
                T acc = T(0);
                for (int k = 0; k < d; ++k) acc += (u[k] - v[k]) * (u[k] - v[k]);
                const T dd = std::sqrt(acc);
                D[static_cast<size_t>(i) * n + j] = dd;
                D[static_cast<size_t>(j) * n + i] = dd;
            }
        }
        T sum = T(0);
        long active = 0;
        for (int a = 0; a < n; ++a)
            for (int p = 0; p < n; ++p) {
                if (a == p || labels[a] != labels[p]) continue;
                for (int q = 0; q < n; ++q) {
                    if (labels[q] == labels[a]) continue;
                    const T h = D[static_cast<size_t>(a) * n + p] -
                                D[static_cast<size_t>(a) * n + q] + margin;
                    if (h > T(0)) {
                        sum += h;
                        ++active;
                    }
                }
            }
        (*strip_active)[static_cast<size_t>(s)] = active;
        active_total += active;
        if (active > 0) loss += sum / static_cast<T>(active);
    }
    loss /= static_cast<T>(strips);
    if (stats) {
        stats->active = active_total;
        stats->total = valid * strips;
        stats->active_fraction = static_cast<double>(active_total) / static_cast<double>(stats->total);
    }

    Tensor4<T> y(1, 1, 1, 1);
    y.data[0] = loss;
    return tp.push(std::move(y), emb_ids,
                   [emb_ids, labels, margin, dist, strip_active, n, strips, d](Tape<T>& t, int self) {
        const T g = t.grad(self).data[0];
        if (g == T(0)) return;
        std::vector<T> coef(static_cast<size_t>(n) * n);
        for (int s = 0; s < strips; ++s) {
            const long active = (*strip_active)[static_cast<size_t>(s)];
            if (active == 0) continue;
            const auto& D = (*dist)[static_cast<size_t>(s)];
            const T w = g / (static_cast<T>(strips) * static_cast<T>(active));
            std::fill(coef.begin(), coef.end(), T(0));
            for (int a = 0; a < n; ++a)
                for (int p = 0; p < n; ++p) {
                    if (a == p || labels[a] != labels[p]) continue;
                    for (int q = 0; q < n; ++q) {
                        if (labels[q] == labels[a]) continue;
                        const T h = D[static_cast<size_t>(a) * n + p] -
                                    D[static_cast<size_t>(a) * n + q] + margin;
                        if (h > T(0)) {
                            coef[static_cast<size_t>(a) * n + p] += w;
                            coef[static_cast<size_t>(a) * n + q] -= w;
                        }
                    }
                }
            // dD(i,j)/du_i = (u_i - u_j)/D; coefficients for (i,j) and (j,i)
            // act on the same distance, so fold them together.
            for (int i = 0; i < n; ++i) {
                const T* u = t.val(emb_ids[i]).row(s, 0, 0);
                T* gu = t.grad_mut(emb_ids[i]).row(s, 0, 0);
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const T c = coef[static_cast<size_t>(i) * n + j] +
                                coef[static_cast<size_t>(j) * n + i];
                    if (c == T(0)) continue;
                    const T dd = D[static_cast<size_t>(i) * n + j];
                    if (dd < T(1e-12)) continue;  // coincident vectors: subgradient 0
                    const T* v = t.val(emb_ids[j]).row(s, 0, 0);
                    const T sc = c / dd;
                    for (int k = 0; k < d; ++k) gu[k] += sc * (u[k] - v[k]);
                }
            }
        }
    });
}

}  // namespace dygait::ops
