#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/loss.hpp"
#include "dygait/model.hpp"
#include "dygait/preprocess.hpp"
#include "dygait/rng.hpp"
#include "dygait/tensor.hpp"

// P*K identity-balanced batch sampling and the optimization loop. One step
// owns one tape: P*K sequence forwards feed the combined loss, backward fills
// the gradients, and the optimizer mutates the parameters in place.

namespace dygait::train {

struct TrainConfig {
    int p = 4, k = 4;
    int clip_len = 30;
    long iterations = 600;
    enum class Opt { sgd, adam } optimizer = Opt::sgd;
    double lr = 0.1;
    double momentum = 0.9;
    double adam_beta1 = 0.9, adam_beta2 = 0.999;
    double margin = 0.2;
    uint64_t seed = 1;
    long checkpoint_every = 100;

    void validate() const {
        if (p < 2) throw ConfigError("train: p must be at least 2");
        if (k < 2) throw ConfigError("train: k must be at least 2");
        if (clip_len < 3) throw ConfigError("train: clip_len must be at least 3");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (margin <= 0.0) throw ConfigError("train: margin must be positive");
        if (iterations < 0) throw ConfigError("train: iterations must be non-negative");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum in [0,1)");
        if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0)
            throw ConfigError("train: adam betas in (0,1)");
    }
};

inline TrainConfig::Opt parse_optimizer(const std::string& s) {
    if (s == "sgd") return TrainConfig::Opt::sgd;
    if (s == "adam") return TrainConfig::Opt::adam;
    throw ConfigError("unknown optimizer '" + s + "' (sgd|adam)");
}

inline std::string to_string(TrainConfig::Opt o) {
    return o == TrainConfig::Opt::sgd ? "sgd" : "adam";
}

struct Pick {
    size_t record;  // manifest index
    int label;      // dense class index of the subject
};

// P distinct training subjects without replacement, then K sequences each:
// distinct when the subject has >= K, uniform with replacement otherwise.
inline std::vector<Pick> pk_sample(const prep::DatasetManifest& m, int p, int k, Rng& rng) {
    const auto subjects = m.train_subjects();
    if (static_cast<int>(subjects.size()) < p)
        throw ConfigError("pk_sample: " + std::to_string(subjects.size()) +
                          " training subjects but p=" + std::to_string(p));

    std::map<std::string, std::vector<size_t>> by_subject;
    for (size_t i : m.partition_indices("train")) by_subject[m.records[i].subject].push_back(i);

    std::vector<int> subj_idx(subjects.size());
    for (size_t i = 0; i < subjects.size(); ++i) subj_idx[i] = static_cast<int>(i);
    for (int i = 0; i < p; ++i) {
        const int j = i + static_cast<int>(rng.next_int(0, static_cast<int64_t>(subjects.size()) - 1 - i));
        std::swap(subj_idx[static_cast<size_t>(i)], subj_idx[static_cast<size_t>(j)]);
    }

    std::vector<Pick> batch;
    batch.reserve(static_cast<size_t>(p) * k);
    for (int i = 0; i < p; ++i) {
        const int label = subj_idx[static_cast<size_t>(i)];
        const auto& seqs = by_subject.at(subjects[static_cast<size_t>(label)]);
        const int n = static_cast<int>(seqs.size());
        if (n >= k) {
            std::vector<size_t> pool = seqs;
            for (int j = 0; j < k; ++j) {
                const int r = j + static_cast<int>(rng.next_int(0, n - 1 - j));
                std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(r)]);
                batch.push_back({pool[static_cast<size_t>(j)], label});
            }
        } else {
            for (int j = 0; j < k; ++j)
                batch.push_back({seqs[static_cast<size_t>(rng.next_int(0, n - 1))], label});
        }
    }
    return batch;
}

template <typename T>
void sgd_update(Tensor4<T>& param, const Tensor4<T>& grad, Tensor4<T>& vel, double lr,
                double momentum) {
    for (size_t i = 0; i < param.size(); ++i) {
        const double v = momentum * static_cast<double>(vel.data[i]) -
                         lr * static_cast<double>(grad.data[i]);
        vel.data[i] = static_cast<T>(v);
        param.data[i] = static_cast<T>(static_cast<double>(param.data[i]) + v);
    }
}

template <typename T>
void adam_update(Tensor4<T>& param, const Tensor4<T>& grad, Tensor4<T>& m1, Tensor4<T>& m2,
                 long t, double lr, double beta1, double beta2, double eps = 1e-8) {
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad.data[i]);
        const double m = beta1 * static_cast<double>(m1.data[i]) + (1.0 - beta1) * g;
        const double v = beta2 * static_cast<double>(m2.data[i]) + (1.0 - beta2) * g * g;
        m1.data[i] = static_cast<T>(m);
        m2.data[i] = static_cast<T>(v);
        param.data[i] = static_cast<T>(static_cast<double>(param.data[i]) -
                                       lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
}

template <typename T>
struct TrainState {
    model::ModelConfig model;
    TrainConfig cfg;
    model::Ablation mode = model::Ablation::both;
    int n_classes = 0;
    long iteration = 0;
    long adam_t = 0;
    std::map<std::string, Tensor4<T>> params;
    std::map<std::string, Tensor4<T>> opt_m;  // sgd velocity / adam first moment
    std::map<std::string, Tensor4<T>> opt_v;  // adam second moment
    Rng rng;
};

template <typename T>
TrainState<T> init_train_state(const model::ModelConfig& mc, const TrainConfig& tc, int n_classes,
                               model::Ablation mode = model::Ablation::both) {
    mc.validate();
    tc.validate();
    if (n_classes < 2) throw ConfigError("train: need at least 2 classes");
    TrainState<T> st;
    st.model = mc;
    st.cfg = tc;
    st.mode = mode;
    st.n_classes = n_classes;
    st.params = model::init_params<T>(mc, n_classes, tc.seed);
    for (const auto& [name, v] : st.params) {
        st.opt_m.emplace(name, Tensor4<T>(v.c, v.t, v.h, v.w));
        st.opt_v.emplace(name, Tensor4<T>(v.c, v.t, v.h, v.w));
    }
    st.rng = Rng(Rng::derive(tc.seed, 0xBA7C4).next_u64());
    return st;
}

// Sequences normalized once and kept in memory; the desk-scale corpus is a
// few tens of MB.
class SequenceCache {
  public:
    SequenceCache(const prep::DatasetManifest& m, int h, int w,
                  prep::NormalizeMode mode = prep::NormalizeMode::crop)
        : m_(&m), h_(h), w_(w), mode_(mode) {}

    const Tensor4<float>& get(size_t record) {
        auto it = cache_.find(record);
        if (it != cache_.end()) return it->second;
        const auto& rec = m_->records.at(record);
        auto frames = prep::load_sequence_frames(m_->root + "/" + rec.path, h_, w_, mode_);
        return cache_.emplace(record, std::move(frames)).first->second;
    }

  private:
    const prep::DatasetManifest* m_;
    int h_, w_;
    prep::NormalizeMode mode_;
    std::map<size_t, Tensor4<float>> cache_;
};

namespace detail {
template <typename T>
Tensor4<T> cast_clip(const Tensor4<float>& x) {
    Tensor4<T> y(x.c, x.t, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = static_cast<T>(x.data[i]);
    return y;
}
}  // namespace detail

// One optimization step over a fresh P*K batch. Throws DivergenceError on a
// non-finite loss before touching the parameters.
template <typename T>
loss::LossReport train_step(TrainState<T>& st, const prep::DatasetManifest& m,
                            SequenceCache& cache) {
    const auto batch = pk_sample(m, st.cfg.p, st.cfg.k, st.rng);

    Tape<T> tp;
    const auto ids = model::push_params(tp, st.params);
    std::vector<int> emb_ids;
    std::vector<int> labels;
    emb_ids.reserve(batch.size());
    labels.reserve(batch.size());
    for (const auto& pick : batch) {
        const auto clip = prep::sample_clip(cache.get(pick.record), st.cfg.clip_len, st.rng);
        emb_ids.push_back(model::network_forward(tp, tp.leaf(detail::cast_clip<T>(clip)), ids,
                                                 st.model, st.mode, nullptr));
        labels.push_back(pick.label);
    }

    loss::LossReport report;
    const int total =
        loss::combined_loss(tp, emb_ids, labels, ids, st.model, static_cast<T>(st.cfg.margin),
                            &report);
    if (!std::isfinite(report.loss_all)) throw DivergenceError(st.iteration);
    tp.backward(total);

    if (st.cfg.optimizer == TrainConfig::Opt::adam) ++st.adam_t;
    for (auto& [name, param] : st.params) {
        const Tensor4<T>& g = tp.grad(ids.at(name));
        if (st.cfg.optimizer == TrainConfig::Opt::sgd)
            sgd_update(param, g, st.opt_m.at(name), st.cfg.lr, st.cfg.momentum);
        else
            adam_update(param, g, st.opt_m.at(name), st.opt_v.at(name), st.adam_t, st.cfg.lr,
                        st.cfg.adam_beta1, st.cfg.adam_beta2);
    }
    ++st.iteration;
    return report;
}

inline const std::string kLogHeader = "step,loss_all,loss_tri,loss_cse,active_frac";

}  // namespace dygait::train
