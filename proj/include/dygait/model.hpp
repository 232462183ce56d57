#pragma once

#include <map>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/ops.hpp"
#include "dygait/rng.hpp"

// The network: LTA stem, stacked DAM blocks with interleaved spatial pooling,
// temporal max aggregation, and per-strip horizontal mapping into the
// embedding. Everything is built on a tape so the same code path serves
// training, evaluation, and gradient checking.

namespace dygait::model {

enum class Ablation { both, gfe_only, dfe_only };

inline Ablation parse_ablation(const std::string& s) {
    if (s == "both") return Ablation::both;
    if (s == "gfe_only") return Ablation::gfe_only;
    if (s == "dfe_only") return Ablation::dfe_only;
    throw ConfigError("unknown ablation mode '" + s + "' (both|gfe_only|dfe_only)");
}

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::both: return "both";
        case Ablation::gfe_only: return "gfe_only";
        default: return "dfe_only";
    }
}

struct ModelConfig {
    int in_channels = 1;
    std::vector<int> stage_channels = {32, 64, 128};
    std::vector<int> pool_after = {0, 1};
    int strips = 16;
    int embed_dim = 128;
    double leaky_slope = 0.01;
    int in_h = 64;
    int in_w = 44;

    int blocks() const { return static_cast<int>(stage_channels.size()); }
    int block_in(int b) const { return b == 0 ? stage_channels[0] : stage_channels[b - 1]; }
    int final_channels() const { return stage_channels.back(); }
    bool pools_after(int b) const {
        for (int p : pool_after)
            if (p == b) return true;
        return false;
    }
    int pool_count() const { return static_cast<int>(pool_after.size()); }
    int final_h() const { return in_h >> pool_count(); }
    int final_w() const { return in_w >> pool_count(); }

    void validate() const {
        if (stage_channels.empty()) throw ConfigError("stage_channels must list at least 1 block");
        for (int c : stage_channels)
            if (c < 1) throw ConfigError("stage_channels entries must be positive");
        if (in_channels < 1) throw ConfigError("in_channels must be positive");
        if (strips < 1 || embed_dim < 1) throw ConfigError("strips and embed_dim must be positive");
        if (leaky_slope <= 0.0 || leaky_slope >= 1.0) throw ConfigError("leaky_slope in (0,1)");
        std::vector<char> seen(static_cast<size_t>(blocks()), 0);
        for (int p : pool_after) {
            if (p < 0 || p >= blocks())
                throw ConfigError("pool_after index " + std::to_string(p) + " outside [0," +
                                  std::to_string(blocks()) + ")");
            if (seen[static_cast<size_t>(p)]++) throw ConfigError("duplicate pool_after index");
        }
        int h = in_h, w = in_w;
        for (int i = 0; i < pool_count(); ++i) {
            if (h % 2 || w % 2)
                throw ConfigError("input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                                  " not divisible by the pooling pyramid");
            h /= 2;
            w /= 2;
        }
        if (h % strips)
            throw ConfigError("strips=" + std::to_string(strips) + " does not divide final height " +
                              std::to_string(h));
    }

    // Temporal padding is done by edge replication (pad_time_edge) before the
    // conv rather than by zero frames inside it, so a static sequence stays
    // static through every stage. Spatial padding stays zero.
    Conv3Spec lta1() const { return {stage_channels[0], in_channels, 3, 3, 3, 1, 0, 1, 1}; }
    Conv3Spec lta2() const { return {stage_channels[0], stage_channels[0], 3, 1, 1, 3, 0, 0, 0}; }
    Conv3Spec afm(int b) const { return {stage_channels[b], block_in(b), 3, 3, 3, 1, 0, 1, 1}; }
    Conv3Spec dfe(int b) const { return {stage_channels[b], block_in(b), 3, 3, 3, 1, 0, 1, 1}; }
    Conv3Spec gfe(int b) const { return {stage_channels[b], block_in(b), 1, 3, 3, 1, 0, 1, 1}; }
};

template <typename T>
using ParamSet = std::map<std::string, Tensor4<T>>;

struct ParamInfo {
    std::string name;
    int c, t, h, w;
    int fan_in;  // 0 marks zero-initialized tensors (biases)
};

inline std::string strip_tag(int s) {
    return s < 10 ? "strip0" + std::to_string(s) : "strip" + std::to_string(s);
}

// Stable parameter inventory; ordering defines the init sub-streams. The
// classifier head (one W,b per strip) belongs to the loss but shares the
// parameter set so the optimizer and checkpoints see one namespace.
inline std::vector<ParamInfo> param_manifest(const ModelConfig& cfg, int n_classes) {
    cfg.validate();
    std::vector<ParamInfo> out;
    auto conv = [&out](const std::string& name, const Conv3Spec& s) {
        out.push_back({name, s.c_out, s.c_in * s.k_t, s.k_h, s.k_w,
                       s.c_in * s.k_t * s.k_h * s.k_w});
    };
    conv("lta.conv1.w", cfg.lta1());
    conv("lta.conv2.w", cfg.lta2());
    for (int b = 0; b < cfg.blocks(); ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        conv(p + "afm.w", cfg.afm(b));
        conv(p + "dfe.w", cfg.dfe(b));
        conv(p + "gfe.w", cfg.gfe(b));
    }
    for (int s = 0; s < cfg.strips; ++s)
        out.push_back({"hm." + strip_tag(s) + ".w", cfg.embed_dim, 1, 1, cfg.final_channels(),
                       cfg.final_channels()});
    for (int s = 0; s < cfg.strips && n_classes > 0; ++s) {
        out.push_back({"cls." + strip_tag(s) + ".w", n_classes, 1, 1, cfg.embed_dim,
                       cfg.embed_dim});
        out.push_back({"cls." + strip_tag(s) + ".b", n_classes, 1, 1, 1, 0});
    }
    return out;
}

// Zero-mean uniform with scale 1/sqrt(fan_in); biases zero. Each tensor gets
// its own derived stream so the draw is independent of map iteration order.
template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, int n_classes, uint64_t seed) {
    ParamSet<T> params;
    const auto manifest = param_manifest(cfg, n_classes);
    for (size_t i = 0; i < manifest.size(); ++i) {
        const ParamInfo& info = manifest[i];
        Tensor4<T> t(info.c, info.t, info.h, info.w);
        if (info.fan_in > 0) {
            Rng rng(Rng::derive(seed, i));
            const double scale = 1.0 / std::sqrt(static_cast<double>(info.fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.next_symmetric(scale));
        }
        params.emplace(info.name, std::move(t));
    }
    return params;
}

template <typename T>
std::map<std::string, int> push_params(Tape<T>& tp, const ParamSet<T>& params) {
    std::map<std::string, int> ids;
    for (const auto& [name, tensor] : params) ids[name] = tp.leaf(tensor);
    return ids;
}

struct ForwardTrace {
    int lta = -1;
    std::vector<int> xd;      // centered dynamics per block
    std::vector<int> dfe;     // DFE conv output per block (zero-dynamics checks)
    std::vector<int> blocks;  // block outputs, post-pooling
    int ta = -1;
    int pooled = -1;
    int embedding = -1;
};

template <typename T>
int lta_forward(Tape<T>& tp, int x, const std::map<std::string, int>& p, const ModelConfig& cfg) {
    if (tp.val(x).t < 3)
        throw SequenceError("lta_forward: sequence of " + std::to_string(tp.val(x).t) +
                            " frames, need at least 3");
    const T slope = static_cast<T>(cfg.leaky_slope);
    int y = ops::conv3d(tp, ops::pad_time_edge(tp, x, 1), p.at("lta.conv1.w"), cfg.lta1());
    y = ops::leaky_relu(tp, y, slope);
    y = ops::conv3d(tp, y, p.at("lta.conv2.w"), cfg.lta2());
    return ops::leaky_relu(tp, y, slope);
}

// Eqs. of one DAM block: dynamics branch conv on the centered features,
// global branch conv on the raw features, their activated sum, plus the
// activated residual conv. No activation wraps the final sum.
template <typename T>
int dam_forward(Tape<T>& tp, int x, int b, const std::map<std::string, int>& p,
                const ModelConfig& cfg, Ablation mode, int* xd_out = nullptr,
                int* dfe_out = nullptr) {
    const std::string pre = "block" + std::to_string(b) + ".";
    const T slope = static_cast<T>(cfg.leaky_slope);
    int fused = -1;
    if (mode != Ablation::dfe_only) fused = ops::conv3d(tp, x, p.at(pre + "gfe.w"), cfg.gfe(b));
    if (mode != Ablation::gfe_only) {
        int xd = ops::center_over_time(tp, x);
        if (xd_out) *xd_out = xd;
        int ydfe =
            ops::conv3d(tp, ops::pad_time_edge(tp, xd, 1), p.at(pre + "dfe.w"), cfg.dfe(b));
        if (dfe_out) *dfe_out = ydfe;
        fused = fused < 0 ? ydfe : ops::add(tp, fused, ydfe);
    }
    int ydam = ops::leaky_relu(tp, fused, slope);
    int res = ops::leaky_relu(
        tp, ops::conv3d(tp, ops::pad_time_edge(tp, x, 1), p.at(pre + "afm.w"), cfg.afm(b)),
        slope);
    return ops::add(tp, res, ydam);
}

template <typename T>
int backbone_forward(Tape<T>& tp, int x, const std::map<std::string, int>& p,
                     const ModelConfig& cfg, Ablation mode, ForwardTrace* trace = nullptr) {
    for (int b = 0; b < cfg.blocks(); ++b) {
        int xd = -1, dfe = -1;
        x = dam_forward(tp, x, b, p, cfg, mode, &xd, &dfe);
        if (cfg.pools_after(b)) x = ops::maxpool_spatial(tp, x, 2, 2);
        if (trace) {
            trace->xd.push_back(xd);
            trace->dfe.push_back(dfe);
            trace->blocks.push_back(x);
        }
    }
    return x;
}

template <typename T>
int temporal_aggregation(Tape<T>& tp, int x) {
    return ops::max_over_time(tp, x);
}

template <typename T>
int horizontal_mapping(Tape<T>& tp, int x, const std::map<std::string, int>& p,
                       const ModelConfig& cfg, int* pooled_out = nullptr) {
    int pooled = ops::strip_pool(tp, x, cfg.strips);
    if (pooled_out) *pooled_out = pooled;
    std::vector<int> vecs;
    vecs.reserve(static_cast<size_t>(cfg.strips));
    for (int s = 0; s < cfg.strips; ++s) {
        int v = ops::slice_channel_vec(tp, pooled, s);
        vecs.push_back(ops::matvec(tp, p.at("hm." + strip_tag(s) + ".w"), v));
    }
    return ops::stack_vecs(tp, vecs);
}

// Input (in_channels, T, H, W) -> embedding (strips, 1, 1, embed_dim).
template <typename T>
int network_forward(Tape<T>& tp, int x, const std::map<std::string, int>& p,
                    const ModelConfig& cfg, Ablation mode, ForwardTrace* trace = nullptr) {
    const Tensor4<T>& xv = tp.val(x);
    require_shape(xv.c == cfg.in_channels && xv.h == cfg.in_h && xv.w == cfg.in_w,
                  "network input", xv.shape_str(),
                  "(" + std::to_string(cfg.in_channels) + ",T," + std::to_string(cfg.in_h) + "," +
                      std::to_string(cfg.in_w) + ")");
    int y = lta_forward(tp, x, p, cfg);
    if (trace) trace->lta = y;
    y = backbone_forward(tp, y, p, cfg, mode, trace);
    int ta = temporal_aggregation(tp, y);
    if (trace) trace->ta = ta;
    int emb = horizontal_mapping(tp, ta, p, cfg, trace ? &trace->pooled : nullptr);
    if (trace) trace->embedding = emb;
    return emb;
}

// Per input frame: channel-mean |activation| of the chosen block, bilinearly
// upsampled to the input size and min-max normalized per frame (an all-zero
// map stays all-zero). Block frames cover stride-3 windows of the input, so
// input frame i reads block frame min(i/3, last).
template <typename T>
std::vector<Tensor4<T>> activation_heatmap(const Tensor4<T>& seq, const ParamSet<T>& params,
                                           const ModelConfig& cfg, int block,
                                           Ablation mode = Ablation::both) {
    if (block < 0 || block >= cfg.blocks())
        throw ConfigError("heatmap block index " + std::to_string(block) + " outside [0," +
                          std::to_string(cfg.blocks()) + ")");
    Tape<T> tp;
    auto ids = push_params(tp, params);
    ForwardTrace trace;
    network_forward(tp, tp.leaf(seq), ids, cfg, mode, &trace);
    const Tensor4<T>& act = tp.val(trace.blocks[static_cast<size_t>(block)]);

    std::vector<Tensor4<T>> maps;
    maps.reserve(static_cast<size_t>(seq.t));
    std::vector<Tensor4<T>> per_block_frame;
    for (int tb = 0; tb < act.t; ++tb) {
        std::vector<T> mean(static_cast<size_t>(act.h) * act.w, T(0));
        for (int c = 0; c < act.c; ++c) {
            const T* f = act.frame(c, tb);
            for (size_t i = 0; i < mean.size(); ++i) mean[i] += std::fabs(f[i]);
        }
        for (auto& v : mean) v /= static_cast<T>(act.c);
        auto up = kernels::bilinear_resize_plane(mean.data(), act.h, act.w, cfg.in_h, cfg.in_w);
        T lo = up[0], hi = up[0];
        for (T v : up) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        Tensor4<T> frame(1, 1, cfg.in_h, cfg.in_w);
        if (hi > lo) {
            for (size_t i = 0; i < up.size(); ++i) frame.data[i] = (up[i] - lo) / (hi - lo);
        } else if (hi != T(0)) {
            for (auto& v : frame.data) v = T(1);  // constant nonzero map
        }
        per_block_frame.push_back(std::move(frame));
    }
    for (int i = 0; i < seq.t; ++i)
        maps.push_back(per_block_frame[static_cast<size_t>(std::min(i / 3, act.t - 1))]);
    return maps;
}

}  // namespace dygait::model
