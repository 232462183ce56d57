#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "dygait/model.hpp"
#include "dygait/ops.hpp"

// Combined objective: Batch-All triplet loss over strip embeddings plus
// per-strip softmax cross-entropy through the strip classifier heads
// (cls.stripSS.{w,b}), summed with unit weights.

namespace dygait::loss {

struct LossReport {
    double loss_tri = 0.0;
    double loss_cse = 0.0;
    double loss_all = 0.0;
    double active_fraction = 0.0;

    std::string csv_row(long step) const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.6f", step, loss_all, loss_tri,
                      loss_cse, active_fraction);
        return buf;
    }
};

// Mean softmax cross-entropy over every (strip, element) pair. Each embedding
// id is one element's (S,1,1,d) tensor; labels index the training classes.
template <typename T>
int cross_entropy_strips(Tape<T>& tp, const std::vector<int>& emb_ids,
                         const std::vector<int>& labels, const std::map<std::string, int>& p,
                         int strips) {
    if (emb_ids.empty() || emb_ids.size() != labels.size())
        throw DegenerateBatchError("cross_entropy_strips: batch of " +
                                   std::to_string(emb_ids.size()));
    std::vector<int> terms;
    terms.reserve(static_cast<size_t>(strips) * emb_ids.size());
    for (int s = 0; s < strips; ++s) {
        const int w = p.at("cls." + model::strip_tag(s) + ".w");
        const int b = p.at("cls." + model::strip_tag(s) + ".b");
        for (size_t e = 0; e < emb_ids.size(); ++e) {
            int v = ops::slice_channel_vec(tp, emb_ids[e], s);
            terms.push_back(ops::softmax_ce(tp, ops::affine(tp, w, v, b), labels[e]));
        }
    }
    const T inv = T(1) / static_cast<T>(terms.size());
    return ops::weighted_sum(tp, terms, std::vector<T>(terms.size(), inv));
}

// Builds loss_all = loss_tri + loss_cse on the tape and reports the forward
// values. emb_ids hold one (S,1,1,d) embedding per batch element.
template <typename T>
int combined_loss(Tape<T>& tp, const std::vector<int>& emb_ids, const std::vector<int>& labels,
                  const std::map<std::string, int>& p, const model::ModelConfig& cfg, T margin,
                  LossReport* report = nullptr) {
    ops::TripletStats stats;
    int tri = ops::triplet_batch_all(tp, emb_ids, labels, margin, &stats);
    int cse = cross_entropy_strips<T>(tp, emb_ids, labels, p, cfg.strips);
    int all = ops::weighted_sum(tp, {tri, cse}, std::vector<T>{T(1), T(1)});
    if (report) {
        report->loss_tri = static_cast<double>(tp.val(tri).data[0]);
        report->loss_cse = static_cast<double>(tp.val(cse).data[0]);
        report->loss_all = static_cast<double>(tp.val(all).data[0]);
        report->active_fraction = stats.active_fraction;
    }
    return all;
}

}  // namespace dygait::loss
