#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/model.hpp"
#include "dygait/preprocess.hpp"
#include "dygait/tensor.hpp"

// Gallery-probe retrieval: embed whole sequences, build a distance matrix,
// and score it with Rank-k, mAP, and mINP, optionally under the cross-view
// protocol (identical-view pairs excluded). Distances accumulate in f64.

namespace dygait::eval {

struct EmbeddingEntry {
    std::string subject, condition, view;
    Tensor4<float> emb;  // (S,1,1,d)
};

struct EmbeddingSet {
    int strips = 0, dim = 0;
    std::vector<EmbeddingEntry> items;

    void add(EmbeddingEntry e) {
        if (e.emb.t != 1 || e.emb.h != 1)
            throw ShapeError("EmbeddingSet: want (S,1,1,d), got t=" + std::to_string(e.emb.t) +
                             " h=" + std::to_string(e.emb.h));
        if (items.empty()) {
            strips = e.emb.c;
            dim = e.emb.w;
        } else if (e.emb.c != strips || e.emb.w != dim) {
            throw ShapeError("EmbeddingSet: mixed embedding shapes");
        }
        items.push_back(std::move(e));
    }
    int size() const { return static_cast<int>(items.size()); }

    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        out.reserve(items.size());
        for (const auto& it : items) out.push_back(it.subject);
        return out;
    }
};

namespace detail {
template <typename T>
Tensor4<T> cast(const Tensor4<float>& x) {
    Tensor4<T> y(x.c, x.t, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = static_cast<T>(x.data[i]);
    return y;
}
}  // namespace detail

template <typename T>
Tensor4<float> embed_sequence(const Tensor4<T>& frames,
                              const std::map<std::string, Tensor4<T>>& params,
                              const model::ModelConfig& cfg, model::Ablation mode) {
    Tape<T> tp;
    auto ids = model::push_params(tp, params);
    const int e = model::network_forward(tp, tp.leaf(frames), ids, cfg, mode, nullptr);
    const Tensor4<T>& v = tp.val(e);
    Tensor4<float> out(v.c, 1, 1, v.w);
    for (size_t i = 0; i < v.size(); ++i) out.data[i] = static_cast<float>(v.data[i]);
    return out;
}

// Embeds every sequence of one manifest partition over its full length (no
// clip sampling). Sequences that come up shorter than the temporal stem
// needs are dropped and logged, not fatal.
template <typename T>
EmbeddingSet embed_all(const prep::DatasetManifest& m, const std::string& partition,
                       const std::map<std::string, Tensor4<T>>& params,
                       const model::ModelConfig& cfg, model::Ablation mode,
                       prep::NormalizeMode nm = prep::NormalizeMode::crop,
                       std::vector<std::string>* drop_log = nullptr) {
    EmbeddingSet set;
    for (size_t i : m.partition_indices(partition)) {
        const auto& rec = m.records[i];
        const std::string dir = m.root + "/" + rec.path;
        Tensor4<float> frames(1, 1, 1, 1);
        try {
            frames = prep::load_sequence_frames(dir, cfg.in_h, cfg.in_w, nm, drop_log);
        } catch (const SequenceError& e) {
            if (drop_log) drop_log->push_back(std::string("dropped sequence: ") + e.what());
            continue;
        }
        if (frames.t < 3) {
            if (drop_log) drop_log->push_back("dropped short sequence (<3 frames): " + dir);
            continue;
        }
        set.add({rec.subject, rec.condition, rec.view,
                 embed_sequence(detail::cast<T>(frames), params, cfg, mode)});
    }
    return set;
}

enum class DistMode { concat, strip_sum_sq };

inline DistMode parse_dist_mode(const std::string& s) {
    if (s == "concat") return DistMode::concat;
    if (s == "strip_sum_sq") return DistMode::strip_sum_sq;
    throw ConfigError("unknown dist_mode '" + s + "' (concat|strip_sum_sq)");
}

struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// An infinite entry marks an invalid probe/gallery pair (e.g. identical-view
// exclusion); ranking treats it as absent from that probe's gallery.
inline constexpr double kExcludedPair = std::numeric_limits<double>::infinity();

inline Matrix distance_matrix(const EmbeddingSet& probe, const EmbeddingSet& gallery,
                              DistMode mode = DistMode::concat) {
    if (probe.size() && gallery.size() && (probe.strips != gallery.strips || probe.dim != gallery.dim))
        throw ShapeError("distance_matrix: embedding shape mismatch");
    Matrix D(probe.size(), gallery.size());
    const long n = static_cast<long>(probe.strips) * probe.dim;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(D.rows) * D.cols * n > (1L << 13))
    for (int i = 0; i < D.rows; ++i)
        for (int j = 0; j < D.cols; ++j) {
            const float* a = probe.items[static_cast<size_t>(i)].emb.data.data();
            const float* b = gallery.items[static_cast<size_t>(j)].emb.data.data();
            double s = 0.0;
            for (long k = 0; k < n; ++k) {
                const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
                s += d * d;
            }
            D.at(i, j) = mode == DistMode::concat ? std::sqrt(s) : s;
        }
    return D;
}

namespace detail {
// valid gallery indices for probe row i, best first; ties broken by
// ascending gallery index via the pair ordering
inline std::vector<int> row_order(const Matrix& D, int i) {
    std::vector<std::pair<double, int>> v;
    v.reserve(static_cast<size_t>(D.cols));
    for (int j = 0; j < D.cols; ++j)
        if (std::isfinite(D.at(i, j))) v.push_back({D.at(i, j), j});
    std::sort(v.begin(), v.end());
    std::vector<int> idx(v.size());
    for (size_t k = 0; k < v.size(); ++k) idx[k] = v[k].second;
    return idx;
}

inline void check_labels(const Matrix& D, size_t np, size_t ng) {
    if (np != static_cast<size_t>(D.rows) || ng != static_cast<size_t>(D.cols))
        throw ShapeError("ranking: label count does not match the distance matrix");
}
}  // namespace detail

inline double rank_k(const Matrix& D, const std::vector<std::string>& probe_labels,
                     const std::vector<std::string>& gallery_labels, int k,
                     long* excluded = nullptr) {
    detail::check_labels(D, probe_labels.size(), gallery_labels.size());
    long counted = 0, hits = 0, skipped = 0;
    for (int i = 0; i < D.rows; ++i) {
        const auto order = detail::row_order(D, i);
        if (order.empty()) {
            ++skipped;
            continue;
        }
        ++counted;
        const int top = std::min<int>(k, static_cast<int>(order.size()));
        for (int r = 0; r < top; ++r)
            if (gallery_labels[static_cast<size_t>(order[static_cast<size_t>(r)])] ==
                probe_labels[static_cast<size_t>(i)]) {
                ++hits;
                break;
            }
    }
    if (excluded) *excluded = skipped;
    return counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
}

inline double mean_average_precision(const Matrix& D, const std::vector<std::string>& probe_labels,
                                     const std::vector<std::string>& gallery_labels,
                                     long* excluded = nullptr) {
    detail::check_labels(D, probe_labels.size(), gallery_labels.size());
    double sum = 0.0;
    long counted = 0, skipped = 0;
    for (int i = 0; i < D.rows; ++i) {
        const auto order = detail::row_order(D, i);
        long m = 0;
        double ap = 0.0;
        for (size_t r = 0; r < order.size(); ++r)
            if (gallery_labels[static_cast<size_t>(order[r])] == probe_labels[static_cast<size_t>(i)]) {
                ++m;
                ap += static_cast<double>(m) / static_cast<double>(r + 1);
            }
        if (m == 0) {
            ++skipped;
            continue;
        }
        sum += ap / static_cast<double>(m);
        ++counted;
    }
    if (excluded) *excluded = skipped;
    return counted ? sum / static_cast<double>(counted) : 0.0;
}

inline double mean_inverse_negative_penalty(const Matrix& D,
                                            const std::vector<std::string>& probe_labels,
                                            const std::vector<std::string>& gallery_labels,
                                            long* excluded = nullptr) {
    detail::check_labels(D, probe_labels.size(), gallery_labels.size());
    double sum = 0.0;
    long counted = 0, skipped = 0;
    for (int i = 0; i < D.rows; ++i) {
        const auto order = detail::row_order(D, i);
        long m = 0, last = 0;
        for (size_t r = 0; r < order.size(); ++r)
            if (gallery_labels[static_cast<size_t>(order[r])] == probe_labels[static_cast<size_t>(i)]) {
                ++m;
                last = static_cast<long>(r + 1);
            }
        if (m == 0) {
            ++skipped;
            continue;
        }
        sum += static_cast<double>(m) / static_cast<double>(last);
        ++counted;
    }
    if (excluded) *excluded = skipped;
    return counted ? sum / static_cast<double>(counted) : 0.0;
}

enum class Protocol { plain, exclude_identical_view };

inline Protocol parse_protocol(const std::string& s) {
    if (s == "plain") return Protocol::plain;
    if (s == "cross_view") return Protocol::exclude_identical_view;
    throw ConfigError("unknown protocol '" + s + "' (plain|cross_view)");
}

inline std::string base_condition(const std::string& c) {
    const auto p = c.rfind('-');
    return p == std::string::npos ? c : c.substr(0, p);
}

struct CrossViewCell {
    std::string probe_view, gallery_view;
    double rank1 = 0.0;
    long probes = 0;
};

struct RankingReport {
    Protocol protocol = Protocol::plain;
    long probes = 0, gallery = 0;
    std::map<int, double> rank;  // k in {1,5,10,20}
    double map = 0.0, minp = 0.0;
    long excluded_no_gallery = 0, excluded_no_positive = 0;
    std::vector<std::vector<int>> probe_order;  // valid gallery indices, best first

    std::map<std::string, double> condition_rank1;
    std::map<std::string, long> condition_probes;

    // cross-view section, populated under exclude_identical_view
    std::vector<CrossViewCell> cells;
    std::map<std::string, double> view_mean_rank1;
    double grand_mean_rank1 = 0.0;
    bool has_pairs = true;

    std::string summary() const {
        std::ostringstream os;
        os << "protocol: " << (protocol == Protocol::plain ? "plain" : "cross_view") << "\n";
        os << "probes: " << probes << "  gallery: " << gallery << "\n";
        if (protocol == Protocol::exclude_identical_view && !has_pairs) {
            os << "no valid pairs (need at least two views)\n";
            return os.str();
        }
        for (const auto& [k, v] : rank)
            os << "rank_" << k << ": " << v << "\n";
        os << "mAP: " << map << "\nmINP: " << minp << "\n";
        if (excluded_no_gallery) os << "probes without gallery: " << excluded_no_gallery << "\n";
        if (excluded_no_positive) os << "probes without positives: " << excluded_no_positive << "\n";
        for (const auto& [c, v] : condition_rank1)
            os << "condition " << c << ": rank_1 " << v << " (" << condition_probes.at(c)
               << " probes)\n";
        if (protocol == Protocol::exclude_identical_view) {
            for (const auto& cell : cells)
                os << "view " << cell.probe_view << "->" << cell.gallery_view << ": rank_1 "
                   << cell.rank1 << " (" << cell.probes << " probes)\n";
            for (const auto& [v, r] : view_mean_rank1)
                os << "probe view " << v << " mean rank_1: " << r << "\n";
            os << "cross-view mean rank_1: " << grand_mean_rank1 << "\n";
        }
        return os.str();
    }
};

inline RankingReport cross_view_protocol(const EmbeddingSet& probe, const EmbeddingSet& gallery,
                                         Protocol proto, DistMode mode = DistMode::concat) {
    if (gallery.size() == 0) throw ProtocolEmptyError("evaluation: empty gallery");
    if (probe.size() == 0) throw ProtocolEmptyError("evaluation: empty probe set");

    Matrix D = distance_matrix(probe, gallery, mode);
    if (proto == Protocol::exclude_identical_view)
        for (int i = 0; i < D.rows; ++i)
            for (int j = 0; j < D.cols; ++j)
                if (probe.items[static_cast<size_t>(i)].view ==
                    gallery.items[static_cast<size_t>(j)].view)
                    D.at(i, j) = kExcludedPair;

    RankingReport rep;
    rep.protocol = proto;
    rep.probes = probe.size();
    rep.gallery = gallery.size();
    const auto pl = probe.subjects();
    const auto gl = gallery.subjects();
    for (int k : {1, 5, 10, 20}) rep.rank[k] = rank_k(D, pl, gl, k, &rep.excluded_no_gallery);
    rep.map = mean_average_precision(D, pl, gl, &rep.excluded_no_positive);
    rep.minp = mean_inverse_negative_penalty(D, pl, gl, nullptr);
    rep.probe_order.reserve(static_cast<size_t>(D.rows));
    for (int i = 0; i < D.rows; ++i) rep.probe_order.push_back(detail::row_order(D, i));

    // rank-1 per base condition, over that probe subset
    std::map<std::string, std::pair<long, long>> cond;  // base -> (counted, hits)
    for (int i = 0; i < D.rows; ++i) {
        const auto& order = rep.probe_order[static_cast<size_t>(i)];
        if (order.empty()) continue;
        auto& [n, h] = cond[base_condition(probe.items[static_cast<size_t>(i)].condition)];
        ++n;
        h += gl[static_cast<size_t>(order[0])] == pl[static_cast<size_t>(i)];
    }
    for (const auto& [c, nh] : cond) {
        rep.condition_probes[c] = nh.first;
        rep.condition_rank1[c] = static_cast<double>(nh.second) / static_cast<double>(nh.first);
    }

    if (proto == Protocol::exclude_identical_view) {
        std::set<std::string> probe_views, gallery_views;
        for (const auto& it : probe.items) probe_views.insert(it.view);
        for (const auto& it : gallery.items) gallery_views.insert(it.view);

        std::map<std::string, std::vector<double>> per_view;
        for (const auto& pv : probe_views)
            for (const auto& gv : gallery_views) {
                if (pv == gv) continue;
                std::vector<int> pi, gi;
                for (int i = 0; i < probe.size(); ++i)
                    if (probe.items[static_cast<size_t>(i)].view == pv) pi.push_back(i);
                for (int j = 0; j < gallery.size(); ++j)
                    if (gallery.items[static_cast<size_t>(j)].view == gv) gi.push_back(j);
                if (pi.empty() || gi.empty()) continue;  // absent cell

                Matrix sub(static_cast<int>(pi.size()), static_cast<int>(gi.size()));
                std::vector<std::string> spl, sgl;
                for (size_t a = 0; a < pi.size(); ++a) {
                    spl.push_back(pl[static_cast<size_t>(pi[a])]);
                    for (size_t b = 0; b < gi.size(); ++b)
                        sub.at(static_cast<int>(a), static_cast<int>(b)) =
                            D.at(pi[a], gi[b]);
                }
                for (int j : gi) sgl.push_back(gl[static_cast<size_t>(j)]);
                rep.cells.push_back({pv, gv, rank_k(sub, spl, sgl, 1), static_cast<long>(pi.size())});
                per_view[pv].push_back(rep.cells.back().rank1);
            }
        rep.has_pairs = !rep.cells.empty();
        double grand = 0.0;
        for (const auto& [v, rs] : per_view) {
            double m = 0.0;
            for (double r : rs) m += r;
            m /= static_cast<double>(rs.size());
            rep.view_mean_rank1[v] = m;
            grand += m;
        }
        rep.grand_mean_rank1 = per_view.empty() ? 0.0 : grand / static_cast<double>(per_view.size());
    }
    return rep;
}

// metrics.csv + (cross-view) cells.csv + summary.txt under `dir`
inline void write_report(const RankingReport& rep, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir + "/metrics.csv");
        if (!out) throw IoError("cannot write " + dir + "/metrics.csv");
        out << "metric,value\n";
        char buf[64];
        auto row = [&](const std::string& name, double v) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            out << name << ',' << buf << "\n";
        };
        out << "probes," << rep.probes << "\n";
        out << "gallery," << rep.gallery << "\n";
        for (const auto& [k, v] : rep.rank) row("rank_" + std::to_string(k), v);
        row("mAP", rep.map);
        row("mINP", rep.minp);
        out << "probes_without_gallery," << rep.excluded_no_gallery << "\n";
        out << "probes_without_positives," << rep.excluded_no_positive << "\n";
        for (const auto& [c, v] : rep.condition_rank1) row("rank_1[" + c + "]", v);
        if (rep.protocol == Protocol::exclude_identical_view) {
            for (const auto& [v, r] : rep.view_mean_rank1) row("rank_1[view " + v + "]", r);
            row("cross_view_mean_rank_1", rep.grand_mean_rank1);
        }
        if (!out) throw IoError("short write: " + dir + "/metrics.csv");
    }
    if (rep.protocol == Protocol::exclude_identical_view) {
        std::ofstream out(dir + "/cells.csv");
        if (!out) throw IoError("cannot write " + dir + "/cells.csv");
        out << "probe_view,gallery_view,rank_1,probes\n";
        char buf[64];
        for (const auto& c : rep.cells) {
            std::snprintf(buf, sizeof(buf), "%.9g", c.rank1);
            out << c.probe_view << ',' << c.gallery_view << ',' << buf << ',' << c.probes << "\n";
        }
        if (!out) throw IoError("short write: " + dir + "/cells.csv");
    }
    {
        std::ofstream out(dir + "/summary.txt");
        if (!out) throw IoError("cannot write " + dir + "/summary.txt");
        out << rep.summary();
        if (!out) throw IoError("short write: " + dir + "/summary.txt");
    }
}

// CSV dump for external projection tools. %.9g keeps f32 values lossless, so
// dump -> load -> dump reproduces the file byte for byte.
inline void dump_embeddings(const EmbeddingSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "subject,condition,view";
    const long n = static_cast<long>(set.strips) * set.dim;
    for (long i = 0; i < n; ++i) out << ",v_" << i;
    out << "\n";
    char buf[32];
    for (const auto& it : set.items) {
        out << it.subject << ',' << it.condition << ',' << it.view;
        for (float v : it.emb.data) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("short write: " + path);
}

// Reads a dump back. The CSV flattens strips, so entries come back as
// (1,1,1,S*d); values are bit-exact f32.
inline EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("subject,condition,view", 0) != 0)
        throw ConfigError("embedding dump header mismatch in " + path);
    long n = 0;
    for (char ch : line) n += ch == ',';
    n -= 2;  // subject,condition,view
    if (n < 1) throw ConfigError("embedding dump has no value columns: " + path);

    EmbeddingSet set;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string col;
        EmbeddingEntry e;
        std::getline(ss, e.subject, ',');
        std::getline(ss, e.condition, ',');
        std::getline(ss, e.view, ',');
        e.emb = Tensor4<float>(1, 1, 1, static_cast<int>(n));
        for (long i = 0; i < n; ++i) {
            if (!std::getline(ss, col, ','))
                throw ConfigError("embedding dump line " + std::to_string(lineno) +
                                  ": short row");
            e.emb.data[static_cast<size_t>(i)] = std::stof(col);
        }
        if (std::getline(ss, col, ','))
            throw ConfigError("embedding dump line " + std::to_string(lineno) + ": long row");
        set.add(std::move(e));
    }
    return set;
}

}  // namespace dygait::eval
