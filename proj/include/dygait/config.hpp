#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/evaluate.hpp"
#include "dygait/model.hpp"
#include "dygait/preprocess.hpp"
#include "dygait/train.hpp"

// Flat key=value run configuration: '#' starts a comment, blank lines are
// skipped, unknown keys are errors. The same key set serializes into the
// checkpoint config blob, so `serialize` and `apply_kv` must stay inverses
// (doubles travel as %.17g for exact round-trips).

namespace dygait::config {

struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    model::Ablation ablation = model::Ablation::both;
    std::string data_root = "data";
    std::string out_dir = "out";
    prep::NormalizeMode normalize_mode = prep::NormalizeMode::crop;
    eval::DistMode dist_mode = eval::DistMode::concat;
    eval::Protocol protocol = eval::Protocol::plain;
};

namespace detail {

inline long to_long(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long x = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline int to_int(const std::string& key, const std::string& v) {
    return static_cast<int>(to_long(key, v));
}

inline uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

// comma-joined integer list; an empty value is an empty list
inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    if (v.empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_int(key, item));
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace detail

inline void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
    using detail::to_double;
    using detail::to_int;
    using detail::to_int_list;
    using detail::to_long;
    using detail::to_u64;

    if (key == "in_channels") rc.model.in_channels = to_int(key, value);
    else if (key == "stage_channels") rc.model.stage_channels = to_int_list(key, value);
    else if (key == "pool_after") rc.model.pool_after = to_int_list(key, value);
    else if (key == "strips") rc.model.strips = to_int(key, value);
    else if (key == "embed_dim") rc.model.embed_dim = to_int(key, value);
    else if (key == "leaky_slope") rc.model.leaky_slope = to_double(key, value);
    else if (key == "input_h") rc.model.in_h = to_int(key, value);
    else if (key == "input_w") rc.model.in_w = to_int(key, value);
    else if (key == "p") rc.train.p = to_int(key, value);
    else if (key == "k") rc.train.k = to_int(key, value);
    else if (key == "clip_len") rc.train.clip_len = to_int(key, value);
    else if (key == "iterations") rc.train.iterations = to_long(key, value);
    else if (key == "optimizer") rc.train.optimizer = train::parse_optimizer(value);
    else if (key == "lr") rc.train.lr = to_double(key, value);
    else if (key == "momentum") rc.train.momentum = to_double(key, value);
    else if (key == "adam_beta1") rc.train.adam_beta1 = to_double(key, value);
    else if (key == "adam_beta2") rc.train.adam_beta2 = to_double(key, value);
    else if (key == "margin") rc.train.margin = to_double(key, value);
    else if (key == "seed") rc.train.seed = to_u64(key, value);
    else if (key == "checkpoint_every") rc.train.checkpoint_every = to_long(key, value);
    else if (key == "ablation") rc.ablation = model::parse_ablation(value);
    else if (key == "data_root") rc.data_root = value;
    else if (key == "out_dir") rc.out_dir = value;
    else if (key == "normalize_mode") rc.normalize_mode = prep::parse_normalize_mode(value);
    else if (key == "dist_mode") rc.dist_mode = eval::parse_dist_mode(value);
    else if (key == "protocol") rc.protocol = eval::parse_protocol(value);
    else throw ConfigError("unknown config key '" + key + "'");
}

// "key=value" as given on the command line
inline void apply_override(RunConfig& rc, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + kv + "' is not of the form key=value");
    apply_kv(rc, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig rc;
    std::stringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        try {
            apply_kv(rc, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rc;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

// Depth selector: keep the first `blocks` stages and whatever pooling points
// still exist at that depth.
inline void apply_blocks(RunConfig& rc, int blocks) {
    if (blocks < 1) throw ConfigError("blocks must be at least 1");
    if (blocks > static_cast<int>(rc.model.stage_channels.size()))
        throw ConfigError("blocks=" + std::to_string(blocks) + " exceeds the configured " +
                          std::to_string(rc.model.stage_channels.size()) + " stages");
    rc.model.stage_channels.resize(static_cast<size_t>(blocks));
    std::vector<int> pools;
    for (int p : rc.model.pool_after)
        if (p < blocks) pools.push_back(p);
    rc.model.pool_after = pools;
}

// Fixed-order key=value serialization of the state that belongs in a
// checkpoint (paths and evaluation settings stay out).
inline std::string serialize_for_checkpoint(const RunConfig& rc) {
    using detail::fmt_double;
    using detail::join_ints;
    std::string s;
    s += "in_channels=" + std::to_string(rc.model.in_channels) + "\n";
    s += "stage_channels=" + join_ints(rc.model.stage_channels) + "\n";
    s += "pool_after=" + join_ints(rc.model.pool_after) + "\n";
    s += "strips=" + std::to_string(rc.model.strips) + "\n";
    s += "embed_dim=" + std::to_string(rc.model.embed_dim) + "\n";
    s += "leaky_slope=" + fmt_double(rc.model.leaky_slope) + "\n";
    s += "input_h=" + std::to_string(rc.model.in_h) + "\n";
    s += "input_w=" + std::to_string(rc.model.in_w) + "\n";
    s += "p=" + std::to_string(rc.train.p) + "\n";
    s += "k=" + std::to_string(rc.train.k) + "\n";
    s += "clip_len=" + std::to_string(rc.train.clip_len) + "\n";
    s += "iterations=" + std::to_string(rc.train.iterations) + "\n";
    s += "optimizer=" + train::to_string(rc.train.optimizer) + "\n";
    s += "lr=" + fmt_double(rc.train.lr) + "\n";
    s += "momentum=" + fmt_double(rc.train.momentum) + "\n";
    s += "adam_beta1=" + fmt_double(rc.train.adam_beta1) + "\n";
    s += "adam_beta2=" + fmt_double(rc.train.adam_beta2) + "\n";
    s += "margin=" + fmt_double(rc.train.margin) + "\n";
    s += "seed=" + std::to_string(rc.train.seed) + "\n";
    s += "checkpoint_every=" + std::to_string(rc.train.checkpoint_every) + "\n";
    s += "ablation=" + model::to_string(rc.ablation) + "\n";
    return s;
}

}  // namespace dygait::config
