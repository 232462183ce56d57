#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/image.hpp"
#include "dygait/rng.hpp"
#include "dygait/tensor.hpp"

// Silhouette ingest: per-frame geometric normalization, sequence loading with
// a drop policy for bad frames, fixed-length clip sampling, and the dataset
// manifest CSV.

namespace dygait::prep {

struct Frame {
    int h = 0, w = 0;
    std::vector<float> v;  // row-major, values in [0,1]

    float at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    float& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
};

inline Frame frame_from_image(const img::Image& im) {
    Frame f{im.h, im.w, std::vector<float>(im.px.size())};
    for (size_t i = 0; i < im.px.size(); ++i) f.v[i] = im.px[i] ? 1.0f : 0.0f;
    return f;
}

enum class NormalizeMode { crop, plain };

inline NormalizeMode parse_normalize_mode(const std::string& s) {
    if (s == "crop") return NormalizeMode::crop;
    if (s == "plain") return NormalizeMode::plain;
    throw ConfigError("unknown normalize_mode '" + s + "' (crop|plain)");
}

namespace detail {

struct FgStats {
    bool any = false;
    int top = 0, bot = 0;
    double cx = 0.0;  // centroid column
};

inline FgStats fg_stats(const Frame& f) {
    FgStats s;
    long count = 0;
    double sum_c = 0.0;
    s.top = f.h;
    s.bot = -1;
    for (int r = 0; r < f.h; ++r)
        for (int c = 0; c < f.w; ++c)
            if (f.at(r, c) > 0.5f) {
                s.top = std::min(s.top, r);
                s.bot = std::max(s.bot, r);
                sum_c += c;
                ++count;
            }
    if (count) {
        s.any = true;
        s.cx = sum_c / static_cast<double>(count);
    }
    return s;
}

// Integer column shift that moves the centroid into [-0.5, 0.5) of center.
inline int centering_shift(double cx, int w) {
    return static_cast<int>(std::floor(cx - (w - 1) / 2.0 + 0.5));
}

}  // namespace detail

// Crops the subject to its vertical extent, scales it to the output height
// (one scale for both axes, endpoint-inclusive nearest sampling), centers the
// output on the foreground centroid, and thresholds at 0.5. A frame that is
// already in this normal form is returned unchanged, which makes the
// operation exactly idempotent. Returns nothing for an empty frame; the
// sequence loader treats that as a dropped frame. src_map, when given,
// receives the sampled input index per output pixel (-1 for out of bounds)
// so aligned auxiliary masks can be resampled identically.
inline std::optional<Frame> normalize_frame(const Frame& in, int out_h, int out_w,
                                            NormalizeMode mode = NormalizeMode::crop,
                                            std::vector<int>* src_map = nullptr) {
    if (out_h < 2 || out_w < 2) throw ConfigError("normalize_frame: output below 2x2");
    const auto stats = detail::fg_stats(in);
    if (!stats.any) return std::nullopt;

    const size_t n = static_cast<size_t>(out_h) * out_w;
    Frame out{out_h, out_w, std::vector<float>(n, 0.0f)};
    if (src_map) src_map->assign(n, -1);

    if (mode == NormalizeMode::plain) {
        for (int r = 0; r < out_h; ++r) {
            const int sr = static_cast<int>(
                std::lround(static_cast<double>(r) * (in.h - 1) / (out_h - 1)));
            for (int c = 0; c < out_w; ++c) {
                const int sc = static_cast<int>(
                    std::lround(static_cast<double>(c) * (in.w - 1) / (out_w - 1)));
                out.at(r, c) = in.at(sr, sc) > 0.5f ? 1.0f : 0.0f;
                if (src_map) (*src_map)[static_cast<size_t>(r) * out_w + c] = sr * in.w + sc;
            }
        }
        return out;
    }

    // normal form: right size, full vertical extent, centroid within half a
    // pixel of the center column
    if (in.h == out_h && in.w == out_w && stats.top == 0 && stats.bot == in.h - 1 &&
        detail::centering_shift(stats.cx, in.w) == 0) {
        for (size_t i = 0; i < n; ++i) out.v[i] = in.v[i] > 0.5f ? 1.0f : 0.0f;
        if (src_map)
            for (size_t i = 0; i < n; ++i) (*src_map)[i] = static_cast<int>(i);
        return out;
    }

    const int crop_h = stats.bot - stats.top + 1;
    const double scale = crop_h > 1 ? static_cast<double>(crop_h - 1) / (out_h - 1) : 0.0;
    const double ctr = (out_w - 1) / 2.0;
    for (int r = 0; r < out_h; ++r) {
        const int sr = stats.top + static_cast<int>(std::lround(r * scale));
        for (int c = 0; c < out_w; ++c) {
            const int sc = static_cast<int>(std::lround(stats.cx + (c - ctr) * scale));
            if (sc < 0 || sc >= in.w) continue;
            out.at(r, c) = in.at(sr, sc) > 0.5f ? 1.0f : 0.0f;
            if (src_map) (*src_map)[static_cast<size_t>(r) * out_w + c] = sr * in.w + sc;
        }
    }

    // Resampling quantization can leave the output centroid more than half a
    // pixel off center; fix it with whole-column shifts so every output is in
    // normal form (content at a frame edge can fall off, hence the loop).
    for (int pass = 0; pass < 4; ++pass) {
        const auto ostats = detail::fg_stats(out);
        if (!ostats.any) return std::nullopt;
        const int k = detail::centering_shift(ostats.cx, out_w);
        if (k == 0) break;
        Frame shifted{out_h, out_w, std::vector<float>(n, 0.0f)};
        std::vector<int> smap;
        if (src_map) smap.assign(n, -1);
        for (int r = 0; r < out_h; ++r)
            for (int c = 0; c < out_w; ++c) {
                const int sc = c + k;
                if (sc < 0 || sc >= out_w) continue;
                shifted.at(r, c) = out.at(r, sc);
                if (src_map) smap[static_cast<size_t>(r) * out_w + c] =
                    (*src_map)[static_cast<size_t>(r) * out_w + sc];
            }
        out = std::move(shifted);
        if (src_map) *src_map = std::move(smap);
    }
    return out;
}

struct SilhouetteSequence {
    std::string subject, condition, view;
    Tensor4<float> frames{1, 1, 1, 1};  // (1, T, H, W)
};

// Loads every *.pgm in the directory in filename order, normalizes each
// frame, and drops unusable ones (bad content or no foreground) with a note
// in drop_log. A file that cannot be opened at all is an IoError; a directory
// that yields no usable frame is a SequenceError.
inline Tensor4<float> load_sequence_frames(const std::string& dir, int out_h, int out_w,
                                           NormalizeMode mode = NormalizeMode::crop,
                                           std::vector<std::string>* drop_log = nullptr) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("not a sequence directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());

    std::vector<Frame> frames;
    for (const auto& path : files) {
        std::optional<Frame> norm;
        try {
            norm = normalize_frame(frame_from_image(img::read_pgm(path)), out_h, out_w, mode);
        } catch (const img::ParseError& e) {
            if (drop_log) drop_log->push_back(std::string("dropped (unparsable): ") + e.what());
            continue;
        }
        if (!norm) {
            if (drop_log) drop_log->push_back("dropped (no foreground): " + path);
            continue;
        }
        frames.push_back(std::move(*norm));
    }
    if (frames.empty()) throw SequenceError("no usable frames in " + dir);

    Tensor4<float> out(1, static_cast<int>(frames.size()), out_h, out_w);
    for (size_t t = 0; t < frames.size(); ++t)
        std::copy(frames[t].v.begin(), frames[t].v.end(), out.frame(0, static_cast<int>(t)));
    return out;
}

// Uniform random L-frame window; shorter sequences repeat cyclically from a
// random phase.
inline Tensor4<float> sample_clip(const Tensor4<float>& frames, int len, Rng& rng) {
    if (len < 1) throw ConfigError("sample_clip: clip length below 1");
    const int n = frames.t;
    const size_t plane = static_cast<size_t>(frames.h) * frames.w;
    Tensor4<float> out(1, len, frames.h, frames.w);
    if (n >= len) {
        const int start = static_cast<int>(rng.next_int(0, n - len));
        for (int i = 0; i < len; ++i)
            std::copy_n(frames.frame(0, start + i), plane, out.frame(0, i));
    } else {
        const int phase = static_cast<int>(rng.next_int(0, n - 1));
        for (int i = 0; i < len; ++i)
            std::copy_n(frames.frame(0, (phase + i) % n), plane, out.frame(0, i));
    }
    return out;
}

struct SeqRecord {
    std::string subject, condition, view;
    std::string path;  // relative to the dataset root
    int frames = 0;
    std::string partition;  // train | gallery | probe
};

struct DatasetManifest {
    std::string root;
    std::vector<SeqRecord> records;

    std::vector<size_t> partition_indices(const std::string& part) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < records.size(); ++i)
            if (records[i].partition == part) out.push_back(i);
        return out;
    }

    std::vector<std::string> train_subjects() const {
        std::vector<std::string> subs;
        for (const auto& r : records)
            if (r.partition == "train") subs.push_back(r.subject);
        std::sort(subs.begin(), subs.end());
        subs.erase(std::unique(subs.begin(), subs.end()), subs.end());
        return subs;
    }
};

inline const std::string kManifestHeader = "subject,condition,view,path,frames,partition";

inline void write_manifest(const std::string& csv_path, const DatasetManifest& m) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write manifest: " + csv_path);
    out << kManifestHeader << "\n";
    for (const auto& r : m.records) {
        for (const std::string* f : {&r.subject, &r.condition, &r.view, &r.path, &r.partition})
            if (f->find(',') != std::string::npos)
                throw ConfigError("manifest field contains a comma: " + *f);
        out << r.subject << ',' << r.condition << ',' << r.view << ',' << r.path << ','
            << r.frames << ',' << r.partition << "\n";
    }
    if (!out) throw IoError("short write: " + csv_path);
}

inline DatasetManifest read_manifest(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open manifest: " + csv_path);
    DatasetManifest m;
    m.root = std::filesystem::path(csv_path).parent_path().string();
    if (m.root.empty()) m.root = ".";

    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw ConfigError("manifest header mismatch in " + csv_path + " (want '" +
                          kManifestHeader + "')");
    size_t lineno = 1;
    std::vector<std::string> seen_paths;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 6)
            throw ConfigError("manifest line " + std::to_string(lineno) + ": want 6 columns, got " +
                              std::to_string(cols.size()));
        SeqRecord r{cols[0], cols[1], cols[2], cols[3], 0, cols[5]};
        try {
            r.frames = std::stoi(cols[4]);
        } catch (const std::exception&) {
            throw ConfigError("manifest line " + std::to_string(lineno) + ": bad frame count '" +
                              cols[4] + "'");
        }
        if (r.partition != "train" && r.partition != "gallery" && r.partition != "probe")
            throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown partition '" +
                              r.partition + "'");
        seen_paths.push_back(r.path);
        m.records.push_back(std::move(r));
    }
    std::sort(seen_paths.begin(), seen_paths.end());
    if (std::adjacent_find(seen_paths.begin(), seen_paths.end()) != seen_paths.end())
        throw ConfigError("manifest lists a sequence path twice: " + csv_path);
    return m;
}

// Loads every manifest sequence into memory, index-aligned with the records.
inline std::vector<SilhouetteSequence> load_dataset(const DatasetManifest& m, int out_h, int out_w,
                                                    NormalizeMode mode = NormalizeMode::crop,
                                                    std::vector<std::string>* drop_log = nullptr) {
    std::vector<SilhouetteSequence> out;
    out.reserve(m.records.size());
    for (const auto& r : m.records) {
        SilhouetteSequence s;
        s.subject = r.subject;
        s.condition = r.condition;
        s.view = r.view;
        s.frames = load_sequence_frames(m.root + "/" + r.path, out_h, out_w, mode, drop_log);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dygait::prep
