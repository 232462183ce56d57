#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dygait/errors.hpp"
#include "dygait/image.hpp"
#include "dygait/preprocess.hpp"
#include "dygait/rng.hpp"
#include "dygait/tensor.hpp"

// Procedural silhouette walker whose identity signal lives exclusively in leg
// dynamics. The torso ellipse, leg length, and swing amplitude are shared by
// every identity; only the swing frequency separates them, and each sequence
// starts at a random phase. Static confounders (a carried bag) are attached
// per sequence according to a confounder policy.

namespace dygait::synth {

// region ground-truth codes in the emitted PGMs
inline constexpr uint8_t kTorsoCode = 200;
inline constexpr uint8_t kLegsCode = 120;
inline constexpr uint8_t kBagCode = 60;

struct WalkerSpec {
    int identity_id = 0;
    double leg_freq = 0.1;        // cycles per frame
    double leg_phase = 0.0;       // radians at t = 0
    double leg_amplitude = 0.45;  // swing half-angle, radians
    double arm_amplitude = 0.0;   // arms are off by default
    int bag_side = 0;             // 0 none, -1 left, +1 right
    int img_h = 64, img_w = 44;
    double noise = 0.005;  // per-pixel flip probability

    // fixed shared geometry (pixels)
    static constexpr double kTorsoRowC = 15.5, kTorsoColOff = 0.0;
    static constexpr double kTorsoSemiR = 9.0, kTorsoSemiC = 5.0;  // 18x10 ellipse
    static constexpr double kHipRow = 24.0, kHipSpread = 2.5;
    static constexpr double kLegLen = 20.0, kLegRadius = 1.4;
    static constexpr int kBagH = 8, kBagW = 6;
    static constexpr int kBagTopRow = 14;

    double center_col() const { return (img_w - 1) / 2.0 + kTorsoColOff; }

    void validate() const {
        if (img_h < 2 || img_w < 2) throw ConfigError("walker: image below 2x2");
        if (leg_amplitude < 0.0 || leg_amplitude > 1.2)
            throw ConfigError("walker: leg_amplitude outside [0,1.2] rad");
        if (noise < 0.0 || noise >= 1.0) throw ConfigError("walker: noise outside [0,1)");
        if (leg_freq < 0.0 || leg_freq >= 0.5)
            throw ConfigError("walker: leg_freq outside [0,0.5) cycles/frame");
        const double swing = kHipSpread + kLegLen * std::sin(leg_amplitude) + kLegRadius;
        const double left = std::min(center_col() - swing, center_col() - kTorsoSemiC);
        const double right = std::max(center_col() + swing, center_col() + kTorsoSemiC);
        const double foot = kHipRow + kLegLen + kLegRadius;
        const double head = kTorsoRowC - kTorsoSemiR;
        bool ok = head >= 0.0 && foot < img_h && left >= 0.0 && right < img_w;
        if (bag_side != 0) {
            const int c0 = bag_col0();
            ok = ok && kBagTopRow >= 0 && kBagTopRow + kBagH <= img_h && c0 >= 0 &&
                 c0 + kBagW <= img_w;
        }
        if (!ok) throw ConfigError("walker geometry exceeds the frame");
    }

    int bag_col0() const {
        const double edge = kTorsoSemiC + 1.0;
        return bag_side < 0 ? static_cast<int>(std::floor(center_col() - edge)) - kBagW
                            : static_cast<int>(std::ceil(center_col() + edge)) + 1;
    }
};

struct Rendered {
    Tensor4<float> frames{1, 1, 1, 1};     // silhouette, values {0,1}
    std::vector<img::Image> regions;       // per frame, region codes
};

namespace detail {

inline void stamp_capsule(img::Image& codes, double r0, double c0, double r1, double c1,
                          double radius, uint8_t code) {
    const int rlo = std::max(0, static_cast<int>(std::floor(std::min(r0, r1) - radius)));
    const int rhi = std::min(codes.h - 1, static_cast<int>(std::ceil(std::max(r0, r1) + radius)));
    const int clo = std::max(0, static_cast<int>(std::floor(std::min(c0, c1) - radius)));
    const int chi = std::min(codes.w - 1, static_cast<int>(std::ceil(std::max(c0, c1) + radius)));
    const double dr = r1 - r0, dc = c1 - c0;
    const double len2 = dr * dr + dc * dc;
    for (int r = rlo; r <= rhi; ++r)
        for (int c = clo; c <= chi; ++c) {
            double t = len2 > 0 ? ((r - r0) * dr + (c - c0) * dc) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double er = r - (r0 + t * dr), ec = c - (c0 + t * dc);
            if (er * er + ec * ec <= radius * radius && codes.at(r, c) == 0)
                codes.at(r, c) = code;
        }
}

// torso first, then legs, then bag: stamp order enforces region precedence
inline img::Image region_frame(const WalkerSpec& s, int t) {
    img::Image codes;
    codes.h = s.img_h;
    codes.w = s.img_w;
    codes.px.assign(static_cast<size_t>(s.img_h) * s.img_w, 0);

    const double cc = s.center_col();
    for (int r = 0; r < s.img_h; ++r)
        for (int c = 0; c < s.img_w; ++c) {
            const double er = (r - WalkerSpec::kTorsoRowC) / WalkerSpec::kTorsoSemiR;
            const double ec = (c - cc) / WalkerSpec::kTorsoSemiC;
            if (er * er + ec * ec <= 1.0) codes.at(r, c) = kTorsoCode;
        }

    for (int leg = 0; leg < 2; ++leg) {
        const double ang = s.leg_amplitude *
                           std::sin(2.0 * M_PI * s.leg_freq * t + s.leg_phase + M_PI * leg);
        const double hx = cc + (leg == 0 ? -WalkerSpec::kHipSpread : WalkerSpec::kHipSpread);
        stamp_capsule(codes, WalkerSpec::kHipRow, hx,
                      WalkerSpec::kHipRow + WalkerSpec::kLegLen * std::cos(ang),
                      hx + WalkerSpec::kLegLen * std::sin(ang), WalkerSpec::kLegRadius,
                      kLegsCode);
    }

    if (s.bag_side != 0) {
        const int c0 = s.bag_col0();
        for (int r = WalkerSpec::kBagTopRow; r < WalkerSpec::kBagTopRow + WalkerSpec::kBagH; ++r)
            for (int c = c0; c < c0 + WalkerSpec::kBagW; ++c)
                if (codes.at(r, c) == 0) codes.at(r, c) = kBagCode;
    }
    return codes;
}

}  // namespace detail

// The RNG is consumed only by pixel noise, in fixed row-major order, and not
// at all when noise is 0, so noise-free renders depend on the spec alone.
inline Rendered render_walker(const WalkerSpec& spec, int frames, Rng& rng) {
    spec.validate();
    if (frames < 1) throw SequenceError("render_walker: need at least 1 frame");
    Rendered out;
    out.frames = Tensor4<float>(1, frames, spec.img_h, spec.img_w);
    out.regions.reserve(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        img::Image codes = detail::region_frame(spec, t);
        float* dst = out.frames.frame(0, t);
        for (size_t i = 0; i < codes.px.size(); ++i) {
            bool fg = codes.px[i] != 0;
            if (spec.noise > 0.0 && rng.next_real() < spec.noise) fg = !fg;
            dst[i] = fg ? 1.0f : 0.0f;
        }
        out.regions.push_back(std::move(codes));
    }
    return out;
}

enum class ConfounderPolicy { none, random, adversarial };

inline ConfounderPolicy parse_policy(const std::string& s) {
    if (s == "none") return ConfounderPolicy::none;
    if (s == "random") return ConfounderPolicy::random;
    if (s == "adversarial") return ConfounderPolicy::adversarial;
    throw ConfigError("unknown confounder policy '" + s + "' (none|random|adversarial)");
}

struct GenParams {
    int n_ids = 16;
    int seqs_per_id = 8;
    int frames = 40;
    ConfounderPolicy policy = ConfounderPolicy::random;
    double noise = 0.005;
    double amplitude = 0.45;
    int img_h = 64, img_w = 44;
    uint64_t seed = 1;

    void validate() const {
        if (n_ids < 2) throw ConfigError("generate_dataset: need at least 2 identities");
        if (seqs_per_id < 1 || frames < 1)
            throw ConfigError("generate_dataset: seqs_per_id and frames must be positive");
        if (0.05 + 0.011 * (n_ids - 1) >= 0.5)
            throw ConfigError("generate_dataset: frequency grid exceeds Nyquist for " +
                              std::to_string(n_ids) + " identities");
    }
};

// Identities get distinct slots on a 0.011 cycles/frame grid (above the 0.01
// separation the walker invariant documents), shuffled so identity order and
// frequency order are unrelated.
inline std::vector<double> identity_frequencies(const GenParams& p) {
    std::vector<int> slot(static_cast<size_t>(p.n_ids));
    std::iota(slot.begin(), slot.end(), 0);
    Rng shuffle_rng(Rng::derive(p.seed, 0xF00D));
    for (int i = p.n_ids - 1; i > 0; --i)
        std::swap(slot[static_cast<size_t>(i)],
                  slot[static_cast<size_t>(shuffle_rng.next_int(0, i))]);
    std::vector<double> freq(static_cast<size_t>(p.n_ids));
    for (int i = 0; i < p.n_ids; ++i) freq[static_cast<size_t>(i)] = 0.05 + 0.011 * slot[static_cast<size_t>(i)];
    return freq;
}

struct GeneratedDataset {
    prep::DatasetManifest manifest;
    std::string manifest_path;
    std::string specs_path;
};

// Renders the whole dataset into the preprocess directory layout:
//   <out>/<subject>/<condition>/<view>/<NNNN>.pgm
// with ground truth under <out>/regions/... , a specs.csv of identity
// parameters, and the manifest CSV. Partitions per identity: first half
// train, remainder split between gallery and probe.
inline GeneratedDataset generate_dataset(const GenParams& p, const std::string& out_dir) {
    namespace fs = std::filesystem;
    p.validate();
    const auto freq = identity_frequencies(p);

    fs::create_directories(out_dir);
    GeneratedDataset out;
    out.manifest.root = out_dir;
    out.specs_path = out_dir + "/specs.csv";
    {
        std::ofstream specs(out.specs_path);
        if (!specs) throw IoError("cannot write " + out.specs_path);
        specs << "identity,leg_freq,leg_amplitude,arm_amplitude\n";
        for (int id = 0; id < p.n_ids; ++id) {
            char row[96];
            std::snprintf(row, sizeof(row), "s%03d,%.6f,%.6f,%.6f\n", id,
                          freq[static_cast<size_t>(id)], p.amplitude, 0.0);
            specs << row;
        }
    }

    const int n_train = p.seqs_per_id / 2;
    const int n_gallery = (p.seqs_per_id - n_train + 1) / 2;
    long seq_index = 0;
    for (int id = 0; id < p.n_ids; ++id) {
        char subj[16];
        std::snprintf(subj, sizeof(subj), "s%03d", id);
        int nm = 0, bgl = 0, bgr = 0;
        for (int s = 0; s < p.seqs_per_id; ++s, ++seq_index) {
            const std::string partition =
                s < n_train ? "train" : (s < n_train + n_gallery ? "gallery" : "probe");
            Rng rng(Rng::derive(p.seed, 0x5EED0000 + static_cast<uint64_t>(seq_index)));

            WalkerSpec spec;
            spec.identity_id = id;
            spec.leg_freq = freq[static_cast<size_t>(id)];
            spec.leg_amplitude = p.amplitude;
            spec.leg_phase = rng.next_real() * 2.0 * M_PI;
            spec.noise = p.noise;
            spec.img_h = p.img_h;
            spec.img_w = p.img_w;
            switch (p.policy) {
                case ConfounderPolicy::none: spec.bag_side = 0; break;
                case ConfounderPolicy::random:
                    spec.bag_side = rng.next_bernoulli(0.5)
                                        ? 0
                                        : (rng.next_bernoulli(0.5) ? -1 : 1);
                    break;
                case ConfounderPolicy::adversarial: {
                    // bag side tracks identity parity in train, flips in test
                    const bool left = (id % 2 == 0) == (partition == "train");
                    spec.bag_side = left ? -1 : 1;
                    break;
                }
            }

            char cond[20];
            if (spec.bag_side == 0)
                std::snprintf(cond, sizeof(cond), "NM-%02d", nm++);
            else if (spec.bag_side < 0)
                std::snprintf(cond, sizeof(cond), "BGL-%02d", bgl++);
            else
                std::snprintf(cond, sizeof(cond), "BGR-%02d", bgr++);

            const std::string rel = std::string(subj) + "/" + cond + "/090";
            const fs::path seq_dir = fs::path(out_dir) / rel;
            const fs::path reg_dir = fs::path(out_dir) / "regions" / rel;
            fs::create_directories(seq_dir);
            fs::create_directories(reg_dir);

            Rendered r = render_walker(spec, p.frames, rng);
            img::Image sil;
            sil.h = p.img_h;
            sil.w = p.img_w;
            sil.px.resize(static_cast<size_t>(p.img_h) * p.img_w);
            for (int t = 0; t < p.frames; ++t) {
                const float* src = r.frames.frame(0, t);
                for (size_t i = 0; i < sil.px.size(); ++i)
                    sil.px[i] = src[i] > 0.5f ? 255 : 0;
                char name[16];
                std::snprintf(name, sizeof(name), "%04d.pgm", t);
                img::write_pgm((seq_dir / name).string(), sil);
                img::write_pgm((reg_dir / name).string(), r.regions[static_cast<size_t>(t)]);
            }
            out.manifest.records.push_back(
                {subj, cond, "090", rel, p.frames, partition});
        }
    }
    out.manifest_path = out_dir + "/manifest.csv";
    prep::write_manifest(out.manifest_path, out.manifest);
    return out;
}

inline double iou(const float* a, const float* b, size_t n) {
    long inter = 0, uni = 0;
    for (size_t i = 0; i < n; ++i) {
        const bool fa = a[i] > 0.5f, fb = b[i] > 0.5f;
        inter += fa && fb;
        uni += fa || fb;
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

struct AlignedSequence {
    Tensor4<float> frames{1, 1, 1, 1};      // normalized (1, T, H, W)
    std::vector<img::Image> regions;        // code masks resampled into the same space
};

// Loads a rendered sequence alongside its regions/ mirror and pulls the region
// codes through the exact same resampling normalize_frame applied, so region
// pixels stay aligned with the network input.
inline AlignedSequence load_sequence_with_regions(const std::string& seq_dir,
                                                  const std::string& regions_dir, int out_h,
                                                  int out_w,
                                                  prep::NormalizeMode mode = prep::NormalizeMode::crop) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(seq_dir, ec)) throw IoError("not a sequence directory: " + seq_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(seq_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    std::vector<prep::Frame> kept;
    AlignedSequence out;
    for (const auto& name : names) {
        const img::Image raw = img::read_pgm(seq_dir + "/" + name);
        const img::Image reg = img::read_pgm(regions_dir + "/" + name);
        if (reg.h != raw.h || reg.w != raw.w)
            throw SequenceError("region mask size mismatch for " + name);
        std::vector<int> src_map;
        auto norm = prep::normalize_frame(prep::frame_from_image(raw), out_h, out_w, mode, &src_map);
        if (!norm) continue;
        img::Image nreg;
        nreg.h = out_h;
        nreg.w = out_w;
        nreg.px.assign(static_cast<size_t>(out_h) * out_w, 0);
        for (size_t i = 0; i < nreg.px.size(); ++i)
            if (src_map[i] >= 0) nreg.px[i] = reg.px[static_cast<size_t>(src_map[i])];
        kept.push_back(std::move(*norm));
        out.regions.push_back(std::move(nreg));
    }
    if (kept.empty()) throw SequenceError("no usable frames in " + seq_dir);
    out.frames = Tensor4<float>(1, static_cast<int>(kept.size()), out_h, out_w);
    for (size_t t = 0; t < kept.size(); ++t)
        std::copy(kept[t].v.begin(), kept[t].v.end(), out.frames.frame(0, static_cast<int>(t)));
    return out;
}

// Mean heat over the pixels carrying `code` across a sequence's heatmaps.
template <typename T>
double region_mean_heat(const std::vector<Tensor4<T>>& maps, const std::vector<img::Image>& regions,
                        uint8_t code) {
    double sum = 0.0;
    long count = 0;
    const size_t t_lim = std::min(maps.size(), regions.size());
    for (size_t t = 0; t < t_lim; ++t) {
        const Tensor4<T>& m = maps[t];
        for (size_t i = 0; i < m.size(); ++i)
            if (regions[t].px[i] == code) {
                sum += static_cast<double>(m.data[i]);
                ++count;
            }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace dygait::synth
