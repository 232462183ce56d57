#include <omp.h>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dygait/checkpoint.hpp"
#include "dygait/config.hpp"
#include "dygait/evaluate.hpp"
#include "dygait/gradsuite.hpp"
#include "dygait/synthgait.hpp"
#include "dygait/train.hpp"

namespace fs = std::filesystem;
using namespace dygait;

namespace {

// Exit codes: 0 success, 2 usage/config, 3 I/O, 4 divergence, 5 protocol
// empty, 1 check failure.

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> sets;
    uint64_t seed = 0;
    bool seed_given = false;
};

config::RunConfig load_run_config(const CommonFlags& cf) {
    config::RunConfig rc;
    if (!cf.config_path.empty()) rc = config::parse_config_file(cf.config_path);
    for (const auto& kv : cf.sets) config::apply_override(rc, kv);
    return rc;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

int cmd_synth(const std::string& out, int ids, int seqs, int frames, const std::string& policy,
              double noise, double amplitude, int height, int width, uint64_t seed) {
    synth::GenParams p;
    p.n_ids = ids;
    p.seqs_per_id = seqs;
    p.frames = frames;
    p.policy = synth::parse_policy(policy);
    p.noise = noise;
    p.amplitude = amplitude;
    p.img_h = height;
    p.img_w = width;
    p.seed = seed;
    const auto gen = synth::generate_dataset(p, out);
    std::printf("wrote %zu sequences under %s\n", gen.manifest.records.size(), out.c_str());
    std::printf("manifest: %s\n", gen.manifest_path.c_str());
    std::printf("specs: %s\n", gen.specs_path.c_str());
    return 0;
}

int cmd_prep(const std::string& in, const std::string& out, int height, int width,
             const std::string& mode_str) {
    const auto mode = prep::parse_normalize_mode(mode_str);
    std::error_code ec;
    if (!fs::is_directory(in, ec)) throw IoError("not a directory: " + in);

    struct Seq {
        std::string subject, condition, view, dir;
    };
    std::vector<Seq> seqs;
    std::vector<std::string> subjects;
    for (const auto& subj : fs::directory_iterator(in)) {
        if (!subj.is_directory()) continue;
        const std::string sname = subj.path().filename().string();
        if (sname == "regions") continue;
        subjects.push_back(sname);
    }
    std::sort(subjects.begin(), subjects.end());
    for (const auto& sname : subjects) {
        std::vector<Seq> mine;
        for (const auto& cond : fs::directory_iterator(fs::path(in) / sname)) {
            if (!cond.is_directory()) continue;
            for (const auto& view : fs::directory_iterator(cond.path())) {
                if (!view.is_directory()) continue;
                mine.push_back({sname, cond.path().filename().string(),
                                view.path().filename().string(), view.path().string()});
            }
        }
        std::sort(mine.begin(), mine.end(), [](const Seq& a, const Seq& b) {
            return std::tie(a.condition, a.view) < std::tie(b.condition, b.view);
        });
        seqs.insert(seqs.end(), mine.begin(), mine.end());
    }
    if (seqs.empty()) throw SequenceError("no sequence directories under " + in);

    ensure_dir(out);
    prep::DatasetManifest manifest;
    manifest.root = out;

    // Same per-subject split rule as the generator: first half of a subject's
    // sequences train, then gallery, remainder probe.
    size_t i = 0;
    long dropped = 0;
    while (i < seqs.size()) {
        size_t j = i;
        while (j < seqs.size() && seqs[j].subject == seqs[i].subject) ++j;
        const long n = static_cast<long>(j - i);
        const long n_train = n / 2;
        const long n_gallery = (n - n_train + 1) / 2;
        for (size_t s = i; s < j; ++s) {
            const long ord = static_cast<long>(s - i);
            const std::string part =
                ord < n_train ? "train" : (ord < n_train + n_gallery ? "gallery" : "probe");
            std::vector<std::string> drops;
            Tensor4<float> frames;
            try {
                frames = prep::load_sequence_frames(seqs[s].dir, height, width, mode, &drops);
            } catch (const SequenceError& e) {
                std::fprintf(stderr, "skipped: %s\n", e.what());
                ++dropped;
                continue;
            }
            for (const auto& d : drops) std::fprintf(stderr, "%s\n", d.c_str());
            const std::string rel = seqs[s].subject + "/" + seqs[s].condition + "/" + seqs[s].view;
            ensure_dir(out + "/" + rel);
            img::Image im;
            im.h = height;
            im.w = width;
            im.px.resize(static_cast<size_t>(height) * width);
            for (int t = 0; t < frames.t; ++t) {
                const float* src = frames.frame(0, t);
                for (size_t px = 0; px < im.px.size(); ++px)
                    im.px[px] = src[px] > 0.5f ? 255 : 0;
                char name[16];
                std::snprintf(name, sizeof(name), "%04d.pgm", t);
                img::write_pgm(out + "/" + rel + "/" + name, im);
            }
            manifest.records.push_back(
                {seqs[s].subject, seqs[s].condition, seqs[s].view, rel, frames.t, part});
        }
        i = j;
    }
    if (manifest.records.empty()) throw SequenceError("no usable sequences under " + in);
    prep::write_manifest(out + "/manifest.csv", manifest);
    std::printf("wrote %zu sequences (%ld skipped) under %s\n", manifest.records.size(), dropped,
                out.c_str());
    std::printf("manifest: %s\n", (out + "/manifest.csv").c_str());
    return 0;
}

int cmd_train(const CommonFlags& cf, const std::string& data, const std::string& out, long iters,
              int blocks, const std::string& ablation, const std::string& resume) {
    config::RunConfig rc = load_run_config(cf);
    if (!data.empty()) rc.data_root = data;
    if (!out.empty()) rc.out_dir = out;
    if (blocks > 0) config::apply_blocks(rc, blocks);
    if (!ablation.empty()) rc.ablation = model::parse_ablation(ablation);
    if (cf.seed_given) rc.train.seed = cf.seed;
    if (iters >= 0) rc.train.iterations = iters;

    const auto manifest = prep::read_manifest(rc.data_root + "/manifest.csv");
    train::TrainState<float> st;
    if (resume.empty()) {
        const int n_classes = static_cast<int>(manifest.train_subjects().size());
        st = train::init_train_state<float>(rc.model, rc.train, n_classes, rc.ablation);
    } else {
        st = ckpt::load_checkpoint<float>(resume);
        if (iters >= 0) st.cfg.iterations = iters;  // extend or shorten the target
    }

    ensure_dir(rc.out_dir);
    std::ofstream log(rc.out_dir + "/train_log.csv", std::ios::app);
    if (!log) throw IoError("cannot open train log in " + rc.out_dir);

    train::SequenceCache cache(manifest, st.model.in_h, st.model.in_w, rc.normalize_mode);
    while (st.iteration < st.cfg.iterations) {
        const auto rep = train::train_step(st, manifest, cache);
        log << rep.csv_row(st.iteration) << "\n";
        if (st.cfg.checkpoint_every > 0 && st.iteration % st.cfg.checkpoint_every == 0 &&
            st.iteration < st.cfg.iterations) {
            char name[40];
            std::snprintf(name, sizeof(name), "ckpt_%06ld.dygt", st.iteration);
            ckpt::save_checkpoint(st, rc.out_dir + "/" + name);
            log.flush();
        }
    }
    log.flush();
    if (!log) throw IoError("short write on train log in " + rc.out_dir);
    const std::string final_path = rc.out_dir + "/final.dygt";
    ckpt::save_checkpoint(st, final_path);
    std::printf("trained to %ld iterations\n", st.iteration);
    std::printf("final checkpoint: %s\n", final_path.c_str());
    return 0;
}

int cmd_eval(const CommonFlags& cf, const std::string& data, const std::string& ckpt_path,
             const std::string& out, const std::string& gallery_part,
             const std::string& probe_part, const std::string& protocol_str,
             const std::string& dist_str) {
    config::RunConfig rc = load_run_config(cf);
    if (!protocol_str.empty()) rc.protocol = eval::parse_protocol(protocol_str);
    if (!dist_str.empty()) rc.dist_mode = eval::parse_dist_mode(dist_str);
    const std::string report_dir = out.empty() ? rc.out_dir : out;

    const auto st = ckpt::load_checkpoint<float>(ckpt_path);
    const auto manifest = prep::read_manifest(data + "/manifest.csv");
    std::vector<std::string> drops;
    const auto gallery =
        eval::embed_all(manifest, gallery_part, st.params, st.model, st.mode, rc.normalize_mode,
                        &drops);
    const auto probe = eval::embed_all(manifest, probe_part, st.params, st.model, st.mode,
                                       rc.normalize_mode, &drops);
    for (const auto& d : drops) std::fprintf(stderr, "%s\n", d.c_str());

    const auto rep = eval::cross_view_protocol(probe, gallery, rc.protocol, rc.dist_mode);
    ensure_dir(report_dir);
    eval::write_report(rep, report_dir);
    std::printf("report: %s\n", report_dir.c_str());
    std::fputs(rep.summary().c_str(), stdout);
    return 0;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& seq, const std::string& out,
                int block, const std::string& regions_dir, const std::string& mode_str) {
    const auto mode = prep::parse_normalize_mode(mode_str);
    const auto st = ckpt::load_checkpoint<float>(ckpt_path);

    Tensor4<float> frames;
    std::vector<img::Image> regions;
    if (regions_dir.empty()) {
        frames = prep::load_sequence_frames(seq, st.model.in_h, st.model.in_w, mode);
    } else {
        auto aligned = synth::load_sequence_with_regions(seq, regions_dir, st.model.in_h,
                                                         st.model.in_w, mode);
        frames = std::move(aligned.frames);
        regions = std::move(aligned.regions);
    }
    const auto maps = model::activation_heatmap(frames, st.params, st.model, block, st.mode);

    ensure_dir(out);
    img::Image im;
    im.h = st.model.in_h;
    im.w = st.model.in_w;
    im.px.resize(static_cast<size_t>(im.h) * im.w);
    for (size_t t = 0; t < maps.size(); ++t) {
        for (size_t i = 0; i < im.px.size(); ++i)
            im.px[i] = static_cast<uint8_t>(std::lround(maps[t].data[i] * 255.0f));
        char name[24];
        std::snprintf(name, sizeof(name), "heat_%04zu.pgm", t);
        img::write_pgm(out + "/" + name, im);
    }
    std::printf("wrote %zu heatmaps under %s\n", maps.size(), out.c_str());
    if (!regions_dir.empty()) {
        const double legs = synth::region_mean_heat(maps, regions, synth::kLegsCode);
        const double bag = synth::region_mean_heat(maps, regions, synth::kBagCode);
        std::printf("heat_legs=%.6f heat_bag=%.6f\n", legs, bag);
    }
    return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& perturb) {
    const auto suite = gradsuite::run(seed, perturb);
    for (const auto& op : suite.ops)
        std::printf("%s %-20s max_rel=%.3e tol=%.0e checked=%d redraws=%d worst=%s\n",
                    op.pass ? "PASS" : "FAIL", op.name.c_str(), op.rep.max_rel, op.tol,
                    op.rep.checked, op.rep.redraws, op.rep.worst.c_str());
    std::printf("%s: %zu ops in %.2fs\n", suite.all_pass ? "all gradients verified" : "FAILED",
                suite.ops.size(), suite.seconds);
    return suite.all_pass ? 0 : 1;
}

int cmd_dump(const std::string& data, const std::string& ckpt_path, const std::string& partition,
             const std::string& out_file, const std::string& mode_str) {
    const auto mode = prep::parse_normalize_mode(mode_str);
    const auto st = ckpt::load_checkpoint<float>(ckpt_path);
    const auto manifest = prep::read_manifest(data + "/manifest.csv");
    std::vector<std::string> drops;
    const auto set = eval::embed_all(manifest, partition, st.params, st.model, st.mode, mode,
                                     &drops);
    for (const auto& d : drops) std::fprintf(stderr, "%s\n", d.c_str());
    eval::dump_embeddings(set, out_file);
    std::printf("wrote %d embeddings to %s\n", set.size(), out_file.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic-gait silhouette recognition pipeline"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap OpenMP worker count");

    CommonFlags cf;
    auto add_common = [&cf](CLI::App* sub, bool with_config) {
        sub->add_option("--seed", cf.seed, "RNG seed")->each([&cf](const std::string&) {
            cf.seed_given = true;
        });
        if (with_config) {
            sub->add_option("--config", cf.config_path, "key=value config file");
            sub->add_option("--set", cf.sets, "override, e.g. --set lr=0.05");
        }
    };

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic silhouette dataset");
    std::string s_out;
    int s_ids = 16, s_seqs = 8, s_frames = 40, s_h = 64, s_w = 44;
    std::string s_policy = "random";
    double s_noise = 0.005, s_amp = 0.45;
    synth_cmd->add_option("--out", s_out, "output directory")->required();
    synth_cmd->add_option("--ids", s_ids, "number of identities");
    synth_cmd->add_option("--seqs", s_seqs, "sequences per identity");
    synth_cmd->add_option("--frames", s_frames, "frames per sequence");
    synth_cmd->add_option("--policy", s_policy, "confounder policy (none|random|adversarial)");
    synth_cmd->add_option("--noise", s_noise, "salt-and-pepper flip probability");
    synth_cmd->add_option("--amplitude", s_amp, "leg swing amplitude (radians)");
    synth_cmd->add_option("--height", s_h, "frame height");
    synth_cmd->add_option("--width", s_w, "frame width");
    add_common(synth_cmd, false);

    auto* prep_cmd = app.add_subcommand("prep", "normalize a raw silhouette tree");
    std::string p_in, p_out, p_mode = "crop";
    int p_h = 64, p_w = 44;
    prep_cmd->add_option("--in", p_in, "raw dataset root (subject/condition/view/*.pgm)")
        ->required();
    prep_cmd->add_option("--out", p_out, "normalized output root")->required();
    prep_cmd->add_option("--height", p_h, "output height");
    prep_cmd->add_option("--width", p_w, "output width");
    prep_cmd->add_option("--mode", p_mode, "normalization (crop|plain)");

    auto* train_cmd = app.add_subcommand("train", "train on a prepared dataset");
    std::string t_data, t_out, t_ablation, t_resume;
    long t_iters = -1;
    int t_blocks = -1;
    train_cmd->add_option("--data", t_data, "dataset root containing manifest.csv");
    train_cmd->add_option("--out", t_out, "checkpoint/log directory");
    train_cmd->add_option("--iters", t_iters, "iteration target override");
    train_cmd->add_option("--blocks", t_blocks, "backbone depth override");
    train_cmd->add_option("--ablation", t_ablation, "gfe_only|dfe_only|both");
    train_cmd->add_option("--resume", t_resume, "checkpoint to resume from");
    add_common(train_cmd, true);

    auto* eval_cmd = app.add_subcommand("eval", "rank a probe set against a gallery");
    std::string e_data, e_ckpt, e_out, e_gal = "gallery", e_probe = "probe", e_proto, e_dist;
    eval_cmd->add_option("--data", e_data, "dataset root containing manifest.csv")->required();
    eval_cmd->add_option("--ckpt", e_ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--out", e_out, "report directory");
    eval_cmd->add_option("--gallery-partition", e_gal, "manifest partition used as gallery");
    eval_cmd->add_option("--probe-partition", e_probe, "manifest partition used as probe");
    eval_cmd->add_option("--protocol", e_proto, "plain|cross_view");
    eval_cmd->add_option("--dist", e_dist, "concat|strip_sum_sq");
    add_common(eval_cmd, true);

    auto* heat_cmd = app.add_subcommand("heatmap", "per-frame activation heatmaps for a sequence");
    std::string h_ckpt, h_seq, h_out, h_regions, h_mode = "crop";
    int h_block = 0;
    heat_cmd->add_option("--ckpt", h_ckpt, "trained checkpoint")->required();
    heat_cmd->add_option("--seq", h_seq, "sequence directory of PGM frames")->required();
    heat_cmd->add_option("--out", h_out, "output directory")->required();
    heat_cmd->add_option("--block", h_block, "backbone block index");
    heat_cmd->add_option("--regions", h_regions, "ground-truth region mask directory");
    heat_cmd->add_option("--mode", h_mode, "normalization (crop|plain)");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string g_perturb;
    uint64_t g_seed = 9000;
    grad_cmd->add_option("--seed", g_seed, "RNG seed");
    grad_cmd->add_option("--perturb", g_perturb,
                         "sabotage the named op's analytic gradient (test hook)");

    auto* dump_cmd = app.add_subcommand("dump-embeddings", "write a partition's embeddings as CSV");
    std::string d_data, d_ckpt, d_part = "probe", d_out, d_mode = "crop";
    dump_cmd->add_option("--data", d_data, "dataset root containing manifest.csv")->required();
    dump_cmd->add_option("--ckpt", d_ckpt, "trained checkpoint")->required();
    dump_cmd->add_option("--partition", d_part, "manifest partition to embed");
    dump_cmd->add_option("--out", d_out, "output CSV path")->required();
    dump_cmd->add_option("--mode", d_mode, "normalization (crop|plain)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (threads > 0) omp_set_num_threads(threads);

    try {
        if (*synth_cmd)
            return cmd_synth(s_out, s_ids, s_seqs, s_frames, s_policy, s_noise, s_amp, s_h, s_w,
                             cf.seed_given ? cf.seed : 1);
        if (*prep_cmd) return cmd_prep(p_in, p_out, p_h, p_w, p_mode);
        if (*train_cmd) return cmd_train(cf, t_data, t_out, t_iters, t_blocks, t_ablation, t_resume);
        if (*eval_cmd)
            return cmd_eval(cf, e_data, e_ckpt, e_out, e_gal, e_probe, e_proto, e_dist);
        if (*heat_cmd) return cmd_heatmap(h_ckpt, h_seq, h_out, h_block, h_regions, h_mode);
        if (*grad_cmd) return cmd_gradcheck(g_seed, g_perturb);
        if (*dump_cmd) return cmd_dump(d_data, d_ckpt, d_part, d_out, d_mode);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ProtocolEmptyError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const img::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const SequenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
