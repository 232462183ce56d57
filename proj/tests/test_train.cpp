#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dygait/checkpoint.hpp"
#include "dygait/synthgait.hpp"
#include "dygait/train.hpp"
#include "helpers.hpp"

using namespace dygait;
using namespace dygait::train;
using testutil::bit_equal;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// manifest with per-subject train sequence counts; no files behind it, which
// is fine for sampling tests
prep::DatasetManifest toy_manifest(const std::vector<int>& train_counts) {
    prep::DatasetManifest m;
    m.root = "unused";
    for (size_t s = 0; s < train_counts.size(); ++s) {
        char subj[16];
        std::snprintf(subj, sizeof(subj), "s%03zu", s);
        for (int i = 0; i < train_counts[s]; ++i)
            m.records.push_back({subj, "NM-" + std::to_string(i), "090",
                                 std::string(subj) + "/" + std::to_string(i), 10, "train"});
        m.records.push_back({subj, "NM-90", "090", std::string(subj) + "/g", 10, "gallery"});
    }
    return m;
}

model::ModelConfig micro_model() {
    model::ModelConfig cfg;
    cfg.stage_channels = {2, 3};
    cfg.pool_after = {0};
    cfg.strips = 4;
    cfg.embed_dim = 6;
    cfg.in_h = 64;
    cfg.in_w = 44;
    return cfg;
}

TrainConfig micro_train(uint64_t seed) {
    TrainConfig tc;
    tc.p = 2;
    tc.k = 2;
    tc.clip_len = 9;
    tc.lr = 0.01;
    tc.seed = seed;
    return tc;
}

// two-identity corpus rendered once per temp dir
prep::DatasetManifest micro_dataset(const fs::path& dir, int ids = 2, uint64_t seed = 17) {
    synth::GenParams p;
    p.n_ids = ids;
    p.seqs_per_id = 4;
    p.frames = 12;
    p.policy = synth::ConfounderPolicy::none;
    p.noise = 0.0;
    p.seed = seed;
    return synth::generate_dataset(p, dir.string()).manifest;
}

template <typename T>
bool states_equal(const TrainState<T>& a, const TrainState<T>& b) {
    if (a.iteration != b.iteration || a.adam_t != b.adam_t || a.n_classes != b.n_classes)
        return false;
    if (a.rng.save_state() != b.rng.save_state()) return false;
    for (const auto& [name, t] : a.params)
        if (!bit_equal(t, b.params.at(name))) return false;
    for (const auto& [name, t] : a.opt_m)
        if (!bit_equal(t, b.opt_m.at(name))) return false;
    for (const auto& [name, t] : a.opt_v)
        if (!bit_equal(t, b.opt_v.at(name))) return false;
    return a.params.size() == b.params.size() && a.opt_m.size() == b.opt_m.size() &&
           a.opt_v.size() == b.opt_v.size();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("train config invariants") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    auto bad = [](auto mutate) {
        TrainConfig tc;
        mutate(tc);
        CHECK_THROWS_AS(tc.validate(), ConfigError);
    };
    bad([](TrainConfig& t) { t.p = 1; });
    bad([](TrainConfig& t) { t.k = 1; });
    bad([](TrainConfig& t) { t.clip_len = 2; });
    bad([](TrainConfig& t) { t.lr = 0.0; });
    bad([](TrainConfig& t) { t.margin = 0.0; });
    bad([](TrainConfig& t) { t.momentum = 1.0; });
    bad([](TrainConfig& t) { t.adam_beta2 = 1.0; });
}

TEST_CASE("pk_sample: subject coverage, replacement rule, determinism") {
    auto m = toy_manifest({3, 1, 4, 2, 3});
    const auto subjects = m.train_subjects();
    REQUIRE(subjects.size() == 5);

    Rng rng(1);
    auto batch = pk_sample(m, 5, 2, rng);
    REQUIRE(batch.size() == 10);
    std::map<int, int> label_count;
    for (const auto& pick : batch) {
        label_count[pick.label]++;
        const auto& rec = m.records[pick.record];
        CHECK(rec.partition == "train");
        CHECK(rec.subject == subjects[static_cast<size_t>(pick.label)]);
    }
    REQUIRE(label_count.size() == 5);  // P == all subjects: each exactly once
    for (const auto& [l, n] : label_count) CHECK(n == 2);

    // the 1-sequence subject repeats its only record K times
    Rng rng2(2);
    auto wide = pk_sample(m, 5, 4, rng2);
    for (const auto& pick : wide)
        if (m.records[pick.record].subject == "s001") {
            const auto train_recs = m.partition_indices("train");
            CHECK(m.records[pick.record].condition == "NM-0");
        }
    std::map<int, std::vector<size_t>> by_label;
    for (const auto& pick : wide) by_label[pick.label].push_back(pick.record);
    for (const auto& [label, recs] : by_label) {
        CHECK(recs.size() == 4);
        std::set<size_t> uniq(recs.begin(), recs.end());
        if (subjects[static_cast<size_t>(label)] == "s001") CHECK(uniq.size() == 1);
        if (subjects[static_cast<size_t>(label)] == "s002") CHECK(uniq.size() == 4);
    }

    Rng ra(7), rb(7);
    auto b1 = pk_sample(m, 3, 3, ra);
    auto b2 = pk_sample(m, 3, 3, rb);
    REQUIRE(b1.size() == b2.size());
    for (size_t i = 0; i < b1.size(); ++i) {
        CHECK(b1[i].record == b2[i].record);
        CHECK(b1[i].label == b2[i].label);
    }

    Rng rc(9);
    CHECK_THROWS_AS(pk_sample(m, 6, 2, rc), ConfigError);
}

TEST_CASE("sgd update matches hand arithmetic and momentum accumulates") {
    Tensor4<double> p(1, 1, 1, 1), g(1, 1, 1, 1), v(1, 1, 1, 1);
    p.data[0] = 1.0;
    g.data[0] = 2.0 * p.data[0];
    sgd_update(p, g, v, 0.1, 0.0);
    CHECK(p.data[0] == doctest::Approx(0.8).epsilon(1e-15));

    // with momentum the velocity carries over
    g.data[0] = 2.0 * p.data[0];
    sgd_update(p, g, v, 0.1, 0.9);
    const double v2 = 0.9 * -0.2 - 0.1 * 1.6;
    CHECK(v.data[0] == doctest::Approx(v2).epsilon(1e-15));
    CHECK(p.data[0] == doctest::Approx(0.8 + v2).epsilon(1e-15));
}

TEST_CASE("sgd with momentum converges on a convex quadratic") {
    Rng rng(4);
    Tensor4<double> p(1, 1, 1, 4), c(1, 1, 1, 4), g(1, 1, 1, 4), v(1, 1, 1, 4);
    for (int i = 0; i < 4; ++i) {
        c.data[static_cast<size_t>(i)] = rng.next_symmetric(1.0);
        p.data[static_cast<size_t>(i)] = c.data[static_cast<size_t>(i)] + rng.next_symmetric(1.0);
    }
    for (int step = 0; step < 400; ++step) {
        for (size_t i = 0; i < 4; ++i) g.data[i] = 2.0 * (p.data[i] - c.data[i]);
        sgd_update(p, g, v, 0.1, 0.9);
    }
    for (size_t i = 0; i < 4; ++i) CHECK(std::fabs(p.data[i] - c.data[i]) < 1e-6);
}

TEST_CASE("adam matches a loop oracle to 1e-12 per step") {
    Rng rng(5);
    const int n = 6;
    Tensor4<double> p(1, 1, 1, n), m1(1, 1, 1, n), m2(1, 1, 1, n);
    std::vector<double> op(static_cast<size_t>(n)), om(static_cast<size_t>(n)),
        ov(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        p.data[static_cast<size_t>(i)] = rng.next_symmetric(1.0);
        op[static_cast<size_t>(i)] = p.data[static_cast<size_t>(i)];
    }
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (long t = 1; t <= 10; ++t) {
        Tensor4<double> g(1, 1, 1, n);
        for (int i = 0; i < n; ++i) g.data[static_cast<size_t>(i)] = rng.next_symmetric(2.0);
        adam_update(p, g, m1, m2, t, lr, b1, b2, eps);
        for (size_t i = 0; i < static_cast<size_t>(n); ++i) {
            om[i] = b1 * om[i] + (1 - b1) * g.data[i];
            ov[i] = b2 * ov[i] + (1 - b2) * g.data[i] * g.data[i];
            const double mh = om[i] / (1 - std::pow(b1, static_cast<double>(t)));
            const double vh = ov[i] / (1 - std::pow(b2, static_cast<double>(t)));
            op[i] -= lr * mh / (std::sqrt(vh) + eps);
            CHECK(std::fabs(p.data[i] - op[i]) <= 1e-12);
            CHECK(std::fabs(m1.data[i] - om[i]) <= 1e-12);
            CHECK(std::fabs(m2.data[i] - ov[i]) <= 1e-12);
        }
    }
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    TempDir dir("dygait_train_lr0");
    auto m = micro_dataset(dir.path / "d");
    auto st = init_train_state<float>(micro_model(), micro_train(3), 2);
    st.cfg.lr = 0.0;  // below validate()'s floor on purpose: the update must be a no-op
    auto before = st.params;
    SequenceCache cache(m, 64, 44);
    train_step(st, m, cache);
    for (const auto& [name, t] : st.params) CHECK(bit_equal(t, before.at(name)));

    st.cfg.optimizer = TrainConfig::Opt::adam;
    train_step(st, m, cache);
    for (const auto& [name, t] : st.params) CHECK(bit_equal(t, before.at(name)));
}

TEST_CASE("a nan in the parameters raises a divergence error naming the step") {
    TempDir dir("dygait_train_nan");
    auto m = micro_dataset(dir.path / "d");
    auto st = init_train_state<float>(micro_model(), micro_train(4), 2);
    st.iteration = 41;
    st.params.at("lta.conv1.w").data[0] = std::numeric_limits<float>::quiet_NaN();
    SequenceCache cache(m, 64, 44);
    try {
        train_step(st, m, cache);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.step == 41);
        CHECK(std::string(e.what()).find("41") != std::string::npos);
    }
}

TEST_CASE("training is deterministic and ablation changes the trajectory") {
    TempDir dir("dygait_train_det");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);

    auto run = [&](model::Ablation mode) {
        auto st = init_train_state<float>(micro_model(), micro_train(6), 2, mode);
        for (int i = 0; i < 3; ++i) train_step(st, m, cache);
        return st;
    };
    auto a = run(model::Ablation::both);
    auto b = run(model::Ablation::both);
    CHECK(states_equal(a, b));

    auto g = run(model::Ablation::gfe_only);
    CHECK_FALSE(bit_equal(a.params.at("block0.gfe.w"), g.params.at("block0.gfe.w")));
}

TEST_CASE("fifty steps on two identities push the moving average of the loss down") {
    TempDir dir("dygait_train_ma");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);
    auto st = init_train_state<float>(micro_model(), micro_train(8), 2);

    std::vector<double> loss;
    for (int i = 0; i < 50; ++i) loss.push_back(train_step(st, m, cache).loss_all);
    auto ma10 = [&](size_t end) {  // mean of loss[end-10, end)
        double s = 0;
        for (size_t i = end - 10; i < end; ++i) s += loss[i];
        return s / 10.0;
    };
    CHECK(ma10(50) < ma10(10));
    for (double l : loss) CHECK(std::isfinite(l));
}

TEST_CASE("checkpoint round-trip: save, load, save bytes match") {
    TempDir dir("dygait_ckpt_rt");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);
    auto st = init_train_state<float>(micro_model(), micro_train(11), 2);
    for (int i = 0; i < 2; ++i) train_step(st, m, cache);

    const auto p1 = (dir.path / "a.dygt").string();
    const auto p2 = (dir.path / "b.dygt").string();
    ckpt::save_checkpoint(st, p1);
    auto loaded = ckpt::load_checkpoint<float>(p1);
    CHECK(states_equal(st, loaded));
    CHECK(loaded.model.stage_channels == st.model.stage_channels);
    CHECK(loaded.model.pool_after == st.model.pool_after);
    CHECK(loaded.cfg.lr == st.cfg.lr);
    CHECK(loaded.cfg.optimizer == st.cfg.optimizer);
    CHECK(loaded.mode == st.mode);

    ckpt::save_checkpoint(loaded, p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corrupt or truncated checkpoints are rejected outright") {
    TempDir dir("dygait_ckpt_bad");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);
    auto st = init_train_state<float>(micro_model(), micro_train(12), 2);
    train_step(st, m, cache);
    const auto good = (dir.path / "good.dygt").string();
    ckpt::save_checkpoint(st, good);
    const std::string bytes = slurp(good);

    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream out(dir.path / name, std::ios::binary);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        return (dir.path / name).string();
    };

    CHECK_THROWS_AS(ckpt::load_checkpoint<float>(write("half", bytes.substr(0, bytes.size() / 2))),
                    CheckpointError);
    CHECK_THROWS_AS(
        ckpt::load_checkpoint<float>(write("clip", bytes.substr(0, bytes.size() - 1))),
        CheckpointError);
    std::string flipped = bytes;
    flipped[flipped.size() / 3] ^= 0x40;
    CHECK_THROWS_AS(ckpt::load_checkpoint<float>(write("flip", flipped)), CheckpointError);
    CHECK_THROWS_AS(ckpt::load_checkpoint<float>(write("junk", "not a checkpoint at all")),
                    CheckpointError);
    CHECK_THROWS_AS(ckpt::load_checkpoint<float>((dir.path / "absent.dygt").string()), IoError);
}

TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
    TempDir dir("dygait_ckpt_resume");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);

    auto straight = init_train_state<float>(micro_model(), micro_train(13), 2);
    for (int i = 0; i < 10; ++i) train_step(straight, m, cache);

    auto first = init_train_state<float>(micro_model(), micro_train(13), 2);
    for (int i = 0; i < 5; ++i) train_step(first, m, cache);
    const auto mid = (dir.path / "mid.dygt").string();
    ckpt::save_checkpoint(first, mid);
    auto resumed = ckpt::load_checkpoint<float>(mid);
    SequenceCache cache2(m, 64, 44);  // fresh cache: contents must not matter
    for (int i = 0; i < 5; ++i) train_step(resumed, m, cache2);

    CHECK(states_equal(straight, resumed));
}

TEST_CASE("adam training also checkpoints and resumes bit-exactly") {
    TempDir dir("dygait_ckpt_adam");
    auto m = micro_dataset(dir.path / "d");
    SequenceCache cache(m, 64, 44);
    auto tc = micro_train(14);
    tc.optimizer = TrainConfig::Opt::adam;
    tc.lr = 1e-3;

    auto straight = init_train_state<float>(micro_model(), tc, 2);
    for (int i = 0; i < 6; ++i) train_step(straight, m, cache);
    CHECK(straight.adam_t == 6);

    auto first = init_train_state<float>(micro_model(), tc, 2);
    for (int i = 0; i < 3; ++i) train_step(first, m, cache);
    const auto mid = (dir.path / "mid.dygt").string();
    ckpt::save_checkpoint(first, mid);
    auto resumed = ckpt::load_checkpoint<float>(mid);
    for (int i = 0; i < 3; ++i) train_step(resumed, m, cache);

    CHECK(states_equal(straight, resumed));
}
