#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dygait/config.hpp"

using namespace dygait;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

struct RunResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "cmd_out.txt";
    const fs::path err = scratch / "cmd_err.txt";
    const std::string cmd =
        std::string(DYGAIT_BIN) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

long count_lines(const std::string& text) {
    long n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

// Small-model flag set shared by the pipeline tests; everything below runs on
// a 4-identity, 12-frame dataset in a couple of seconds.
const std::string kMicro =
    "--set stage_channels=2,3 --set pool_after=0 --set strips=4 --set embed_dim=8 "
    "--set p=2 --set k=2 --set clip_len=9 --set lr=0.05";

void make_data(const TempDir& td, const std::string& extra = "") {
    const auto r =
        run("synth --out " + td.str() + "/data --ids 4 --seqs 4 --frames 12 --seed 5 " + extra,
            td.path);
    REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("config text: comments, overrides, unknown keys") {
    config::RunConfig rc = config::parse_config_text(
        "# model\n"
        "stage_channels = 2, 3\n"
        "\n"
        "lr=0.25\n"
        "ablation=gfe_only\n"
        "strips=4\n",
        "inline");
    CHECK(rc.model.stage_channels == std::vector<int>{2, 3});
    CHECK(rc.train.lr == 0.25);
    CHECK(rc.model.strips == 4);
    CHECK(rc.ablation == model::Ablation::gfe_only);

    config::apply_override(rc, "lr=0.5");
    CHECK(rc.train.lr == 0.5);
    CHECK_THROWS_AS(config::apply_override(rc, "no_such_key=1"), ConfigError);
    CHECK_THROWS_AS(config::apply_override(rc, "lr"), ConfigError);
    CHECK_THROWS_AS(config::apply_override(rc, "lr=abc"), ConfigError);
    CHECK_THROWS_AS(config::parse_config_text("iterations=10x\n", "inline"), ConfigError);
    try {
        config::parse_config_text("lr=0.1\nbogus=3\n", "f.cfg");
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("f.cfg:2") != std::string::npos);
    }
}

TEST_CASE("config: depth override and checkpoint serialization round-trip") {
    config::RunConfig rc;
    rc.model.stage_channels = {8, 16, 32, 64, 128};
    rc.model.pool_after = {0, 1, 3};
    config::apply_blocks(rc, 2);
    CHECK(rc.model.stage_channels == std::vector<int>{8, 16});
    CHECK(rc.model.pool_after == std::vector<int>{0, 1});

    rc.train.lr = 0.015625;
    rc.train.optimizer = train::TrainConfig::Opt::adam;
    rc.ablation = model::Ablation::dfe_only;
    const std::string blob = config::serialize_for_checkpoint(rc);
    config::RunConfig back = config::parse_config_text(blob, "blob");
    CHECK(config::serialize_for_checkpoint(back) == blob);
    CHECK(back.train.optimizer == train::TrainConfig::Opt::adam);
    CHECK(back.model.pool_after == rc.model.pool_after);
}

TEST_CASE("cli synth: layout, determinism, rejects bad flags") {
    TempDir td("dygait_cli_synth");
    make_data(td);
    const std::string manifest = slurp(td.path / "data/manifest.csv");
    CHECK(count_lines(manifest) == 17);  // header + 4*4 records
    CHECK(fs::exists(td.path / "data/specs.csv"));

    const auto again =
        run("synth --out " + td.str() + "/data2 --ids 4 --seqs 4 --frames 12 --seed 5", td.path);
    CHECK(again.code == 0);
    CHECK(slurp(td.path / "data2/manifest.csv") == manifest);
    CHECK(slurp(td.path / "data2/s000/NM-00/090/0003.pgm") ==
          slurp(td.path / "data/s000/NM-00/090/0003.pgm"));

    CHECK(run("synth --out " + td.str() + "/bad --ids 1", td.path).code == 2);
    CHECK(run("synth --out " + td.str() + "/bad --policy sideways", td.path).code == 2);
    CHECK(run("synth", td.path).code == 2);  // missing --out
}

TEST_CASE("cli prep: re-normalizing a rendered tree preserves counts") {
    TempDir td("dygait_cli_prep");
    make_data(td);
    const auto r = run("prep --in " + td.str() + "/data --out " + td.str() + "/prepped", td.path);
    CHECK(r.code == 0);
    const std::string manifest = slurp(td.path / "prepped/manifest.csv");
    CHECK(count_lines(manifest) == 17);
    // generator partitions per subject in the same proportions
    CHECK(manifest.find(",train") != std::string::npos);
    CHECK(manifest.find(",gallery") != std::string::npos);
    CHECK(manifest.find(",probe") != std::string::npos);
    CHECK(fs::exists(td.path / "prepped/s000/NM-00/090/0000.pgm"));
    CHECK(run("prep --in " + td.str() + "/nowhere --out " + td.str() + "/x", td.path).code == 3);
}

TEST_CASE("cli train: log rows, checkpoints, ablation changes the result") {
    TempDir td("dygait_cli_train");
    make_data(td);
    const std::string base = "train --data " + td.str() + "/data " + kMicro + " --seed 3 ";
    const auto r = run(base + "--out " + td.str() + "/run --iters 4 --set checkpoint_every=2",
                       td.path);
    CHECK(r.code == 0);
    CHECK(r.out.find("final checkpoint:") != std::string::npos);
    CHECK(count_lines(slurp(td.path / "run/train_log.csv")) == 4);
    CHECK(fs::exists(td.path / "run/ckpt_000002.dygt"));
    CHECK(fs::exists(td.path / "run/final.dygt"));

    const auto gfe = run(base + "--out " + td.str() + "/run_gfe --iters 4 --ablation gfe_only",
                         td.path);
    CHECK(gfe.code == 0);
    CHECK(slurp(td.path / "run_gfe/final.dygt") != slurp(td.path / "run/final.dygt"));
}

TEST_CASE("cli train: resume reproduces the uninterrupted run bit-exactly") {
    TempDir td("dygait_cli_resume");
    make_data(td);
    const std::string base = "train --data " + td.str() + "/data " + kMicro + " --seed 9 ";
    CHECK(run(base + "--out " + td.str() + "/full --iters 6", td.path).code == 0);
    CHECK(run(base + "--out " + td.str() + "/half --iters 3", td.path).code == 0);
    const auto resumed = run("train --resume " + td.str() + "/half/final.dygt --data " + td.str() +
                                 "/data --out " + td.str() + "/half --iters 6",
                             td.path);
    CHECK(resumed.code == 0);
    const std::string full = slurp(td.path / "full/final.dygt");
    CHECK(!full.empty());
    CHECK(slurp(td.path / "half/final.dygt") == full);
}

TEST_CASE("cli train: divergence exits 4 and keeps the last checkpoint") {
    TempDir td("dygait_cli_diverge");
    make_data(td);
    const auto r = run("train --data " + td.str() + "/data " + kMicro + " --out " + td.str() +
                           "/run --iters 50 --set lr=1000000000 --set checkpoint_every=1",
                       td.path);
    CHECK(r.code == 4);
    CHECK(r.err.find("non-finite loss") != std::string::npos);
    CHECK(fs::exists(td.path / "run/ckpt_000001.dygt"));
    CHECK(!fs::exists(td.path / "run/final.dygt"));
}

TEST_CASE("cli eval: reports, self-match, protocol edge cases") {
    TempDir td("dygait_cli_eval");
    make_data(td);
    const std::string train_cmd = "train --data " + td.str() + "/data " + kMicro + " --seed 3 ";
    REQUIRE(run(train_cmd + "--out " + td.str() + "/run --iters 2", td.path).code == 0);
    const std::string ckpt = td.str() + "/run/final.dygt";

    const auto r = run("eval --data " + td.str() + "/data --ckpt " + ckpt + " --out " + td.str() +
                           "/report",
                       td.path);
    CHECK(r.code == 0);
    const std::string metrics = slurp(td.path / "report/metrics.csv");
    for (const char* key : {"rank_1,", "rank_5,", "rank_10,", "rank_20,", "mAP,", "mINP,"})
        CHECK(metrics.find(key) != std::string::npos);

    const auto self = run("eval --data " + td.str() + "/data --ckpt " + ckpt +
                              " --probe-partition gallery --out " + td.str() + "/self",
                          td.path);
    CHECK(self.code == 0);
    CHECK(slurp(td.path / "self/metrics.csv").find("rank_1,1\n") != std::string::npos);

    const auto cross = run("eval --data " + td.str() + "/data --ckpt " + ckpt +
                               " --protocol cross_view --out " + td.str() + "/cross",
                           td.path);
    CHECK(cross.code == 0);  // single-view data: marker, not an error
    CHECK(cross.out.find("no valid pairs") != std::string::npos);

    CHECK(run("eval --data " + td.str() + "/data --ckpt " + ckpt +
                  " --gallery-partition nonexistent --out " + td.str() + "/empty",
              td.path)
              .code == 5);
    CHECK(run("eval --data " + td.str() + "/data --ckpt " + td.str() + "/missing.dygt --out " +
                  td.str() + "/x",
              td.path)
              .code == 3);
}

TEST_CASE("cli heatmap: one map per frame, region means, block bounds") {
    TempDir td("dygait_cli_heat");
    make_data(td);
    REQUIRE(run("train --data " + td.str() + "/data " + kMicro + " --seed 3 --out " + td.str() +
                    "/run --iters 2",
                td.path)
                .code == 0);
    const std::string ckpt = td.str() + "/run/final.dygt";
    const std::string seq = td.str() + "/data/s000/NM-00/090";

    const auto r = run("heatmap --ckpt " + ckpt + " --seq " + seq + " --out " + td.str() + "/heat",
                       td.path);
    CHECK(r.code == 0);
    long n_maps = 0;
    for (const auto& e : fs::directory_iterator(td.path / "heat")) {
        (void)e;
        ++n_maps;
    }
    CHECK(n_maps == 12);

    const auto reg = run("heatmap --ckpt " + ckpt + " --seq " + seq + " --out " + td.str() +
                             "/heat2 --regions " + td.str() + "/data/regions/s000/NM-00/090",
                         td.path);
    CHECK(reg.code == 0);
    CHECK(reg.out.find("heat_legs=") != std::string::npos);
    CHECK(reg.out.find("heat_bag=") != std::string::npos);

    CHECK(run("heatmap --ckpt " + ckpt + " --seq " + seq + " --out " + td.str() +
                  "/heat3 --block 99",
              td.path)
              .code == 2);
}

TEST_CASE("cli gradcheck: clean pass, sabotage hook fails naming the op") {
    TempDir td("dygait_cli_grad");
    const auto ok = run("gradcheck", td.path);
    CHECK(ok.code == 0);
    CHECK(ok.out.find("network_loss") != std::string::npos);
    CHECK(ok.out.find("max_rel=") != std::string::npos);

    const auto bad = run("gradcheck --perturb conv3d", td.path);
    CHECK(bad.code == 1);
    CHECK(bad.out.find("FAIL conv3d") != std::string::npos);
}

TEST_CASE("cli dump-embeddings: header plus one row per sequence") {
    TempDir td("dygait_cli_dump");
    make_data(td);
    REQUIRE(run("train --data " + td.str() + "/data " + kMicro + " --seed 3 --out " + td.str() +
                    "/run --iters 2",
                td.path)
                .code == 0);
    const auto r = run("dump-embeddings --data " + td.str() + "/data --ckpt " + td.str() +
                           "/run/final.dygt --partition probe --out " + td.str() + "/emb.csv",
                       td.path);
    CHECK(r.code == 0);
    CHECK(count_lines(slurp(td.path / "emb.csv")) == 5);  // header + 4 probe sequences
}
