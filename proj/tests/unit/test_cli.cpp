// End-to-end runs of the command-line tool: training artifacts, evaluation
// reports, decoding, gradient audit, fetch verification, and exit codes.
// The binary path arrives through the OCTOFOLD_CLI compile definition.
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common/tiny_models.hpp"
#include "octofold/checkpoint.hpp"
#include "octofold/data.hpp"
#include "octofold/experiment.hpp"
#include "octofold/netgraph.hpp"
#include "octofold/rng.hpp"

using namespace octofold;
using octofold::testing::tiny_arch;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + OCTOFOLD_CLI + "\" " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

// Scratch tree with two trained toy checkpoints, built once on first use.
struct Workspace {
    fs::path root;
    fs::path uncond_config, cond_config;
    fs::path uncond_ckpt, cond_ckpt, untrained_ckpt;

    Workspace() {
        root = fs::temp_directory_path() / "octofold_cli_ws";
        fs::remove_all(root);
        fs::create_directories(root);

        ExperimentConfig cfg;
        cfg.architecture = tiny_arch(false);
        cfg.train.base_lr = 2e-3;
        cfg.train.batch_size = 8;
        cfg.train.max_iterations = 240;
        cfg.train.eval_every = 60;
        cfg.train.patience = 50;
        cfg.train.seed = 11;
        cfg.data.val_fraction = 0.25;
        uncond_config = root / "toy_uncond.json";
        spit(uncond_config, to_json_text(cfg));

        cfg.architecture = tiny_arch(true);
        cfg.train.max_iterations = 80;
        cond_config = root / "toy_cond.json";
        spit(cond_config, to_json_text(cfg));

        const std::string toy_u = " --toy local-window --toy-n 16 --toy-len 32";
        const std::string toy_c = " --toy copy-prone --toy-n 16 --toy-len 32";
        if (run("train --config " + uncond_config.string() + " --out " +
                (root / "run_u").string() + " --deterministic" + toy_u) != 0)
            throw std::runtime_error("workspace: unconditional training failed");
        if (run("train --config " + cond_config.string() + " --out " +
                (root / "run_c").string() + " --deterministic" + toy_c) != 0)
            throw std::runtime_error("workspace: conditional training failed");
        uncond_ckpt = root / "run_u" / "checkpoint.ocf";
        cond_ckpt = root / "run_c" / "checkpoint.ocf";

        RngStream rng(1234);
        ModelGraph model = build_model(tiny_arch(false), rng);
        untrained_ckpt = root / "untrained.ocf";
        save_checkpoint(untrained_ckpt.string(), model, std::nullopt, 0, 0.0);
    }
};

const Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("training produces a checkpoint and an evaluation log") {
    REQUIRE(fs::exists(ws().uncond_ckpt));
    REQUIRE(fs::exists(ws().cond_ckpt));
    const std::string log = slurp(ws().root / "run_u" / "train_log.csv");
    CHECK(log.rfind("iter,lr,train_loss,val_q8\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 5);  // header + evals at 60/120/180/240
}

TEST_CASE("identical seeds reproduce training byte-for-byte") {
    const fs::path again = ws().root / "run_u_again";
    REQUIRE(run("train --config " + ws().uncond_config.string() + " --out " + again.string() +
                " --deterministic --toy local-window --toy-n 16 --toy-len 32") == 0);
    CHECK(slurp(again / "checkpoint.ocf") == slurp(ws().uncond_ckpt));
    CHECK(slurp(again / "train_log.csv") == slurp(ws().root / "run_u" / "train_log.csv"));

    const fs::path other = ws().root / "run_u_seed9";
    REQUIRE(run("train --config " + ws().uncond_config.string() + " --out " + other.string() +
                " --deterministic --seed 9 --toy local-window --toy-n 16 --toy-len 32") == 0);
    CHECK(slurp(other / "checkpoint.ocf") != slurp(ws().uncond_ckpt));
}

TEST_CASE("an untrained model scores far below a trained one") {
    const fs::path report = ws().root / "untrained_report.json";
    REQUIRE(run("eval " + ws().untrained_ckpt.string() +
                " --toy local-window --toy-n 24 --toy-len 64 --seed 3 --out " +
                report.string()) == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(report));
    // Random weights land near the skewed label marginal, not at 1/8.
    const double q8 = j.at("q8").get<double>();
    CHECK(q8 > 0.02);
    CHECK(q8 < 0.40);
    CHECK(j.at("residues").get<std::int64_t>() > 1000);
}

TEST_CASE("a trained model beats chance on its task") {
    const fs::path report = ws().root / "trained_report.json";
    REQUIRE(run("eval " + ws().uncond_ckpt.string() +
                " --toy local-window --toy-n 16 --toy-len 32 --seed 11 --out " +
                report.string()) == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("q8").get<double>() > 0.3);
}

TEST_CASE("conditioned checkpoints evaluate with the beam decoder") {
    const fs::path report = ws().root / "cond_report.json";
    REQUIRE(run("eval " + ws().cond_ckpt.string() +
                " --toy copy-prone --toy-n 8 --toy-len 32 --seed 2 --beam 4 --out " +
                report.string()) == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("q8").get<double>() >= 0.0);
}

TEST_CASE("decode emits one id-tab-labels line per record") {
    const fs::path out = ws().root / "decode_u.txt";
    REQUIRE(run("decode " + ws().uncond_ckpt.string() +
                " --toy local-window --toy-n 16 --toy-len 32 --seed 5 --out " +
                out.string()) == 0);

    const auto records = synth_toy_dataset(5, 16, 32, ToyRule::kLocalWindow);
    std::istringstream lines(slurp(out));
    std::string line;
    std::size_t i = 0;
    while (std::getline(lines, line)) {
        REQUIRE(i < records.size());
        const std::size_t tab = line.find('\t');
        REQUIRE(tab != std::string::npos);
        CHECK(line.substr(0, tab) == records[i].id);
        const std::string labels = line.substr(tab + 1);
        CHECK(labels.size() == static_cast<std::size_t>(records[i].length));
        for (char c : labels) {
            CHECK(c >= '0');
            CHECK(c <= '7');
        }
        ++i;
    }
    CHECK(i == records.size());
}

TEST_CASE("a zero-blend ensemble reproduces the unconditional decode") {
    const fs::path greedy_out = ws().root / "blend_greedy.txt";
    const fs::path ens_out = ws().root / "blend_zero.txt";
    const std::string toy = " --toy copy-prone --toy-n 8 --toy-len 32 --seed 6";
    REQUIRE(run("decode " + ws().uncond_ckpt.string() + toy + " --out " +
                greedy_out.string()) == 0);
    REQUIRE(run("decode " + ws().uncond_ckpt.string() + " " + ws().cond_ckpt.string() + toy +
                " --beam 4 --blend 0.0 --out " + ens_out.string()) == 0);
    CHECK(slurp(ens_out) == slurp(greedy_out));

    const fs::path full_out = ws().root / "blend_one.txt";
    REQUIRE(run("decode " + ws().uncond_ckpt.string() + " " + ws().cond_ckpt.string() + toy +
                " --beam 4 --blend 1.0 --out " + full_out.string()) == 0);
    const fs::path beam_out = ws().root / "beam_only.txt";
    REQUIRE(run("decode " + ws().cond_ckpt.string() + toy + " --beam 4 --out " +
                beam_out.string()) == 0);
    CHECK(slurp(full_out) == slurp(beam_out));
}

TEST_CASE("blending rejects checkpoints in the wrong roles") {
    CHECK(run("decode " + ws().cond_ckpt.string() + " " + ws().cond_ckpt.string() +
              " --toy copy-prone --toy-n 2 --toy-len 32") == 2);
    CHECK(run("decode " + ws().uncond_ckpt.string() + " " + ws().uncond_ckpt.string() +
              " --toy copy-prone --toy-n 2 --toy-len 32") == 2);
}

TEST_CASE("gradient audit passes from the command line") {
    CHECK(run("gradcheck --seeds 1") == 0);
}

TEST_CASE("inspect understands checkpoints, caches, and configs") {
    CHECK(run("inspect " + ws().uncond_ckpt.string()) == 0);
    CHECK(run("inspect " + ws().uncond_config.string()) == 0);

    const fs::path cache = ws().root / "records.cache";
    save_records_cache(cache.string(), synth_toy_dataset(1, 4, 16, ToyRule::kLocalWindow));
    CHECK(run("inspect " + cache.string()) == 0);

    CHECK(run("inspect " + (ws().root / "missing.ocf").string()) == 3);
    const fs::path junk = ws().root / "junk.txt";
    spit(junk, "hello world");
    CHECK(run("inspect " + junk.string()) == 2);
}

TEST_CASE("exit codes distinguish the failure taxonomy") {
    // 2: configuration and usage errors.
    CHECK(run("") == 2);
    CHECK(run("train --config " + ws().uncond_config.string() + " --bogus-flag") == 2);
    const fs::path bad_cfg = ws().root / "bad_config.json";
    spit(bad_cfg, "{\"architecture\": {\"fc_windw\": 11}}");
    CHECK(run("train --config " + bad_cfg.string() + " --toy local-window") == 2);
    CHECK(run("eval " + ws().untrained_ckpt.string() + " --config " +
              ws().uncond_config.string() + " --split bogus") == 2);

    // 3: missing inputs.
    CHECK(run("train --config " + (ws().root / "nope.json").string() +
              " --toy local-window") == 3);
    CHECK(run("eval " + (ws().root / "nope.ocf").string() + " --toy local-window") == 3);
    CHECK(run("decode " + ws().uncond_ckpt.string() + " --input " +
              (ws().root / "nope.npy").string()) == 3);

    // 4: malformed on-disk data.
    const fs::path corrupt = ws().root / "corrupt.ocf";
    std::string bytes = slurp(ws().untrained_ckpt);
    bytes[0] = 'X';
    spit(corrupt, bytes);
    CHECK(run("eval " + corrupt.string() + " --toy local-window") == 4);
}

TEST_CASE("fetch verifies pinned checksums and reports download failures") {
    const fs::path dir = ws().root / "fetch";
    fs::create_directories(dir);
    const std::string dead_url = "http://127.0.0.1:9/blob.bin";
    // sha256 of the 3 bytes "abc".
    const std::string abc_sha =
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";

    auto manifest = [&](const std::string& file, const std::string& sha) {
        nlohmann::json j{{"source", "unit test"},
                         {"files", {{{"file", file}, {"url", dead_url}}}}};
        if (sha.empty())
            j["files"][0]["sha256"] = nullptr;
        else
            j["files"][0]["sha256"] = sha;
        const fs::path path = dir / (file + ".manifest.json");
        spit(path, j.dump(2));
        return path.string();
    };

    spit(dir / "good.bin", "abc");
    CHECK(run("fetch --manifest " + manifest("good.bin", abc_sha) + " --data-dir " +
              dir.string()) == 0);

    spit(dir / "stale.bin", "abd");
    CHECK(run("fetch --manifest " + manifest("stale.bin", abc_sha) + " --data-dir " +
              dir.string()) == 5);
    CHECK(fs::exists(dir / "stale.bin"));  // stale files are kept for the user

    spit(dir / "unpinned.bin", "anything");
    CHECK(run("fetch --manifest " + manifest("unpinned.bin", "") + " --data-dir " +
              dir.string()) == 0);

    CHECK(run("fetch --manifest " + manifest("absent.bin", abc_sha) + " --data-dir " +
              dir.string()) == 7);
    CHECK_FALSE(fs::exists(dir / "absent.bin"));

    CHECK(run("fetch --manifest " + (dir / "missing_manifest.json").string()) == 3);
    const fs::path bad_manifest = dir / "bad_manifest.json";
    spit(bad_manifest, "{\"files\": []}");
    CHECK(run("fetch --manifest " + bad_manifest.string() + " --data-dir " + dir.string()) == 4);
}
