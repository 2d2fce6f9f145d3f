// Command-line shell: fetch, inspect, train, eval, decode, gradcheck.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fetch.hpp"
#include "octofold/checkpoint.hpp"
#include "octofold/data.hpp"
#include "octofold/decode.hpp"
#include "octofold/errors.hpp"
#include "octofold/experiment.hpp"
#include "octofold/gradcheck.hpp"
#include "octofold/netgraph.hpp"
#include "octofold/optim.hpp"
#include "octofold/parallel.hpp"

namespace {

using namespace octofold;

struct ToyOptions {
    std::string rule;  // empty = real data
    int n = 64;
    int length = 100;
};

ToyRule parse_toy_rule(const std::string& name) {
    if (name == "local-window") return ToyRule::kLocalWindow;
    if (name == "copy-prone") return ToyRule::kCopyProne;
    throw ConfigError("unknown toy rule \"" + name + "\" (use local-window or copy-prone)");
}

std::vector<ProteinRecord> make_toy(const ToyOptions& toy, std::uint64_t seed) {
    return synth_toy_dataset(seed, toy.n, toy.length, parse_toy_rule(toy.rule));
}

void add_toy_options(CLI::App* cmd, ToyOptions& toy) {
    cmd->add_option("--toy", toy.rule, "synthetic corpus rule (local-window | copy-prone)");
    cmd->add_option("--toy-n", toy.n, "synthetic corpus size")->check(CLI::PositiveNumber);
    cmd->add_option("--toy-len", toy.length, "synthetic grid length")->check(CLI::PositiveNumber);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFileError("cannot write: " + path);
    out << text;
}

void print_record_summary(const std::vector<ProteinRecord>& records) {
    if (records.empty()) {
        std::cout << "0 records\n";
        return;
    }
    std::int64_t residues = 0;
    int min_len = records[0].length, max_len = records[0].length;
    std::vector<std::int64_t> label_hist(16, 0);
    for (const auto& rec : records) {
        residues += rec.length;
        min_len = std::min(min_len, rec.length);
        max_len = std::max(max_len, rec.length);
        for (std::int64_t t = 0; t < rec.grid(); ++t) {
            if (rec.mask.at(t) != 0.0f && rec.labels[static_cast<std::size_t>(t)] >= 0 &&
                rec.labels[static_cast<std::size_t>(t)] < 16) {
                ++label_hist[static_cast<std::size_t>(rec.labels[static_cast<std::size_t>(t)])];
            }
        }
    }
    std::cout << "records:    " << records.size() << "\n"
              << "grid:       " << records[0].grid() << "\n"
              << "depth:      " << records[0].depth() << "\n"
              << "lengths:    " << min_len << " .. " << max_len << " (mean "
              << static_cast<double>(residues) / static_cast<double>(records.size()) << ")\n"
              << "residues:   " << residues << "\n"
              << "normalized: " << (records[0].normalized ? "yes" : "no") << "\n"
              << "labels:";
    for (std::size_t c = 0; c < label_hist.size(); ++c) {
        if (label_hist[c] > 0) std::cout << "  " << c << ":" << label_hist[c];
    }
    std::cout << "\n";
}

void print_checkpoint_summary(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    std::cout << "checkpoint:   " << path << "\n"
              << "iteration:    " << ckpt.iteration << "\n"
              << "val_q8:       " << ckpt.val_q8 << "\n"
              << "norm stats:   " << (ckpt.norm_stats ? "embedded" : "none") << "\n"
              << "conditioned:  " << (ckpt.model.config.conditioned ? "yes" : "no") << "\n"
              << "parameters:   " << param_count(ckpt.model) << "\n"
              << "architecture: " << to_json_text(ckpt.model.config) << "\n"
              << "tensors:\n";
    for (const auto& [name, value] : ckpt.model.params) {
        std::cout << "  " << name << " " << value.shape_str() << "\n";
    }
    for (const auto& [name, value] : ckpt.model.state) {
        std::cout << "  " << name << " " << value.shape_str() << " (state)\n";
    }
}

int cmd_inspect(const std::string& path) {
    if (!std::filesystem::exists(path)) throw MissingFileError("no such file: " + path);

    if (path.size() > 6 && path.substr(path.size() - 6) == ".cache") {
        print_record_summary(load_records_cache(path, "cache"));
        return 0;
    }

    std::ifstream probe(path, std::ios::binary);
    char head[4] = {0, 0, 0, 0};
    probe.read(head, 4);
    probe.close();

    if (std::string(head, 4) == "OCF1") {
        print_checkpoint_summary(path);
        return 0;
    }
    const bool npy = (static_cast<unsigned char>(head[0]) == 0x93 && head[1] == 'N');
    const bool gz = (static_cast<unsigned char>(head[0]) == 0x1f &&
                     static_cast<unsigned char>(head[1]) == 0x8b);
    if (npy || gz) {
        print_record_summary(records_from_raw(load_npy(path), ColumnLayout{}, "data"));
        return 0;
    }

    // Fall back to config files: echo the normalized form.
    const ExperimentConfig cfg = load_experiment_file(path);
    std::cout << to_json_text(cfg) << "\n";
    return 0;
}

/// Loads a real-data split, normalizing with the checkpoint's statistics
/// when present (so evaluation matches training-time preprocessing) and
/// with freshly estimated training statistics otherwise.
std::vector<ProteinRecord> load_eval_split(const ExperimentConfig& cfg, const std::string& split,
                                           const std::optional<NormStats>& ckpt_stats) {
    const std::string dir = resolve_data_dir(cfg);
    const ColumnLayout layout = cfg.data.layout.value_or(ColumnLayout{});
    auto parse = [&](const std::string& file, const char* prefix) {
        return records_from_raw(load_npy(dir + "/" + file), layout, prefix);
    };

    std::vector<ProteinRecord> train, val, out;
    NormStats stats;
    if (ckpt_stats) stats = *ckpt_stats;

    if (split == "test") {
        if (cfg.data.test_file.empty()) throw ConfigError("config has no test_file");
        out = parse(cfg.data.test_file, "test");
        if (!ckpt_stats) {
            const auto pool = parse(cfg.data.train_file, "train");
            split_train_val(pool, cfg.train.seed, cfg.data.val_fraction, train, val);
            stats = compute_norm_stats(train, layout);
        }
    } else if (split == "train" || split == "val") {
        const auto pool = parse(cfg.data.train_file, "train");
        split_train_val(pool, cfg.train.seed, cfg.data.val_fraction, train, val);
        if (!ckpt_stats) stats = compute_norm_stats(train, layout);
        out = (split == "train") ? std::move(train) : std::move(val);
    } else {
        throw ConfigError("unknown split \"" + split + "\" (train | val | test)");
    }
    apply_norm_stats(stats, out, layout);
    return out;
}

struct TrainArgs {
    std::string config;
    std::string out_dir = "runs/exp";
    ToyOptions toy;
    std::int64_t seed = -1;
    bool deterministic = false;
};

int cmd_train(const TrainArgs& args) {
    ExperimentConfig cfg = load_experiment_file(args.config);
    if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    if (args.deterministic) {
        cfg.deterministic = true;
        set_worker_threads(1);
    }
    cfg.validate();
    std::filesystem::create_directories(args.out_dir);

    std::vector<ProteinRecord> train, val;
    std::optional<NormStats> stats;
    if (!args.toy.rule.empty()) {
        const auto records = make_toy(args.toy, cfg.train.seed);
        split_train_val(records, cfg.train.seed, cfg.data.val_fraction, train, val);
    } else {
        LoadedData data = load_data(cfg);
        train = std::move(data.train);
        val = std::move(data.val);
        stats = data.stats;
    }
    std::cerr << "train records: " << train.size() << ", val records: " << val.size() << "\n";

    RngStream init_rng = RngStream(cfg.train.seed).fork(0);
    ModelGraph model = build_model(cfg.architecture, init_rng);
    std::cerr << "parameters: " << param_count(model) << "\n";

    const std::string ckpt_path = args.out_dir + "/checkpoint.ocf";
    const std::string csv_path = args.out_dir + "/train_log.csv";
    TrainHooks hooks;
    hooks.on_eval = [](std::int64_t iter, double lr, double loss, double metric) {
        std::fprintf(stderr, "iter %lld  lr %.6g  loss %.6f  val %.4f\n",
                     static_cast<long long>(iter), lr, loss, metric);
    };
    hooks.on_improved = [&](const ModelGraph& snapshot, std::int64_t iter, double metric) {
        save_checkpoint(ckpt_path, snapshot, stats, iter, metric);
    };

    const TrainResult result = train_loop(model, train, val, cfg.train, csv_path, hooks);
    save_checkpoint(ckpt_path, model, stats, result.best_iteration, result.best_val_metric);
    std::cout << "best val metric " << result.best_val_metric << " at iteration "
              << result.best_iteration << (result.stopped_early ? " (early stop)" : "") << "\n"
              << "checkpoint: " << ckpt_path << "\n"
              << "log: " << csv_path << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string config;
    std::string split = "val";
    std::string out;
    ToyOptions toy;
    std::int64_t seed = -1;
    int beam = 8;
};

int cmd_eval(const EvalArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 0;

    std::vector<ProteinRecord> records;
    if (!args.toy.rule.empty()) {
        records = make_toy(args.toy, seed);
    } else {
        if (args.config.empty()) throw ConfigError("eval needs --config or --toy");
        records = load_eval_split(load_experiment_file(args.config), args.split, ckpt.norm_stats);
    }

    EvalReport report;
    if (ckpt.model.config.conditioned) {
        std::vector<std::vector<int>> preds;
        preds.reserve(records.size());
        for (const auto& rec : records) preds.push_back(beam_search(ckpt.model, rec, args.beam));
        report = pool_report(preds, records);
        std::cerr << "teacher-forced accuracy: " << teacher_forced_accuracy(ckpt.model, records)
                  << "\n";
    } else {
        report = evaluate_greedy(ckpt.model, records);
    }
    std::cerr << "q8: " << report.q8 << " over " << report.residues << " residues\n";
    write_text(args.out, to_json_text(report) + "\n");
    return 0;
}

struct DecodeArgs {
    std::string checkpoint;
    std::string cond_checkpoint;
    std::string input;
    std::string out;
    ToyOptions toy;
    std::int64_t seed = -1;
    int beam = 8;
    double blend = 0.45;
};

int cmd_decode(const DecodeArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    std::optional<Checkpoint> cond;
    if (!args.cond_checkpoint.empty()) {
        cond = load_checkpoint(args.cond_checkpoint);
        if (!cond->model.config.conditioned) {
            throw ConfigError("second checkpoint must be a conditioned model");
        }
        if (ckpt.model.config.conditioned) {
            throw ConfigError("first checkpoint must be unconditional when blending");
        }
    }

    std::vector<ProteinRecord> records;
    if (!args.toy.rule.empty()) {
        records = make_toy(args.toy, args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 0);
    } else {
        if (args.input.empty()) throw ConfigError("decode needs --input or --toy");
        if (args.input.size() > 6 && args.input.substr(args.input.size() - 6) == ".cache") {
            records = load_records_cache(args.input, "in");
        } else {
            records = records_from_raw(load_npy(args.input), ColumnLayout{}, "in");
        }
        if (ckpt.norm_stats && !records.empty() && !records[0].normalized) {
            apply_norm_stats(*ckpt.norm_stats, records);
        }
    }

    std::ostringstream out;
    for (const auto& rec : records) {
        std::vector<int> labels;
        if (cond) {
            labels = ensemble_beam_search(ckpt.model, cond->model, rec, args.beam, args.blend);
        } else if (ckpt.model.config.conditioned) {
            labels = beam_search(ckpt.model, rec, args.beam);
        } else {
            labels = greedy_decode(ckpt.model, rec);
        }
        out << rec.id << '\t';
        for (std::int64_t t = 0; t < rec.grid(); ++t) {
            if (rec.mask.at(t) != 0.0f) out << static_cast<char>('0' + labels[static_cast<std::size_t>(t)]);
        }
        out << '\n';
    }
    write_text(args.out, out.str());
    return 0;
}

int cmd_gradcheck(int seeds, std::int64_t base_seed) {
    struct Row {
        double max_err = 0.0;
        double epsilon = 0.0;
        double tolerance = 0.0;
        bool passed = true;
    };
    std::vector<std::string> order;
    std::map<std::string, Row> rows;

    const std::uint64_t base = base_seed >= 0 ? static_cast<std::uint64_t>(base_seed) : 1;
    for (int s = 0; s < seeds; ++s) {
        for (const auto& c : standard_grad_checks(base + static_cast<std::uint64_t>(s))) {
            if (!rows.count(c.name)) order.push_back(c.name);
            Row& row = rows[c.name];
            row.max_err = std::max(row.max_err, c.report.max_rel_err);
            row.epsilon = c.epsilon;
            row.tolerance = c.tolerance;
            row.passed = row.passed && c.passed;
        }
    }

    bool all = true;
    std::printf("%-22s %12s %10s %10s  %s\n", "op", "max rel err", "step", "tolerance",
                "verdict");
    for (const auto& name : order) {
        const Row& row = rows[name];
        all = all && row.passed;
        std::printf("%-22s %12.3e %10.0e %10.0e  %s\n", name.c_str(), row.max_err, row.epsilon,
                    row.tolerance, row.passed ? "pass" : "FAIL");
    }
    std::printf("%d seed(s): %s\n", seeds, all ? "all gradients verified" : "FAILURES above");
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eight-class protein secondary structure engine"};
    app.require_subcommand(1);

    auto* fetch_cmd = app.add_subcommand("fetch", "download and verify the dataset");
    std::string manifest_path = "data/manifest.json";
    std::string data_dir;
    fetch_cmd->add_option("--manifest", manifest_path, "checksum manifest path");
    fetch_cmd->add_option("--data-dir", data_dir, "destination directory");

    auto* inspect_cmd = app.add_subcommand("inspect", "summarize a checkpoint, dataset or config");
    std::string inspect_path;
    inspect_cmd->add_option("path", inspect_path, "file to inspect")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model from an experiment config");
    TrainArgs train_args;
    train_cmd->add_option("--config", train_args.config, "experiment config JSON")->required();
    train_cmd->add_option("--out", train_args.out_dir, "output directory");
    train_cmd->add_option("--seed", train_args.seed, "override the config seed");
    train_cmd->add_flag("--deterministic", train_args.deterministic,
                        "pin to one worker thread (runs are seed-reproducible regardless)");
    add_toy_options(train_cmd, train_args.toy);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    EvalArgs eval_args;
    eval_cmd->add_option("checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--config", eval_args.config, "experiment config JSON (for data paths)");
    eval_cmd->add_option("--split", eval_args.split, "train | val | test");
    eval_cmd->add_option("--beam", eval_args.beam, "beam width for conditioned models");
    eval_cmd->add_option("--seed", eval_args.seed, "synthetic corpus seed");
    eval_cmd->add_option("--out", eval_args.out, "write the JSON report here instead of stdout");
    add_toy_options(eval_cmd, eval_args.toy);

    auto* decode_cmd = app.add_subcommand("decode", "decode sequences to label strings");
    DecodeArgs decode_args;
    decode_cmd->add_option("checkpoint", decode_args.checkpoint, "unconditional (or conditioned) checkpoint")
        ->required();
    decode_cmd->add_option("cond_checkpoint", decode_args.cond_checkpoint,
                           "conditioned checkpoint for the blended beam");
    decode_cmd->add_option("--input", decode_args.input, "raw array or .cache records");
    decode_cmd->add_option("--beam", decode_args.beam, "beam width");
    decode_cmd->add_option("--blend", decode_args.blend,
                           "conditional weight lambda in [0,1] for the blended beam");
    decode_cmd->add_option("--seed", decode_args.seed, "synthetic corpus seed");
    decode_cmd->add_option("--out", decode_args.out, "output file (default stdout)");
    add_toy_options(decode_cmd, decode_args.toy);

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    int gc_seeds = 5;
    std::int64_t gc_seed = 1;
    gradcheck_cmd->add_option("--seeds", gc_seeds, "number of seeds")->check(CLI::PositiveNumber);
    gradcheck_cmd->add_option("--seed", gc_seed, "first seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*fetch_cmd) {
            if (data_dir.empty()) {
                const char* env = std::getenv("OCTOFOLD_DATA_DIR");
                if (env != nullptr && *env != '\0') {
                    data_dir = env;
                } else {
                    const auto parent = std::filesystem::path(manifest_path).parent_path();
                    data_dir = parent.empty() ? "." : parent.string();
                }
            }
            run_fetch(manifest_path, data_dir);
            return 0;
        }
        if (*inspect_cmd) return cmd_inspect(inspect_path);
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*decode_cmd) return cmd_decode(decode_args);
        if (*gradcheck_cmd) return cmd_gradcheck(gc_seeds, gc_seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
