#include "octofold/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"

namespace octofold {
namespace {

using nlohmann::json;

json parse_object(const std::string& text, const char* what) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    return j;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (key == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError(std::string(what) + ": unknown key \"" + key + "\"");
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("key \"") + key + "\": " + e.what());
        }
    }
}

TrainPlan train_plan_from_json(const json& j) {
    reject_unknown(j,
                   {"base_lr", "decay_every", "decay_factor", "batch_size", "max_iterations",
                    "eval_every", "patience", "seed"},
                   "train");
    TrainPlan plan;
    maybe(j, "base_lr", plan.base_lr);
    maybe(j, "decay_every", plan.decay_every);
    maybe(j, "decay_factor", plan.decay_factor);
    maybe(j, "batch_size", plan.batch_size);
    maybe(j, "max_iterations", plan.max_iterations);
    maybe(j, "eval_every", plan.eval_every);
    maybe(j, "patience", plan.patience);
    maybe(j, "seed", plan.seed);
    return plan;
}

json train_plan_to_json(const TrainPlan& plan) {
    json j;
    j["base_lr"] = plan.base_lr;
    j["decay_every"] = plan.decay_every;
    j["decay_factor"] = plan.decay_factor;
    j["batch_size"] = plan.batch_size;
    j["max_iterations"] = plan.max_iterations;
    j["eval_every"] = plan.eval_every;
    j["patience"] = plan.patience;
    j["seed"] = plan.seed;
    return j;
}

DataConfig data_config_from_json(const json& j) {
    reject_unknown(j, {"dir", "train_file", "test_file", "val_fraction", "use_cache", "layout"},
                   "data");
    DataConfig data;
    maybe(j, "dir", data.dir);
    maybe(j, "train_file", data.train_file);
    maybe(j, "test_file", data.test_file);
    maybe(j, "val_fraction", data.val_fraction);
    maybe(j, "use_cache", data.use_cache);
    if (j.contains("layout") && !j.at("layout").is_null()) {
        data.layout = column_layout_from_json_text(j.at("layout").dump());
    }
    return data;
}

json data_config_to_json(const DataConfig& data) {
    json j;
    j["dir"] = data.dir;
    j["train_file"] = data.train_file;
    j["test_file"] = data.test_file;
    j["val_fraction"] = data.val_fraction;
    j["use_cache"] = data.use_cache;
    if (data.layout) j["layout"] = json::parse(to_json_text(*data.layout));
    return j;
}

}  // namespace

void ExperimentConfig::validate() const {
    architecture.validate();
    train.validate();
    if (data.val_fraction <= 0.0 || data.val_fraction >= 1.0) {
        throw ConfigError("val_fraction must be in (0, 1), got " +
                          std::to_string(data.val_fraction));
    }
    if (beam < 1) throw ConfigError("beam must be >= 1, got " + std::to_string(beam));
    if (blend < 0.0 || blend > 1.0) {
        throw ConfigError("blend must be in [0, 1], got " + std::to_string(blend));
    }
}

std::string to_json_text(const ExperimentConfig& cfg) {
    json j;
    j["architecture"] = json::parse(to_json_text(cfg.architecture));
    j["train"] = train_plan_to_json(cfg.train);
    j["data"] = data_config_to_json(cfg.data);
    j["deterministic"] = cfg.deterministic;
    j["beam"] = cfg.beam;
    j["blend"] = cfg.blend;
    return j.dump(2);
}

ExperimentConfig experiment_from_json_text(const std::string& text) {
    const json j = parse_object(text, "experiment config");
    reject_unknown(j, {"architecture", "train", "data", "deterministic", "beam", "blend"},
                   "experiment config");
    ExperimentConfig cfg;
    if (j.contains("architecture")) {
        cfg.architecture = architecture_from_json_text(j.at("architecture").dump());
    }
    if (j.contains("train")) {
        if (!j.at("train").is_object()) throw ConfigError("train: expected a JSON object");
        cfg.train = train_plan_from_json(j.at("train"));
    }
    if (j.contains("data")) {
        if (!j.at("data").is_object()) throw ConfigError("data: expected a JSON object");
        cfg.data = data_config_from_json(j.at("data"));
    }
    maybe(j, "deterministic", cfg.deterministic);
    maybe(j, "beam", cfg.beam);
    maybe(j, "blend", cfg.blend);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open experiment config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return experiment_from_json_text(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string resolve_data_dir(const ExperimentConfig& cfg) {
    const char* env = std::getenv("OCTOFOLD_DATA_DIR");
    if (env != nullptr && *env != '\0') return env;
    return cfg.data.dir;
}

LoadedData load_data(const ExperimentConfig& cfg) {
    const std::string dir = resolve_data_dir(cfg);
    const ColumnLayout layout = cfg.data.layout.value_or(ColumnLayout{});
    layout.validate();

    auto load_side = [&](const std::string& file, const std::string& prefix) {
        const std::string path = dir + "/" + file;
        const std::string cache = path + ".cache";
        if (cfg.data.use_cache && std::filesystem::exists(cache)) {
            return load_records_cache(cache, prefix);
        }
        const NpyArray raw = load_npy(path);
        std::vector<ProteinRecord> records = records_from_raw(raw, layout, prefix);
        if (cfg.data.use_cache) save_records_cache(cache, records);
        return records;
    };

    LoadedData out;
    const std::vector<ProteinRecord> pool = load_side(cfg.data.train_file, "train");
    split_train_val(pool, cfg.train.seed, cfg.data.val_fraction, out.train, out.val);
    if (!cfg.data.test_file.empty()) out.test = load_side(cfg.data.test_file, "test");

    out.stats = compute_norm_stats(out.train, layout);
    apply_norm_stats(out.stats, out.train, layout);
    apply_norm_stats(out.stats, out.val, layout);
    if (!out.test.empty()) apply_norm_stats(out.stats, out.test, layout);
    return out;
}

}  // namespace octofold
