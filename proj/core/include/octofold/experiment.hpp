// Experiment configuration: architecture, training plan, data locations
// and decode settings in one JSON document, plus the load-and-prepare
// pipeline (parse, optional cache, split, normalize).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "octofold/data.hpp"
#include "octofold/netgraph.hpp"
#include "octofold/optim.hpp"

namespace octofold {

struct DataConfig {
    std::string dir = "data";
    std::string train_file = "cullpdb+profile_split1.npy.gz";
    std::string test_file = "cb513+profile_split1.npy.gz";
    double val_fraction = 0.05;
    bool use_cache = false;
    std::optional<ColumnLayout> layout;  // defaults to the standard 57-column layout
};

struct ExperimentConfig {
    ArchitectureConfig architecture;
    TrainPlan train;
    DataConfig data;
    bool deterministic = true;
    int beam = 8;
    double blend = 0.45;

    void validate() const;
};

std::string to_json_text(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json_text(const std::string& text);
ExperimentConfig load_experiment_file(const std::string& path);

struct LoadedData {
    std::vector<ProteinRecord> train;
    std::vector<ProteinRecord> val;
    std::vector<ProteinRecord> test;  // empty when no test file is configured
    NormStats stats;
};

/// Resolves the data directory (the OCTOFOLD_DATA_DIR environment variable
/// overrides cfg.data.dir), parses the train and test arrays, splits off
/// validation, computes normalization statistics on the training split only
/// and applies them everywhere. With use_cache, parsed records are stored
/// next to the source file (<file>.cache) before normalization and reloaded
/// from there when present.
LoadedData load_data(const ExperimentConfig& cfg);

/// cfg.data.dir unless OCTOFOLD_DATA_DIR is set.
std::string resolve_data_dir(const ExperimentConfig& cfg);

}  // namespace octofold
