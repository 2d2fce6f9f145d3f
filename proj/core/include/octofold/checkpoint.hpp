// Binary model snapshots: "OCF1" magic, format version, JSON metadata
// (architecture, normalization stats, iteration, validation score), then
// every parameter and running-statistic tensor by name. Values round-trip
// bit-exactly.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "octofold/data.hpp"
#include "octofold/netgraph.hpp"

namespace octofold {

struct Checkpoint {
    ModelGraph model;
    std::optional<NormStats> norm_stats;
    std::int64_t iteration = 0;
    double val_q8 = 0.0;
};

void save_checkpoint(const std::string& path, const ModelGraph& model,
                     const std::optional<NormStats>& norm_stats, std::int64_t iteration,
                     double val_q8);

/// Rebuilds the model from the embedded architecture and overwrites every
/// tensor from the file. The tensor set must match the architecture's
/// schema exactly; unknown versions and malformed framing are format
/// errors.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace octofold
