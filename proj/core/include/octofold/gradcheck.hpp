// Central-difference validation of the tape's analytic gradients. The
// checker rebuilds the graph twice per coordinate with the coordinate
// nudged, so graphs must be deterministic functions of their inputs.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "octofold/tape.hpp"

namespace octofold {

/// Builds a graph over the given named inputs (registering each one with
/// tape.param under its map key) and returns the scalar root node.
using GraphBuilder = std::function<NodeId(Tape&, const std::map<std::string, Tensor>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_coord;
    std::int64_t coords_checked = 0;
};

/// Compares analytic gradients against (f(v+h) - f(v-h)) / 2h for every
/// coordinate of every input, h = epsilon * max(1, |v|) quantized to the
/// actually-stored float values. Relative error uses
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const GraphBuilder& build,
                           const std::map<std::string, Tensor>& inputs,
                           double epsilon = 1e-3);

struct GradCheckCase {
    std::string name;
    double epsilon = 1e-3;
    double tolerance = 1e-4;
    GradCheckReport report;
    bool passed = false;
};

/// The stock per-op gradient checks: dense, conv1d at widths 1/3/7/9,
/// multiscale, batchnorm in train mode (tolerance 1e-3), dropout with a
/// fixed mask, and masked softmax cross-entropy. Fixture values derived
/// from `seed` are kept positive (or otherwise structured) so every checked
/// coordinate has a gradient well above the float32 forward noise floor.
std::vector<GradCheckCase> standard_grad_checks(std::uint64_t seed);

}  // namespace octofold
