// Model topology: a declarative architecture description, the builder that
// instantiates it as named parameter tensors, and the forward pass that
// replays it on a tape.
//
// A model is `num_blocks` convolutional blocks followed by a windowed
// fully-connected stage. Each block runs multiscale convolution banks ->
// batchnorm -> relu -> dropout, then optionally a single convolution with
// the same trailing stack. With residual connections enabled, a width-1
// projection convolution of a block's input (or output, by configuration)
// is depth-concatenated after the block's output before the next block.
// The fully-connected stage gathers a centered window of fc_window residue
// vectors and applies dense+relu+dropout layers, then a linear map to
// per-residue class logits.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "octofold/rng.hpp"
#include "octofold/tape.hpp"
#include "octofold/tensor.hpp"

namespace octofold {

struct ConvSpec {
    int width = 0;
    int depth = 0;
};

struct ArchitectureConfig {
    std::vector<ConvSpec> multiscale_banks;
    std::optional<ConvSpec> single_conv;
    int num_blocks = 0;
    int fc_window = 11;
    int fc_layers = 2;
    int fc_dim = 455;
    bool residual_connections = false;
    int residual_projection_depth = 96;
    // "input": project the previous block's input (the default, per the
    // connection diagram); "output": project its output.
    std::string residual_source = "input";
    double dropout_rate = 0.4;
    double maxnorm_cap = 0.1503;
    bool conditioned = false;
    int feature_dim = 42;
    int num_classes = 8;

    /// Channels appended by append_label_context: one per class plus an
    /// unknown/before-start marker.
    int label_context_channels() const { return num_classes + 1; }
    /// Depth the first layer consumes.
    int input_depth() const {
        return feature_dim + (conditioned ? label_context_channels() : 0);
    }

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

std::string to_json_text(const ArchitectureConfig& cfg);
ArchitectureConfig architecture_from_json_text(const std::string& text);

/// Insertion-ordered named tensors; order fixes initialization draws and
/// checkpoint layout.
class ParamMap {
public:
    Tensor& add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }

    std::vector<std::pair<std::string, Tensor>>::iterator begin() { return entries_.begin(); }
    std::vector<std::pair<std::string, Tensor>>::iterator end() { return entries_.end(); }
    std::vector<std::pair<std::string, Tensor>>::const_iterator begin() const { return entries_.begin(); }
    std::vector<std::pair<std::string, Tensor>>::const_iterator end() const { return entries_.end(); }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct ModelGraph {
    ArchitectureConfig config;
    ParamMap params;  // trainable tensors
    ParamMap state;   // batchnorm running statistics
};

/// Instantiates parameters for the configuration. Weights draw from
/// U(-b, b) with b = sqrt(6 / fan_in); biases start at zero, batchnorm
/// gamma at one, beta at zero, running mean/var at zero/one.
///
/// Parameter schema, in creation order (blocks and fc layers 1-based):
///   block{k}.ms.w{width}, block{k}.ms.b{width}   per bank
///   block{k}.ms_bn.gamma, block{k}.ms_bn.beta
///   block{k}.single.w, block{k}.single.b          if single_conv
///   block{k}.single_bn.gamma, block{k}.single_bn.beta
///   block{k}.res.w, block{k}.res.b                if residual, k < num_blocks
///   fc{j}.w, fc{j}.b
///   out.w, out.b
/// Running statistics live in state as {bn name}.running_mean/.running_var.
ModelGraph build_model(const ArchitectureConfig& cfg, RngStream& rng);

/// Residues of input context that can influence one output position:
/// fc_window + num_blocks * ((single_width - 1) + (max multiscale width - 1)).
int effective_window(const ArchitectureConfig& cfg);

/// Records the forward pass on the tape and returns the logits node
/// [B, L, num_classes]. Features must be [B, L, input_depth()]. The mask
/// (nullptr for all-valid) selects the rows that feed train-mode batchnorm
/// statistics. Train mode consumes rng for dropout and updates the running
/// statistics in model.state.
NodeId model_forward(Tape& tape, ModelGraph& model, const Tensor& features,
                     const Tensor* mask, Mode mode, RngStream& rng);

/// Inference-mode logits on a scratch tape. Deterministic; does not mutate
/// the model.
Tensor infer_logits(const ModelGraph& model, const Tensor& features);

/// Appends label_context_channels() channels carrying a shifted copy of the
/// labels: position t gets the one-hot of labels[b][t - s] with shift
/// s = (W + 1) / 2, or the unknown marker when that source position is
/// before the start or invalid. With the model's symmetric receptive
/// radius (W - 1) / 2, the logits at position i then see exactly labels
/// y_{i-W} .. y_{i-1}. labels holds B*L entries, negatives meaning no
/// residue; mask is [B, L].
Tensor append_label_context(const Tensor& features, const std::vector<int>& labels,
                            const Tensor& mask, int effective_window);

/// Number of trainable scalars (running statistics excluded).
std::int64_t param_count(const ModelGraph& model);

/// Names of the parameters subject to the max-norm constraint: the dense
/// stage weights fc{j}.w and out.w.
std::vector<std::string> maxnorm_param_names(const ModelGraph& model);

}  // namespace octofold
