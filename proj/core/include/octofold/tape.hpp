// Reverse-mode automatic differentiation over a flat tape. Each builder
// method runs the forward computation eagerly, records a node whose closure
// knows how to push gradients to its inputs, and validates that outputs stay
// finite. Nodes only reference earlier nodes, so reverse creation order is a
// reverse topological order and backward visits each node exactly once.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "octofold/rng.hpp"
#include "octofold/tensor.hpp"

namespace octofold {

enum class Mode { kTrain, kInfer };

struct NodeId {
    std::uint32_t index = 0;
};

class Tape {
public:
    /// Registers an input tensor. Named leaves with requires_grad are the
    /// trainable parameters reported by named_grads().
    NodeId leaf(Tensor value, bool requires_grad = false, std::string name = {});
    NodeId param(const std::string& name, const Tensor& value) { return leaf(value, true, name); }

    /// y[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]. Leading dims of
    /// x are treated as one batch dimension.
    NodeId dense(NodeId x, NodeId weight, NodeId bias);

    /// Temporal convolution with symmetric zero "SAME" padding.
    /// x: [B, L, Din], filters: [K, Din, Dout] with K odd, bias: [Dout].
    NodeId conv1d(NodeId x, NodeId filters, NodeId bias);

    /// Parallel convolution banks whose outputs are depth-concatenated in
    /// argument order. Each bank is a (filters, bias) pair.
    NodeId multiscale(NodeId x, const std::vector<std::pair<NodeId, NodeId>>& banks);

    /// Stacks [B, L, D_i] tensors along depth. B and L must agree.
    NodeId depth_concat(const std::vector<NodeId>& xs);

    /// Elementwise max(0, x); the subgradient at exactly 0 is fixed to 0.
    NodeId relu(NodeId x);

    /// Inverted dropout. Train mode zeroes each unit with probability `rate`
    /// and scales survivors by 1/(1-rate); infer mode is the identity.
    NodeId dropout(NodeId x, double rate, Mode mode, RngStream& rng);

    /// Batch normalization per channel over batch and sequence positions.
    /// x: [B, L, C]. In train mode statistics are computed over positions
    /// with valid_mask != 0 (all positions when null) and running stats are
    /// updated in place; infer mode normalizes with the running stats.
    NodeId batchnorm(NodeId x, NodeId gamma, NodeId beta, Mode mode,
                     Tensor& running_mean, Tensor& running_var,
                     const Tensor* valid_mask,
                     double momentum = 0.99, double epsilon = 1e-5);

    /// Concatenates each position's `window` neighboring feature rows
    /// (centered, window odd), zero padded past the ends of the grid.
    /// [B, L, D] -> [B, L, window*D].
    NodeId window_gather(NodeId x, int window);

    /// Masked mean cross-entropy with a numerically stable softmax.
    /// logits: [B, L, C]; labels: B*L class indices (checked where mask=1);
    /// mask: [B, L] of {0,1}. Returns a scalar node; the per-position
    /// probabilities are available via softmax_probs().
    NodeId softmax_xent_masked(NodeId logits, const std::vector<int>& labels, const Tensor& mask);

    /// sum(x * coeffs), a scalar probe used by gradient checks.
    NodeId weighted_sum(NodeId x, Tensor coeffs);

    const Tensor& value(NodeId id) const { return node(id).value; }
    /// Double-precision value of a scalar node (loss, weighted_sum).
    double scalar(NodeId id) const;
    const Tensor& softmax_probs(NodeId xent) const;

    /// Accumulates d(loss)/d(node) for every node that reaches `loss`.
    void backward(NodeId loss);

    /// Gradient of the last backward() w.r.t. a node; zeros if unreached.
    Tensor grad(NodeId id) const;

    /// Gradients keyed by parameter name; parameters that do not reach the
    /// loss get zero tensors.
    std::map<std::string, Tensor> named_grads() const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Tensor aux;  // op-specific saved output (softmax probabilities, BN x-hat)
        double scalar_value = 0.0;
        bool is_scalar = false;
        bool requires_grad = false;
        std::string name;
        std::vector<NodeId> inputs;
        std::function<void(Tape&, const Node&)> backward_fn;
    };

    Node& node(NodeId id) { return nodes_[id.index]; }
    const Node& node(NodeId id) const { return nodes_[id.index]; }
    NodeId push(Node&& n);
    Tensor& grad_buffer(NodeId id);
    bool wants_grad(NodeId id) const { return node(id).requires_grad; }

    std::vector<Node> nodes_;
};

}  // namespace octofold
