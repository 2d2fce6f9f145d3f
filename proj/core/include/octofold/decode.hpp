// Inference-time decoding: greedy argmax for unconditional models, beam
// search over label-context hypotheses for conditional models, the blended
// two-model beam, teacher-forced scoring, and Q8/confusion metrics.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "octofold/data.hpp"
#include "octofold/netgraph.hpp"

namespace octofold {

struct Hypothesis {
    std::vector<int> labels;
    double log_prob = 0.0;
};

/// Sequential scoring interface consumed by beam_decode. Implementations
/// must be pure functions of the prefix.
class StepScorer {
public:
    virtual ~StepScorer() = default;
    virtual int length() const = 0;
    virtual int num_labels() const = 0;
    /// log p(y_t = c | prefix) for every label c; t = prefix.size().
    virtual std::vector<double> step_log_probs(const std::vector<int>& prefix) const = 0;
};

/// Left-to-right beam search keeping the `beam` best-scoring hypotheses per
/// step. Ties break toward the lexicographically smallest label sequence,
/// which also realizes the lowest-class-index rule for single-step ties.
std::vector<int> beam_decode(const StepScorer& scorer, int beam);

/// Scores a conditional model one position at a time, building the label
/// context from the hypothesis. The windowed mode evaluates only the
/// effective-window crop around the position, which is exactly equivalent
/// to a full-sequence evaluation because logits at i depend only on inputs
/// within the receptive radius and labels in [i-W, i).
class ConditionalStepScorer : public StepScorer {
public:
    ConditionalStepScorer(const ModelGraph& model, const ProteinRecord& record,
                          bool windowed = true);
    int length() const override { return static_cast<int>(valid_.size()); }
    int num_labels() const override { return model_.config.num_classes; }
    std::vector<double> step_log_probs(const std::vector<int>& prefix) const override;

private:
    const ModelGraph& model_;
    const ProteinRecord& record_;
    std::vector<std::int64_t> valid_;
    int window_;
    int shift_;
    int radius_;
    bool windowed_;
};

/// Per-valid-position argmax of an unconditional model; ties take the
/// lowest class index. Returns one label per grid row, -1 on padding.
std::vector<int> greedy_decode(const ModelGraph& model, const ProteinRecord& record);

/// Beam search under a conditional model (beam >= 1). Returns grid-aligned
/// labels like greedy_decode.
std::vector<int> beam_search(const ModelGraph& cond_model, const ProteinRecord& record,
                             int beam = 8, bool windowed = true);

/// Beam search scoring each step with
/// (1-lambda)*log p_uncond + lambda*log p_cond; lambda in [0, 1].
std::vector<int> ensemble_beam_search(const ModelGraph& uncond_model,
                                      const ModelGraph& cond_model,
                                      const ProteinRecord& record, int beam = 8,
                                      double lambda = 0.45, bool windowed = true);

/// Per-position argmax of the two unconditional models' mean log
/// probabilities.
std::vector<int> ensemble_pair_uniform(const ModelGraph& model_a, const ModelGraph& model_b,
                                       const ProteinRecord& record);

/// Next-step accuracy of a conditional model when the context channels
/// carry the ground-truth labels, pooled over all valid residues.
double teacher_forced_accuracy(const ModelGraph& cond_model,
                               const std::vector<ProteinRecord>& records);

/// Fraction of valid residues where pred equals truth.
double q8_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                   const Tensor& mask);

using ConfusionCounts = std::array<std::array<std::int64_t, 8>, 8>;
ConfusionCounts confusion(const std::vector<int>& pred, const std::vector<int>& truth,
                          const Tensor& mask);

struct EvalReport {
    double q8 = 0.0;
    std::int64_t residues = 0;
    ConfusionCounts counts{};
};

std::string to_json_text(const EvalReport& report);

/// Greedy-decodes every record and pools Q8 and confusion counts.
EvalReport evaluate_greedy(const ModelGraph& model, const std::vector<ProteinRecord>& records);

/// Pools a metric report from per-record predictions.
EvalReport pool_report(const std::vector<std::vector<int>>& preds,
                       const std::vector<ProteinRecord>& records);

}  // namespace octofold
