// Adam with a step-decay schedule, per-unit max-norm projection for the
// dense stage, and the mini-batch training loop with early stopping on a
// validation metric.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "octofold/data.hpp"
#include "octofold/netgraph.hpp"
#include "octofold/tensor.hpp"

namespace octofold {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

/// base * 0.5^floor(t / decay_every) (general factor exposed for tests).
double lr_schedule(std::int64_t t, double base, std::int64_t decay_every, double factor = 0.5);

/// One bias-corrected Adam update over every parameter that has a gradient
/// entry. Increments state.t exactly once.
void adam_step(ParamMap& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr);

/// Rescales any unit whose incoming-weight l2 norm exceeds `cap` to exactly
/// `cap`. For a [in, out] dense weight the units are columns (unit_axis 1).
void maxnorm_project(Tensor& weight, double cap, int unit_axis);

struct TrainPlan {
    double base_lr = 3.357e-4;
    std::int64_t decay_every = 100000;
    double decay_factor = 0.5;
    int batch_size = 54;
    std::int64_t max_iterations = 300000;
    std::int64_t eval_every = 1000;
    int patience = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainHooks {
    /// Replaces the default validation metric (greedy Q8, or teacher-forced
    /// accuracy for conditioned models).
    std::function<double(ModelGraph&, const std::vector<ProteinRecord>&)> val_metric;
    /// Observes every evaluation row as it is logged.
    std::function<void(std::int64_t iter, double lr, double train_loss, double val_metric)> on_eval;
    /// Fires when the validation metric improves (checkpoint sink).
    std::function<void(const ModelGraph&, std::int64_t iter, double val_metric)> on_improved;
};

struct TrainResult {
    std::int64_t iterations_run = 0;
    std::int64_t best_iteration = 0;
    double best_val_metric = 0.0;
    bool stopped_early = false;
};

/// Mini-batches are drawn uniformly with replacement. Each iteration runs
/// forward (train mode) -> masked loss -> backward -> adam_step -> max-norm
/// projection of the dense-stage weights. Conditioned models get
/// ground-truth label context appended (teacher forcing). Every eval_every
/// iterations (and at the final iteration) the validation metric is
/// computed at infer mode and appended to the CSV log
/// (`iter,lr,train_loss,val_q8`); `patience` evaluations without
/// improvement stop training. The model is left holding the best snapshot.
/// A non-finite loss raises DivergenceError naming the iteration.
TrainResult train_loop(ModelGraph& model, const std::vector<ProteinRecord>& train,
                       const std::vector<ProteinRecord>& val, const TrainPlan& plan,
                       const std::string& csv_path = {}, const TrainHooks& hooks = {});

}  // namespace octofold
