#include "octofold/optim.hpp"

#include <cmath>
#include <fstream>

#include "octofold/decode.hpp"
#include "octofold/errors.hpp"
#include "octofold/rng.hpp"
#include "octofold/tape.hpp"

namespace octofold {

double lr_schedule(std::int64_t t, double base, std::int64_t decay_every, double factor) {
    if (t < 0) throw ConfigError("lr_schedule: negative iteration");
    if (decay_every < 1) throw ConfigError("lr_schedule: decay_every must be >= 1");
    return base * std::pow(factor, static_cast<double>(t / decay_every));
}

void adam_step(ParamMap& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.same_shape(p))
            throw DimensionError("adam_step: gradient for '" + name + "' has shape " +
                                 g.shape_str() + ", parameter has " + p.shape_str());
        Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape())).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape())).first->second;
        if (!m.same_shape(p))
            throw DimensionError("adam_step: stale moment shape for '" + name + "'");
        float* pp = p.data();
        float* mp = m.data();
        float* vp = v.data();
        const float* gp = g.data();
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double gi = gp[i];
            const double mi = state.beta1 * mp[i] + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * vp[i] + (1.0 - state.beta2) * gi * gi;
            mp[i] = static_cast<float>(mi);
            vp[i] = static_cast<float>(vi);
            pp[i] = static_cast<float>(pp[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.epsilon));
        }
    }
}

void maxnorm_project(Tensor& weight, double cap, int unit_axis) {
    if (cap <= 0.0) throw ConfigError("maxnorm_project: cap must be positive");
    if (weight.rank() != 2 || (unit_axis != 0 && unit_axis != 1))
        throw DimensionError("maxnorm_project: expected a rank-2 weight and unit_axis 0 or 1");
    const std::int64_t units = weight.dim(unit_axis);
    const std::int64_t span = weight.dim(1 - unit_axis);
    for (std::int64_t u = 0; u < units; ++u) {
        double sq = 0.0;
        for (std::int64_t i = 0; i < span; ++i) {
            const double w = unit_axis == 1 ? weight.at(i, u) : weight.at(u, i);
            sq += w * w;
        }
        const double norm = std::sqrt(sq);
        if (norm <= cap) continue;
        const float scale = static_cast<float>(cap / norm);
        for (std::int64_t i = 0; i < span; ++i) {
            if (unit_axis == 1)
                weight.at(i, u) *= scale;
            else
                weight.at(u, i) *= scale;
        }
    }
}

void TrainPlan::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train plan: " + m); };
    if (!(base_lr > 0.0)) fail("base_lr must be positive");
    if (decay_every < 1) fail("decay_every must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor must be in (0, 1]");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_iterations < 1) fail("max_iterations must be >= 1");
    if (eval_every < 1) fail("eval_every must be >= 1");
    if (patience < 1) fail("patience must be >= 1");
}

namespace {

double default_val_metric(ModelGraph& model, const std::vector<ProteinRecord>& val) {
    if (model.config.conditioned) return teacher_forced_accuracy(model, val);
    return evaluate_greedy(model, val).q8;
}

}  // namespace

TrainResult train_loop(ModelGraph& model, const std::vector<ProteinRecord>& train,
                       const std::vector<ProteinRecord>& val, const TrainPlan& plan,
                       const std::string& csv_path, const TrainHooks& hooks) {
    plan.validate();
    if (train.empty() || val.empty())
        throw ConfigError("train_loop: empty train or validation set");

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw MissingFileError("cannot write " + csv_path);
        csv << "iter,lr,train_loss,val_q8\n";
    }

    RngStream root(plan.seed);
    RngStream batch_rng = root.fork(1);
    RngStream dropout_rng = root.fork(2);
    AdamState adam;
    const int window = effective_window(model.config);
    const std::vector<std::string> capped =
        model.config.maxnorm_cap > 0.0 ? maxnorm_param_names(model) : std::vector<std::string>{};

    TrainResult result;
    result.best_val_metric = -1.0;
    ParamMap best_params = model.params;
    ParamMap best_state = model.state;
    int evals_without_improvement = 0;

    for (std::int64_t t = 1; t <= plan.max_iterations; ++t) {
        std::vector<std::int64_t> indices(static_cast<std::size_t>(plan.batch_size));
        for (auto& idx : indices)
            idx = static_cast<std::int64_t>(batch_rng.uniform_index(train.size()));
        Batch batch = make_batch(train, indices);

        const double lr = lr_schedule(t - 1, plan.base_lr, plan.decay_every, plan.decay_factor);
        double loss = 0.0;
        try {
            Tape tape;
            const Tensor* feats = &batch.features;
            Tensor conditioned_feats;
            if (model.config.conditioned) {
                conditioned_feats =
                    append_label_context(batch.features, batch.labels, batch.mask, window);
                feats = &conditioned_feats;
            }
            NodeId logits =
                model_forward(tape, model, *feats, &batch.mask, Mode::kTrain, dropout_rng);
            NodeId xent = tape.softmax_xent_masked(logits, batch.labels, batch.mask);
            loss = tape.scalar(xent);
            tape.backward(xent);
            adam_step(model.params, tape.named_grads(), adam, lr);
        } catch (const NumericError& e) {
            throw DivergenceError("iteration " + std::to_string(t) + ": " + e.what());
        }
        for (const std::string& name : capped)
            maxnorm_project(model.params.at(name), model.config.maxnorm_cap, 1);

        result.iterations_run = t;
        if (t % plan.eval_every == 0 || t == plan.max_iterations) {
            const double metric =
                hooks.val_metric ? hooks.val_metric(model, val) : default_val_metric(model, val);
            if (csv.is_open())
                csv << t << ',' << lr << ',' << loss << ',' << metric << '\n' << std::flush;
            if (hooks.on_eval) hooks.on_eval(t, lr, loss, metric);
            if (metric > result.best_val_metric) {
                result.best_val_metric = metric;
                result.best_iteration = t;
                best_params = model.params;
                best_state = model.state;
                evals_without_improvement = 0;
                if (hooks.on_improved) hooks.on_improved(model, t, metric);
            } else if (++evals_without_improvement >= plan.patience) {
                result.stopped_early = true;
                break;
            }
        }
    }

    model.params = std::move(best_params);
    model.state = std::move(best_state);
    return result;
}

}  // namespace octofold
