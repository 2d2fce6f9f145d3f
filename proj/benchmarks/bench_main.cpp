// Hot-path timings: convolution stacks, the full forward pass, optimizer
// updates, and one beam-search step. Run with --benchmark_filter=... to
// focus on a single kernel.
#include <benchmark/benchmark.h>

#include <map>
#include <vector>

#include "octofold/data.hpp"
#include "octofold/decode.hpp"
#include "octofold/netgraph.hpp"
#include "octofold/optim.hpp"
#include "octofold/rng.hpp"
#include "octofold/tape.hpp"
#include "octofold/tensor.hpp"

using namespace octofold;

namespace {

Tensor random_tensor(const std::vector<std::int64_t>& shape, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

ArchitectureConfig production_arch(bool conditioned) {
    ArchitectureConfig cfg;
    cfg.multiscale_banks = {{3, 64}, {7, 64}, {9, 64}};
    cfg.single_conv = ConvSpec{9, 24};
    cfg.num_blocks = 2;
    cfg.fc_window = 11;
    cfg.fc_layers = 2;
    cfg.fc_dim = 455;
    cfg.residual_connections = true;
    cfg.residual_projection_depth = 96;
    cfg.conditioned = conditioned;
    return cfg;
}

void BM_Conv1dForward(benchmark::State& state) {
    RngStream rng(1);
    const Tensor x = random_tensor({8, 100, 42}, rng);
    const Tensor f = random_tensor({9, 42, 64}, rng, -0.1, 0.1);
    const Tensor b = random_tensor({64}, rng, -0.1, 0.1);
    for (auto _ : state) {
        Tape tape;
        const NodeId y = tape.conv1d(tape.leaf(x), tape.leaf(f), tape.leaf(b));
        benchmark::DoNotOptimize(tape.value(y).data());
    }
}
BENCHMARK(BM_Conv1dForward)->Unit(benchmark::kMillisecond);

void BM_MultiscaleForward(benchmark::State& state) {
    RngStream rng(2);
    const Tensor x = random_tensor({8, 100, 42}, rng);
    const Tensor f3 = random_tensor({3, 42, 64}, rng, -0.1, 0.1);
    const Tensor f7 = random_tensor({7, 42, 64}, rng, -0.1, 0.1);
    const Tensor f9 = random_tensor({9, 42, 64}, rng, -0.1, 0.1);
    const Tensor bias = random_tensor({64}, rng, -0.1, 0.1);
    for (auto _ : state) {
        Tape tape;
        const NodeId xn = tape.leaf(x);
        const NodeId bn = tape.leaf(bias);
        const NodeId y = tape.multiscale(xn, {{tape.leaf(f3), bn},
                                              {tape.leaf(f7), bn},
                                              {tape.leaf(f9), bn}});
        benchmark::DoNotOptimize(tape.value(y).data());
    }
}
BENCHMARK(BM_MultiscaleForward)->Unit(benchmark::kMillisecond);

void BM_ProductionForward(benchmark::State& state) {
    RngStream rng(3);
    ModelGraph model = build_model(production_arch(false), rng);
    const Tensor features = random_tensor({1, 700, model.config.feature_dim}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(infer_logits(model, features).data());
    }
}
BENCHMARK(BM_ProductionForward)->Unit(benchmark::kMillisecond);

void BM_AdamStep(benchmark::State& state) {
    RngStream rng(4);
    ParamMap params;
    std::map<std::string, Tensor> grads;
    params.add("fc1.w", random_tensor({462, 455}, rng));
    params.add("out.w", random_tensor({455, 8}, rng));
    grads.emplace("fc1.w", random_tensor({462, 455}, rng, -1e-3, 1e-3));
    grads.emplace("out.w", random_tensor({455, 8}, rng, -1e-3, 1e-3));
    AdamState adam;
    for (auto _ : state) {
        adam_step(params, grads, adam, 1e-4);
        benchmark::DoNotOptimize(params.at("fc1.w").data());
    }
}
BENCHMARK(BM_AdamStep)->Unit(benchmark::kMicrosecond);

void BM_ConditionalBeamStep(benchmark::State& state) {
    RngStream rng(5);
    ModelGraph model = build_model(production_arch(true), rng);

    // A mid-protein position with a half-filled prefix.
    const std::int64_t grid = 700;
    ProteinRecord rec;
    rec.id = "bench";
    rec.length = static_cast<int>(grid);
    rec.features = random_tensor({grid, model.config.feature_dim}, rng);
    rec.labels.assign(static_cast<std::size_t>(grid), 0);
    rec.mask = Tensor::full({grid}, 1.0f);
    rec.normalized = true;

    ConditionalStepScorer scorer(model, rec);
    std::vector<int> prefix(350, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(scorer.step_log_probs(prefix));
    }
}
BENCHMARK(BM_ConditionalBeamStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
