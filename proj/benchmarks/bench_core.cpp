#include <benchmark/benchmark.h>

#include "peftkit/mask.hpp"
#include "peftkit/optimizer.hpp"
#include "peftkit/rng.hpp"
#include "peftkit/tasks.hpp"
#include "peftkit/toy_model.hpp"
#include "peftkit/trainer.hpp"

using namespace peftkit;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> data(r * c);
  for (auto& v : data) v = rng.normal();
  return Tensor({r, c}, std::move(data));
}

void BM_matmul(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(rng, n, n);
  const Tensor b = random_matrix(rng, n, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(2 * n * n * n));
}
BENCHMARK(BM_matmul)->Arg(16)->Arg(32)->Arg(64);

void BM_pafi_mask(benchmark::State& state) {
  const ToyModel model = build_model(
      {.vocab = 50, .max_seq = 16, .d = std::size_t(state.range(0)), .layers = 2, .heads = 4}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        pafi_mask(model.params, 0.05, MaskScope::group_wise, MaskPolicy{}));
  }
}
BENCHMARK(BM_pafi_mask)->Arg(32)->Arg(64);

void BM_masked_adam_step(benchmark::State& state) {
  const ToyModel model = build_model({.vocab = 50, .max_seq = 16, .d = 32, .layers = 2, .heads = 4},
                                     3);
  const SparseMask mask = pafi_mask(model.params, 0.05, MaskScope::group_wise, MaskPolicy{});
  ParameterStore params = model.params;
  ParameterStore grads = model.params;  // any aligned store works as gradients
  OptimizerConfig cfg;
  MaskedOptimizer opt(cfg, mask.groups);
  for (auto _ : state) {
    opt.step(params, grads, 1e-3);
  }
}
BENCHMARK(BM_masked_adam_step);

void BM_forward_backward(benchmark::State& state) {
  const ToyModel model = build_model({.vocab = 50, .max_seq = 16, .d = 32, .layers = 2, .heads = 4},
                                     3);
  TaskSpec spec;
  spec.train_size = 16;
  spec.dev_size = 8;
  const TaskData task = make_task(spec);
  for (auto _ : state) {
    Graph g;
    const ModelGraph wiring = wire_model(g, model, nullptr, true, false);
    std::vector<NodeId> losses;
    for (const auto& s : task.train) losses.push_back(sample_loss(g, wiring, s, spec.kind));
    const NodeId loss = g.scale(g.add_n(losses), 1.0 / double(losses.size()));
    benchmark::DoNotOptimize(g.backward(loss));
  }
}
BENCHMARK(BM_forward_backward);

}  // namespace

BENCHMARK_MAIN();
