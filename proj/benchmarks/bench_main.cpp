#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "bullettrain/corruption.hpp"
#include "bullettrain/mining.hpp"
#include "bullettrain/model.hpp"
#include "bullettrain/rng.hpp"

namespace {

bt::Tensor random_batch(std::size_t m, std::size_t d, std::uint64_t seed) {
  bt::Tensor x({m, d});
  bt::Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : x.data()) v = u(rng);
  return x;
}

bt::Labels random_labels(std::size_t m, std::size_t k, std::uint64_t seed) {
  bt::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> u(0, k - 1);
  bt::Labels y(m);
  for (auto& v : y) v = u(rng);
  return y;
}

void BM_MlpForward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  bt::Classifier model(bt::Architecture::parse("mlp:784-256-128-10"), 1);
  const bt::Tensor x = random_batch(m, 784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_MlpForward)->Arg(32)->Arg(128);

void BM_PgdStep(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  bt::Classifier model(bt::Architecture::parse("mlp:784-256-128-10"), 1);
  const bt::Tensor x = random_batch(64, 784, 3);
  const bt::Labels y = random_labels(64, 10, 4);
  std::vector<std::uint64_t> seeds(64);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  bt::AttackConfig cfg;
  cfg.steps = steps;
  cfg.step_size = 1.7 * cfg.epsilon / static_cast<double>(steps);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bt::pgd_generate(model, x, y, cfg, bt::AttackObjective::kCrossEntropy, seeds));
  }
  state.SetItemsProcessed(state.iterations() * 64 * static_cast<std::int64_t>(steps));
}
BENCHMARK(BM_PgdStep)->Arg(1)->Arg(10);

void BM_ClassifyBatch(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const bt::Tensor logits = random_batch(m, 10, 5);
  const bt::Labels y = random_labels(m, 10, 6);
  for (auto _ : state) {
    const auto svars = bt::signed_variances(logits, y);
    benchmark::DoNotOptimize(bt::classify_batch(svars, 0.5));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_ClassifyBatch)->Arg(128)->Arg(1024);

}  // namespace
BENCHMARK_MAIN();
