#include "expanse/embedding/synthetic_scorer.hpp"
#include "expanse/evaluation/evaluation.hpp"
#include "expanse/inversion/inversion.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace expanse;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

const SyntheticScorer& scorer() {
  static const SyntheticScorer s(default_synthetic_vocabulary());
  return s;
}

// Nearest-token projection of m slots over the built-in vocabulary.
void BM_ProjectToVocab(benchmark::State& state) {
  const auto& vocab = scorer().vocabulary();
  const Matrix slots = gaussian(state.range(0), vocab.dim(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(project_to_vocab(slots, vocab));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ProjectToVocab)->Arg(15)->Arg(75)->Arg(1000);

// One straight-through step with a batch of two images.
void BM_InversionStep(benchmark::State& state) {
  const auto& vocab = scorer().vocabulary();
  Matrix slots = gaussian(15, vocab.dim(), 2);
  Matrix batch = gaussian(2, vocab.dim(), 3);
  batch.rowwise().normalize();
  AdamW opt(slots.rows(), slots.cols(), AdamWConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(inversion_step(slots, batch, scorer(), opt));
}
BENCHMARK(BM_InversionStep);

void BM_Icad(benchmark::State& state) {
  const Matrix emb = gaussian(state.range(0), 1024, 4);
  for (auto _ : state) benchmark::DoNotOptimize(icad(emb));
}
BENCHMARK(BM_Icad)->Arg(10)->Arg(100)->Arg(1000);

}  // namespace
BENCHMARK_MAIN();
