// Parallel kernels against their serial references, plus one training batch
// at 1 thread and at the default thread count.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "pegp/experiment.hpp"
#include "pegp/rng.hpp"

using namespace pegp;

namespace {

template <Matrix (*Kernel)(const Matrix&, const Matrix&)>
void BM_Kernel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(n);
  const Matrix a = rng.normal_matrix(n, n, 1.0), b = rng.normal_matrix(n, n, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

BENCHMARK(BM_Kernel<pegp::matmul>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_Kernel<pegp::reference::matmul>)->Name("matmul/reference")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_Kernel<pegp::matmul_at_b>)->Name("matmul_at_b/parallel")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_Kernel<pegp::reference::matmul_at_b>)->Name("matmul_at_b/reference")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_Kernel<pegp::matmul_a_bt>)->Name("matmul_a_bt/parallel")->RangeMultiplier(2)->Range(64, 256);
BENCHMARK(BM_Kernel<pegp::reference::matmul_a_bt>)->Name("matmul_a_bt/reference")->RangeMultiplier(2)->Range(64, 256);

void BM_BatchGradients(benchmark::State& state) {
  RunConfig c;
  c.paradigm = PetParadigm::LoRA;
  c.scenario.tasks = 1;
  c.normalize();
  const Experiment e = prepare_experiment(c);
  const RunState st = fresh_state(e);
  std::vector<const Sample*> batch;
  for (std::size_t k = 0; k < 64; ++k) batch.push_back(&e.stream[0].train[k]);
  const auto mask = logit_policy(Scenario::CIL, Phase::Train, 0, 2, c.scenario.total_classes());
  const int saved = omp_get_max_threads();
  omp_set_num_threads(state.range(0) == 0 ? saved : static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(e.setup.weights, st.pet, st.head, batch, mask, nullptr));
  omp_set_num_threads(saved);
}

// Argument 0 means the default OpenMP thread count.
BENCHMARK(BM_BatchGradients)->Name("batch_gradients/threads")->Arg(1)->Arg(0);

}  // namespace

BENCHMARK_MAIN();
