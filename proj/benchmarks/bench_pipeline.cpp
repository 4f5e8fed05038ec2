#include <benchmark/benchmark.h>

#include <random>

#include "causalperf/citest.hpp"
#include "causalperf/effects.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/pareto.hpp"
#include "causalperf/repair.hpp"
#include "causalperf/scm.hpp"
#include "causalperf/structure.hpp"

using namespace causalperf;

namespace {

const GroundTruthWorld& bench_world() {
  static const GroundTruthWorld world = [] {
    WorldSpec spec;
    spec.seed = 1000;
    return generate_world(spec);
  }();
  return world;
}

void BM_LearnCpm(benchmark::State& state) {
  const auto data = simulate_world(bench_world(), static_cast<std::size_t>(state.range(0)), 1);
  LearnOptions lo;
  for (auto _ : state) benchmark::DoNotOptimize(learn_cpm(data, lo));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LearnCpm)->Arg(500)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_IncrementalUpdate(benchmark::State& state) {
  const auto& w = bench_world();
  const auto data = simulate_world(w, 2000, 1);
  const auto fresh = simulate_world(w, 100, 2);
  const auto prior = learn_cpm(data, {});
  for (auto _ : state) benchmark::DoNotOptimize(incremental_update(prior, data, fresh, {}));
}
BENCHMARK(BM_IncrementalUpdate)->Unit(benchmark::kMillisecond);

void BM_Fit(benchmark::State& state) {
  const auto& w = bench_world();
  const auto data = simulate_world(w, 2000, 1);
  const int degree = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(fit(w.graph, data, degree));
}
BENCHMARK(BM_Fit)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_RankPaths(benchmark::State& state) {
  const auto& w = bench_world();
  const auto model = fit(w.graph, simulate_world(w, 2000, 1), 2);
  const auto y = w.fault->faulty_objectives.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(rank_paths(model, y, 5, {static_cast<std::size_t>(state.range(0)), 1}));
  }
}
BENCHMARK(BM_RankPaths)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_ScoreRepairs(benchmark::State& state) {
  const auto& w = bench_world();
  const auto& fault = *w.fault;
  const auto model = fit(w.graph, simulate_world(w, 2000, 1), 2);
  std::vector<RankedPaths> ranked;
  for (auto y : fault.faulty_objectives) ranked.push_back(rank_paths(model, y, 5, {200, 1}));
  const auto repairs = build_repair_set(ranked, fault.row, model);
  const auto thresholds = fault_thresholds(fault.row, fault.faulty_objectives);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_repairs(model, fault.row, repairs, fault.faulty_objectives, thresholds, {1000, 1}));
  }
  state.counters["repairs"] = static_cast<double>(repairs.size());
}
BENCHMARK(BM_ScoreRepairs)->Unit(benchmark::kMillisecond);

void BM_FisherZ(benchmark::State& state) {
  const auto data = simulate_world(bench_world(), 2000, 1);
  const std::vector<std::size_t> given{2, 3, 4};
  for (auto _ : state) benchmark::DoNotOptimize(fisher_z(data, 6, 7, given));
}
BENCHMARK(BM_FisherZ);

void BM_Hypervolume(benchmark::State& state) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point> points(static_cast<std::size_t>(state.range(0)));
  for (auto& p : points) p = {u(rng), u(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(hypervolume_2d(points, {1.1, 1.1}));
}
BENCHMARK(BM_Hypervolume)->Arg(64)->Arg(1024);

void BM_DebugLoop(benchmark::State& state) {
  const auto& w = bench_world();
  for (auto _ : state) {
    SimulatedSut sut(w, 7);
    LoopParams p;
    p.seed = 1;
    benchmark::DoNotOptimize(run_debug(sut, w.fault->row, w.fault->faulty_objectives, Budget{60}, p));
  }
}
BENCHMARK(BM_DebugLoop)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
