// One line per acceptance criterion; exit status 1 when any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/effects.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/loop.hpp"
#include "causalperf/repair.hpp"
#include "causalperf/scm.hpp"
#include "causalperf/structure.hpp"

using namespace causalperf;

namespace {

// Tolerances and sizes.
constexpr std::size_t kStructureWorlds = 10;
constexpr std::size_t kStructureSeeds = 20;
constexpr std::size_t kStructureRows = 2000;
constexpr double kMaxMedianShd = 2.0;
constexpr double kMaxSecondsPerWorld = 60.0;

constexpr std::size_t kShdStart = 100;
constexpr std::size_t kShdStep = 100;
constexpr std::size_t kShdRounds = 5;

constexpr std::size_t kAceWorlds = 5;
constexpr std::size_t kAceRows = 20000;
constexpr std::size_t kAceMc = 1000;
constexpr double kAceRelative = 0.05;
constexpr double kAceSe = 3.0;

constexpr std::size_t kIceScenarios = 10;
constexpr double kIceAgreement = 0.9;

constexpr std::size_t kDebugSeeds = 20;
constexpr std::size_t kDebugBudget = 250;
constexpr std::size_t kDebugInitial = 25;
constexpr double kDebugFixRate = 0.8;

constexpr std::size_t kOptSeeds = 10;
constexpr double kOptRelative = 0.10;
constexpr double kOptRate = 0.8;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s  %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += o.pass ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

GroundTruthWorld world(std::uint64_t seed) {
  WorldSpec spec;
  spec.seed = seed;
  return generate_world(spec);
}

Outcome formulas() {
  const double g = gain(100.0, 12.0);
  const double j = weighted_jaccard({1, 2}, {2, 3}, {0.0, 0.2, 0.5, 0.3});
  const double t = entropy_threshold(2.0, 1.0);
  const bool ok = g == 88.0 && std::abs(j - 50.0) == 0.0 && t == 0.8;
  return {ok, fmt("gain=%g jaccard=%g theta=%g", g, j, t)};
}

Outcome structure() {
  double worst_median = 0.0, slowest = 0.0;
  for (std::size_t w = 0; w < kStructureWorlds; ++w) {
    const auto truth = world(1000 + w);
    std::vector<double> shds;
    double elapsed = 0.0;
    for (std::size_t s = 0; s < kStructureSeeds; ++s) {
      const auto data = simulate_world(truth, kStructureRows, mix_seed(w, s));
      LearnOptions lo;
      lo.seed = s;
      const auto t0 = std::chrono::steady_clock::now();
      const auto g = learn_cpm(data, lo);
      elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      shds.push_back(static_cast<double>(shd(g, truth.graph)));
    }
    worst_median = std::max(worst_median, median(shds));
    slowest = std::max(slowest, elapsed / kStructureSeeds);
  }
  return {worst_median <= kMaxMedianShd && slowest < kMaxSecondsPerWorld,
          fmt("worst per-world median SHD %g, slowest learn %.3fs", worst_median, slowest)};
}

Outcome shd_trend() {
  std::vector<std::vector<double>> trace(kShdRounds + 1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto truth = world(s);
    LearnOptions lo;
    lo.seed = s;
    auto data = simulate_world(truth, kShdStart, mix_seed(s, 11));
    auto g = learn_cpm(data, lo);
    trace[0].push_back(static_cast<double>(shd(g, truth.graph)));
    for (std::size_t r = 1; r <= kShdRounds; ++r) {
      const auto fresh = simulate_world(truth, kShdStep, mix_seed(s, 12, r));
      g = incremental_update(g, data, fresh, lo);
      data = data.append(fresh);
      trace[r].push_back(static_cast<double>(shd(g, truth.graph)));
    }
  }
  bool ok = true;
  std::ostringstream os;
  os << "median SHD per round:";
  double prev = 1e300;
  for (auto& t : trace) {
    const double m = median(t);
    ok = ok && m <= prev;
    prev = m;
    os << ' ' << m;
  }
  return {ok, os.str()};
}

Outcome ace_oracle() {
  std::size_t pairs = 0, bad = 0, zero_pairs = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < kAceWorlds; ++s) {
    const auto truth = world(s);
    if (!truth.linear()) return {false, "generated world is not linear"};
    const auto model = fit(truth.graph, simulate_world(truth, kAceRows, mix_seed(s, 5)), 1);
    for (auto o : truth.schema.options()) {
      for (auto y : truth.objectives()) {
        const auto est = ace(model, o, y, {kAceMc, mix_seed(s, o, y)});
        const auto orc = oracle_ace(truth, o, y);
        ++pairs;
        if (orc.value == 0.0) {
          ++zero_pairs;
          bad += est.value == 0.0 ? 0 : 1;
          continue;
        }
        const double tol = std::max(kAceRelative * std::abs(orc.value), kAceSe * est.std_error);
        const double err = std::abs(est.value - orc.value);
        worst = std::max(worst, err / tol);
        bad += err <= tol ? 0 : 1;
      }
    }
  }
  return {bad == 0, fmt("%g of %g pairs outside tolerance (%g not downstream)", double(bad), double(pairs),
                        double(zero_pairs)) +
                        fmt(", worst error/tolerance %.2f", worst)};
}

Outcome ice_sign() {
  double lowest = 1.0;
  std::size_t scenarios = 0;
  for (std::uint64_t s = 0; s < kIceScenarios; ++s) {
    const auto truth = world(s);
    const auto& fault = *truth.fault;
    const auto data = simulate_world(truth, 2000, mix_seed(s, 7));
    LearnOptions lo;
    lo.seed = s;
    const auto model = fit(learn_cpm(data, lo), data, 2);
    std::vector<RankedPaths> ranked;
    for (auto y : fault.faulty_objectives) ranked.push_back(rank_paths(model, y, 5, {200, mix_seed(s, y)}));
    const auto repairs = build_repair_set(ranked, fault.row, model);
    const auto thresholds = fault_thresholds(fault.row, fault.faulty_objectives);
    const auto verdicts =
        score_repairs(model, fault.row, repairs, fault.faulty_objectives, thresholds, {1000, mix_seed(s, 9)});
    std::size_t agree = 0;
    for (const auto& v : verdicts) {
      const auto out = frozen_outcome(truth, repair_configuration(v.repair, fault.row, truth.schema));
      agree += (v.ice > 0) == meets_thresholds(truth.schema, out, fault.faulty_objectives, thresholds) ? 1 : 0;
    }
    lowest = std::min(lowest, double(agree) / double(verdicts.size()));
    ++scenarios;
  }
  return {lowest >= kIceAgreement, fmt("lowest per-scenario agreement %.3f over %g scenarios", lowest, double(scenarios))};
}

Outcome debug_loop() {
  std::vector<double> loop, random;
  std::size_t fixed = 0;
  for (std::uint64_t s = 0; s < kDebugSeeds; ++s) {
    const auto truth = world(s);
    // The faulty objectives with their harness QoS targets, a sweep quantile
    // strictly better than the fault value.
    const auto& objectives = truth.fault->faulty_objectives;
    const auto all = truth.objectives();
    std::vector<double> targets;
    for (auto y : objectives) {
      targets.push_back(truth.fault->targets[static_cast<std::size_t>(std::find(all.begin(), all.end(), y) - all.begin())]);
    }
    SimulatedSut sut(truth, mix_seed(s, 77));
    LoopParams p;
    p.seed = s;
    p.initial_samples = kDebugInitial;
    p.targets = targets;
    Budget b;
    b.max_samples = kDebugBudget;
    const auto out = run_debug(sut, truth.fault->row, objectives, b, p);
    fixed += out.fixed ? 1 : 0;
    loop.push_back(static_cast<double>(out.samples_to_fix.value_or(kDebugBudget + 1)));
    SimulatedSut other(truth, mix_seed(s, 78));
    const auto base = random_search(other, objectives, targets, kDebugBudget, mix_seed(s, 79));
    random.push_back(static_cast<double>(base.samples_to_fix.value_or(kDebugBudget + 1)));
  }
  const double rate = double(fixed) / kDebugSeeds;
  const double ml = median(loop), mr = median(random);
  return {rate >= kDebugFixRate && ml < mr, fmt("fixed %.2f, median samples-to-fix %g vs random %g", rate, ml, mr)};
}

Outcome optimization() {
  std::size_t close = 0, tried = 0;
  bool fronts_ok = true;
  const std::vector<std::size_t> checkpoints{1, 5, 10, 25, 50, 100, 150, 200, 250};
  std::vector<std::vector<double>> hv(checkpoints.size());
  for (std::uint64_t s = 0; s < kOptSeeds; ++s) {
    const auto truth = world(s);
    if (configuration_count(truth.schema) > 4096) continue;
    ++tried;
    const auto y = truth.objectives().front();
    {
      SimulatedSut sut(truth, mix_seed(s, 77));
      LoopParams p;
      p.seed = s;
      const auto out = run_optimize(sut, {y}, Budget{}, p);
      const double best = oriented(truth.schema[y], expected_row(truth, exhaustive_optimum(truth, y))[y]);
      const double got = oriented(truth.schema[y], expected_row(truth, out.best_config)[y]);
      close += (got - best) <= kOptRelative * std::abs(best) ? 1 : 0;
    }

    // Two objectives: measured front and hypervolume error of the expected
    // vectors of the configurations measured so far.
    SimulatedSut sut(truth, mix_seed(s, 88));
    LoopParams p;
    p.seed = s;
    const auto objectives = truth.objectives();
    const auto out = run_optimize(sut, objectives, Budget{}, p);
    std::vector<Point> measured;
    for (const auto& r : out.pareto_front) {
      Point q;
      for (auto o : objectives) q.push_back(oriented(truth.schema[o], r[o]));
      measured.push_back(q);
    }
    fronts_ok = fronts_ok && nondominated(measured).size() == measured.size();

    const auto oracle = oracle_front(truth);
    std::vector<Point> every;
    for (const auto& c : all_configurations(truth.schema)) {
      const Row r = expected_row(truth, c);
      every.push_back({oriented(truth.schema[objectives[0]], r[objectives[0]]),
                       oriented(truth.schema[objectives[1]], r[objectives[1]])});
    }
    const auto ref = reference_point(every);
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      std::vector<Point> seen;
      for (std::size_t t = 0; t < std::min(checkpoints[i], out.trace.size()); ++t) {
        const Row r = expected_row(truth, out.trace[t].configuration);
        seen.push_back({oriented(truth.schema[objectives[0]], r[objectives[0]]),
                        oriented(truth.schema[objectives[1]], r[objectives[1]])});
      }
      hv[i].push_back(hypervolume_error(seen, oracle, ref));
    }
  }
  if (tried == 0) return {false, "no enumerable world"};
  bool trend = true;
  std::ostringstream os;
  double prev = 1e300;
  for (auto& h : hv) {
    const double m = median(h);
    trend = trend && m <= prev;
    prev = m;
    os << ' ' << fmt("%.3f", m);
  }
  const double rate = double(close) / double(tried);
  return {rate >= kOptRate && fronts_ok && trend,
          fmt("within 10%%: %.2f of %g worlds, fronts nondominated: %g, median HV error:", rate, double(tried),
              fronts_ok ? 1.0 : 0.0) +
              os.str()};
}

Outcome counterfactual_consistency() {
  std::size_t rows = 0, mismatches = 0;
  auto check_model = [&](const StructuralModel& model, const PerformanceDataset& data) {
    const auto& schema = data.schema();
    for (std::size_t r = 0; r < std::min<std::size_t>(data.rows(), 50); ++r) {
      const Row factual = data.row(r);
      const auto cf = counterfactual(model, factual, options_of(factual, schema), {100, r});
      for (const auto& w : cf.worlds) {
        for (auto o : schema.objectives()) mismatches += w[o] == factual[o] ? 0 : 1;
      }
      ++rows;
    }
  };
  {
    const auto schema = load_schema(CAUSALPERF_FIXTURES "/chain.schema.json");
    const auto data = load_csv(CAUSALPERF_FIXTURES "/chain.csv", schema);
    check_model(fit(learn_cpm(data, {}), data, 2), data);
  }
  for (std::uint64_t s = 0; s < 3; ++s) {
    WorldSpec spec;
    spec.seed = 900 + s;
    spec.nonlinear = s == 1;
    spec.hidden_confounders = s == 2 ? 1 : 0;
    const auto truth = generate_world(spec);
    const auto data = simulate_world(truth, 1500, s);
    check_model(fit(truth.graph, data, 2), data);
  }
  return {mismatches == 0, fmt("%g factual rows, %g objective mismatches", double(rows), double(mismatches))};
}

class CountingSut : public SystemUnderTest {
 public:
  explicit CountingSut(const GroundTruthWorld& w) : inner_(w, 1) {}
  const Schema& schema() const override { return inner_.schema(); }

 protected:
  Row do_measure(const Assignment& c) override { return inner_.measure(c); }

 private:
  SimulatedSut inner_;
};

Outcome zero_measurement() {
  const auto truth = world(11);
  CountingSut sut(truth);
  const auto data = initial_sample(sut, 300, 2);
  const std::size_t before = sut.calls();
  const auto model = fit(learn_cpm(data, {}), data, 2);
  const auto& fault = *truth.fault;
  std::vector<RankedPaths> ranked;
  for (auto y : fault.faulty_objectives) ranked.push_back(rank_paths(model, y, 5, {200, 1}));
  const auto repairs = build_repair_set(ranked, fault.row, model);
  const auto verdicts = score_repairs(model, fault.row, repairs, fault.faulty_objectives,
                                      fault_thresholds(fault.row, fault.faulty_objectives), {1000, 1});
  best_repair(verdicts, fault.row);
  const std::size_t during = sut.calls() - before;
  return {during == 0, fmt("%g repairs scored, %g measure() calls", double(repairs.size()), double(during))};
}

std::string pipeline(std::uint64_t seed) {
  const auto truth = world(42);
  const auto data = simulate_world(truth, 800, seed);
  LearnOptions lo;
  lo.seed = seed;
  const auto graph = learn_cpm(data, lo);
  const auto model = fit(graph, data, 2);
  nlohmann::json doc;
  doc["graph"] = to_json(graph);
  doc["model"] = to_json(model);
  for (auto y : truth.fault->faulty_objectives) {
    doc["paths"].push_back(to_json(rank_paths(model, y, 5, {200, seed}), model));
  }
  SimulatedSut sut(truth, seed);
  LoopParams p;
  p.seed = seed;
  const auto out = run_debug(sut, truth.fault->row, truth.fault->faulty_objectives, Budget{100}, p);
  std::ostringstream trace;
  write_trace(trace, out.trace, truth.schema);
  doc["trace"] = trace.str();
  doc["stop"] = out.stop_reason;
  return doc.dump();
}

Outcome determinism() {
  const auto a = pipeline(5);
  const auto b = pipeline(5);
  return {a == b, fmt("%g bytes, identical: %g", double(a.size()), a == b ? 1.0 : 0.0)};
}

}  // namespace

int main() {
  report("formula-fidelity", formulas);
  report("structure-recovery", structure);
  report("shd-monotonicity", shd_trend);
  report("ace-correctness", ace_oracle);
  report("ice-sign-oracle", ice_sign);
  report("debug-loop-efficacy", debug_loop);
  report("optimization", optimization);
  report("counterfactual-consistency", counterfactual_consistency);
  report("zero-measurement-ice", zero_measurement);
  report("determinism", determinism);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
