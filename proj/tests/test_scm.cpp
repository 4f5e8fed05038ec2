#include <doctest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "causalperf/citest.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/repair.hpp"
#include "causalperf/scm.hpp"
#include "support.hpp"

using namespace causalperf;
using testing::error_of;

namespace {

// X (option, 0..4) -> Z (event) with Z = 2X + noise.
struct Pair {
  Schema schema{{testing::option("X", testing::range(5)), testing::event("Z")}};
  MixedCausalGraph graph = testing::dag(schema, {{"X", "Z"}});

  PerformanceDataset data(std::size_t n, double noise_sd, std::uint64_t seed) const {
    Rng rng(seed);
    std::uniform_int_distribution<int> level(0, 4);
    std::normal_distribution<double> noise(0.0, noise_sd);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = level(rng);
      rows.push_back({x, 2.0 * x + (noise_sd > 0 ? noise(rng) : 0.0)});
    }
    return PerformanceDataset(schema, rows);
  }
};

}  // namespace

TEST_SUITE("scm") {

TEST_CASE("roots keep their empirical marginal") {
  Pair p;
  auto ds = p.data(200, 0.3, 1);
  auto model = fit(p.graph, ds, 1);
  CHECK(model.vertex(0).root);
  CHECK(model.vertex(0).bank == ds.column(0));
  CHECK_FALSE(model.vertex(1).root);
  CHECK(model.vertex(1).bank.size() == 200);
}

TEST_CASE("exact linear data recovers intercept and slope") {
  Schema schema({testing::option("X", testing::range(10)), testing::event("Y")});
  std::vector<Row> rows;
  for (int i = 0; i < 30; ++i) rows.push_back({double(i % 10), 3.0 * (i % 10) + 2.0});
  auto model = fit(testing::dag(schema, {{"X", "Y"}}), PerformanceDataset(schema, rows), 1);
  const auto raw = model.vertex(1).mechanism.raw_coefficients();
  REQUIRE(raw.size() == 2);
  CHECK(std::abs(raw(0) - 2.0) < 1e-9);
  CHECK(std::abs(raw(1) - 3.0) < 1e-9);
}

TEST_CASE("noiseless square recovers the quadratic coefficient") {
  Schema schema({testing::option("X", testing::range(9)), testing::event("Y")});
  std::vector<Row> rows;
  for (int i = 0; i < 27; ++i) {
    const double x = i % 9;
    rows.push_back({x, x * x});
  }
  auto model = fit(testing::dag(schema, {{"X", "Y"}}), PerformanceDataset(schema, rows), 2);
  const auto& mech = model.vertex(1).mechanism;
  const auto raw = mech.raw_coefficients();
  REQUIRE(mech.terms.size() == 3);
  CHECK(mech.terms[2].size() == 2);
  CHECK(std::abs(raw(2) - 1.0) < 1e-6);
  CHECK(std::abs(raw(1)) < 1e-6);
}

TEST_CASE("categorical parents are one-hot expanded") {
  Variable mode;
  mode.name = "Mode";
  mode.kind = VariableKind::Option;
  mode.intervenable = true;
  mode.domain = CategoricalDomain{{"a", "b", "c"}};
  Schema schema({mode, testing::event("Y")});
  std::vector<Row> rows;
  const double effect[] = {1.0, 5.0, -2.0};
  for (int i = 0; i < 30; ++i) rows.push_back({double(i % 3), effect[i % 3]});
  auto model = fit(testing::dag(schema, {{"Mode", "Y"}}), PerformanceDataset(schema, rows), 2);
  for (int level = 0; level < 3; ++level) {
    CHECK(model.vertex(1).mechanism.evaluate({double(level), 0.0}) == doctest::Approx(effect[level]));
  }
}

TEST_CASE("too few rows fall back to degree one with a warning") {
  Schema schema({testing::option("A", testing::range(3)), testing::option("B", testing::range(3)),
                 testing::event("Y")});
  std::vector<Row> rows{{0, 0, 1}, {1, 2, 2}, {2, 1, 4}, {0, 2, 3}, {1, 0, 2}};
  auto model = fit(testing::dag(schema, {{"A", "Y"}, {"B", "Y"}}), PerformanceDataset(schema, rows), 2);
  CHECK(model.vertex(2).mechanism.degree == 1);
  REQUIRE(model.warnings().size() == 1);
  CHECK(model.warnings()[0].find("UnderdeterminedFit") == 0);

  PerformanceDataset two(schema, std::vector<Row>{{0, 0, 1}, {1, 2, 2}});
  CHECK(error_of([&] { fit(testing::dag(schema, {{"A", "Y"}, {"B", "Y"}}), two, 2); }) ==
        ErrorCode::UnderdeterminedFit);
}

TEST_CASE("simulate basics") {
  Pair p;
  auto model = fit(p.graph, p.data(500, 0.5, 2), 1);
  CHECK(simulate(model, 0, {}, 1).rows() == 0);
  CHECK(error_of([&] { simulate(model, 5, {{1, 3.0}}, 1); }) == ErrorCode::NotIntervenable);

  auto a = simulate(model, 50, {}, 7), b = simulate(model, 50, {}, 7);
  CHECK(a.values() == b.values());
}

TEST_CASE("interventional mean matches the analytic expectation") {
  Pair p;
  const double sd = 0.5;
  auto model = fit(p.graph, p.data(4000, sd, 3), 1);
  const std::size_t n = 10000;
  auto sim = simulate(model, n, {{0, 3.0}}, 4);
  double mean = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    CHECK(sim(r, 0) == 3.0);
    mean += sim(r, 1) / n;
  }
  CHECK(std::abs(mean - 6.0) <= 3.0 * sd / std::sqrt(double(n)) + 0.02);
}

TEST_CASE("zero-noise model with every root pinned is deterministic") {
  Pair p;
  auto model = fit(p.graph, p.data(50, 0.0, 5), 1);
  auto sim = simulate(model, 20, {{0, 2.0}}, 6);
  for (std::size_t r = 0; r < sim.rows(); ++r) CHECK(sim(r, 1) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("simulated values respect domains") {
  Schema schema({testing::option("X", testing::range(4)), testing::discrete_event("D", {0, 2, 5}),
                 testing::objective("P")});
  Rng rng(8);
  std::uniform_int_distribution<int> level(0, 3);
  std::vector<Row> rows;
  for (int i = 0; i < 200; ++i) {
    const double x = level(rng);
    const double d = x < 2 ? 0 : (x < 3 ? 2 : 5);
    rows.push_back({x, d, d + 0.1 * x});
  }
  auto model = fit(testing::dag(schema, {{"X", "D"}, {"D", "P"}}), PerformanceDataset(schema, rows), 2);
  auto sim = simulate(model, 500, {}, 9);
  for (std::size_t r = 0; r < sim.rows(); ++r) CHECK(schema[1].contains(sim(r, 1)));
}

TEST_CASE("intervention cuts dependence on non-descendants") {
  // X -> E -> Y. Pinning E (forced, per-row random value) leaves E
  // independent of its ancestor X, which it strongly depends on otherwise.
  Schema schema({testing::option("X", testing::range(4)), testing::event("E"), testing::objective("Y")});
  Rng rng(10);
  std::uniform_int_distribution<int> level(0, 3);
  std::normal_distribution<double> noise;
  std::vector<Row> rows;
  for (int i = 0; i < 600; ++i) {
    const double x = level(rng), e = 2.0 * x + noise(rng);
    rows.push_back({x, e, e + noise(rng)});
  }
  auto model = fit(testing::dag(schema, {{"X", "E"}, {"E", "Y"}}), PerformanceDataset(schema, rows), 1);
  CHECK_FALSE(fisher_z(simulate(model, 5000, {}, 1), 0, 1, {}, 0.05).independent);

  int independent = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng sim_rng(seed);
    std::uniform_real_distribution<double> pin(-2.0, 8.0);
    std::vector<Row> sim;
    for (int i = 0; i < 5000; ++i) {
      const auto exo = model.draw_exogenous(sim_rng);
      sim.push_back(model.propagate({{1, pin(sim_rng)}}, exo, true));
    }
    independent += fisher_z(PerformanceDataset(schema, sim), 0, 1, {}, 0.05).independent;
  }
  CHECK(independent >= 18);
}

TEST_CASE("counterfactual consistency and deterministic propagation") {
  Pair p;
  auto model = fit(p.graph, p.data(100, 0.0, 11), 1);
  const Row factual{1.0, 2.0};
  auto same = counterfactual(model, factual, {{0, 1.0}});
  CHECK(same.point_identified);
  CHECK(same.mean == factual);
  auto flipped = counterfactual(model, factual, {{0, 2.0}});
  CHECK(flipped.point_identified);
  CHECK(flipped.mean[1] == doctest::Approx(4.0).epsilon(1e-12));

  auto noisy = fit(p.graph, p.data(500, 0.5, 12), 1);
  const Row observed{3.0, 6.7};
  CHECK(counterfactual(noisy, observed, {{0, 3.0}}).mean == observed);
  auto moved = counterfactual(noisy, observed, {{0, 1.0}});
  // The abducted residual 6.7 - f(3) carries over to the new world.
  const double residual = 6.7 - noisy.vertex(1).mechanism.evaluate(observed);
  CHECK(moved.mean[1] == doctest::Approx(noisy.vertex(1).mechanism.evaluate({1.0, 0.0}) + residual));
}

TEST_CASE("unobserved values are drawn from the banks") {
  Pair p;
  auto model = fit(p.graph, p.data(500, 0.5, 13), 1);
  const Row partial{2.0, std::nan("")};
  CounterfactualOptions options;
  options.n_mc = 400;
  options.seed = 3;
  auto cf = counterfactual(model, partial, {{0, 4.0}}, options);
  CHECK_FALSE(cf.point_identified);
  CHECK(cf.worlds.size() == 400);
  CHECK(cf.mean[1] == doctest::Approx(8.0).epsilon(0.02));
  CHECK(error_of([&] { counterfactual(model, {std::nan(""), 1.0}, {}); }) == ErrorCode::InvalidArgument);
  CHECK(error_of([&] { counterfactual(model, partial, {{1, 1.0}}); }) == ErrorCode::NotIntervenable);
}

TEST_CASE("categorical vertices fall back to interventional draws") {
  Variable level;
  level.name = "Level";
  level.kind = VariableKind::SystemEvent;
  level.domain = CategoricalDomain{{"low", "high"}};
  Schema schema({testing::option("X", testing::range(2)), level});
  std::vector<Row> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({double(i % 2), double((i % 2) ^ (i % 7 == 0))});
  auto model = fit(testing::dag(schema, {{"X", "Level"}}), PerformanceDataset(schema, rows), 1);
  auto cf = counterfactual(model, {0.0, 0.0}, {{0, 1.0}});
  CHECK(cf.interventional_fallback);
  CHECK(cf.fallback_vertices == std::vector<std::size_t>{1});
}

TEST_CASE("fix probability agrees with frozen-noise re-simulation") {
  std::size_t agree = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldSpec spec;
    spec.seed = 300 + seed;
    auto world = generate_world(spec);
    REQUIRE(world.fault.has_value());
    const auto& fault = *world.fault;
    auto model = fit(world.graph, simulate_world(world, 5000, seed), 1);
    const auto thresholds = fault_thresholds(fault.row, fault.faulty_objectives);
    for (auto o : world.schema.options()) {
      for (double value : world.schema[o].levels()) {
        if (value == fault.row[o]) continue;
        Assignment change{{o, value}};
        CounterfactualOptions options;
        options.seed = seed;
        auto cf = counterfactual(model, fault.row, change, options);
        double p_fix = 0.0;
        for (const auto& w : cf.worlds) {
          p_fix += meets_thresholds(world.schema, w, fault.faulty_objectives, thresholds) ? 1.0 : 0.0;
        }
        p_fix /= static_cast<double>(cf.worlds.size());
        auto config = options_of(fault.row, world.schema);
        config[o] = value;
        const double truth =
            meets_thresholds(world.schema, frozen_outcome(world, config), fault.faulty_objectives, thresholds) ? 1.0
                                                                                                               : 0.0;
        agree += std::abs(p_fix - truth) <= 0.05;
        ++total;
      }
    }
  }
  CHECK(double(agree) >= 0.9 * double(total));
}

TEST_CASE("model json round trip") {
  WorldSpec spec;
  spec.seed = 21;
  auto world = generate_world(spec);
  auto model = fit(world.graph, simulate_world(world, 400, 1), 2);
  const auto doc = to_json(model);
  auto back = model_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(to_json(back) == doc);
  auto a = simulate(model, 30, {}, 5), b = simulate(back, 30, {}, 5);
  CHECK(a.values() == b.values());
}

TEST_CASE("fit preconditions") {
  Pair p;
  auto ds = p.data(20, 0.1, 1);
  CHECK(error_of([&] { fit(p.graph, ds, 0); }) == ErrorCode::InvalidArgument);
  auto pag = p.graph;
  pag.set_stage(GraphStage::PAG);
  CHECK(error_of([&] { fit(pag, ds, 1); }) == ErrorCode::InvalidArgument);
  CHECK(error_of([&] { fit(p.graph, ds.select({}), 1); }) == ErrorCode::EmptyDataset);
}

}  // TEST_SUITE
