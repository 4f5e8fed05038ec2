#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "causalperf/effects.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/scm.hpp"
#include "support.hpp"

using namespace causalperf;
using testing::error_of;

namespace {

// Binary options A, B, C and an unrelated option U; P = 5.5A + 3B + 1.5C + noise.
struct Shares {
  Schema schema{{testing::option("A", {0, 1}), testing::option("B", {0, 1}), testing::option("C", {0, 1}),
                 testing::option("U", {0, 1}), testing::objective("P")}};
  MixedCausalGraph graph = testing::dag(schema, {{"A", "P"}, {"B", "P"}, {"C", "P"}});

  StructuralModel model(std::uint64_t seed = 1) const {
    Rng rng(seed);
    std::bernoulli_distribution coin;
    std::normal_distribution<double> noise(0.0, 0.2);
    std::vector<Row> rows;
    for (int i = 0; i < 2000; ++i) {
      const double a = coin(rng), b = coin(rng), c = coin(rng), u = coin(rng);
      rows.push_back({a, b, c, u, 5.5 * a + 3.0 * b + 1.5 * c + noise(rng)});
    }
    return fit(graph, PerformanceDataset(schema, rows), 1);
  }
};

bool valid_path(const MixedCausalGraph& g, const CausalPath& p, std::size_t objective) {
  if (p.vertices.empty() || p.vertices.back() != objective) return false;
  if (!g.parents(p.vertices.front()).empty()) return false;
  for (std::size_t i = 0; i + 1 < p.vertices.size(); ++i) {
    if (!g.is_directed(p.vertices[i], p.vertices[i + 1])) return false;
  }
  return p.edge_ace.empty() || p.edge_ace.size() + 1 == p.vertices.size();
}

}  // namespace

TEST_SUITE("effects") {

TEST_CASE("ace of a doubling mechanism is two") {
  Schema schema({testing::option("X", {0, 1}), testing::event("Z")});
  Rng rng(4);
  std::bernoulli_distribution coin;
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<Row> rows;
  for (int i = 0; i < 1000; ++i) {
    const double x = coin(rng);
    rows.push_back({x, 2.0 * x + noise(rng)});
  }
  auto model = fit(testing::dag(schema, {{"X", "Z"}}), PerformanceDataset(schema, rows), 1);
  auto est = ace(model, 0, 1, {10000, 3});
  CHECK(est.downstream);
  CHECK(std::abs(est.value - 2.0) <= std::max(0.05, 3.0 * est.std_error) + 0.05);
}

TEST_CASE("single level and no route give exactly zero") {
  Schema schema({testing::option("X", {3}), testing::option("Y", {0, 1}), testing::objective("P")});
  std::vector<Row> rows;
  for (int i = 0; i < 40; ++i) rows.push_back({3, double(i % 2), double(i % 2) * 2.0 + 0.01 * (i % 5)});
  auto model = fit(testing::dag(schema, {{"X", "P"}, {"Y", "P"}}), PerformanceDataset(schema, rows), 1);
  CHECK(ace(model, 0, 2).value == 0.0);

  Shares s;
  auto m = s.model();
  auto unrelated = ace(m, 3, 4);
  CHECK_FALSE(unrelated.downstream);
  CHECK(unrelated.value == 0.0);
  CHECK(unrelated.std_error == 0.0);
}

TEST_CASE("ace contrasts consecutive levels") {
  // Z = X^2 on levels {0, 1, 3}: contrasts 1 and 8, mean 4.5.
  Schema schema({testing::option("X", {0, 1, 3}), testing::event("Z")});
  std::vector<Row> rows;
  for (int i = 0; i < 30; ++i) {
    const double x = std::vector<double>{0, 1, 3}[i % 3];
    rows.push_back({x, x * x});
  }
  auto model = fit(testing::dag(schema, {{"X", "Z"}}), PerformanceDataset(schema, rows), 2);
  CHECK(ace(model, 0, 1, {200, 1}).value == doctest::Approx(4.5).epsilon(1e-9));
}

TEST_CASE("continuous causes use an eight point grid") {
  Variable x = testing::option("X", {});
  x.domain = ContinuousDomain{0.0, 7.0};
  Schema schema({x, testing::event("Z")});
  std::vector<Row> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({0.35 * i, 1.0 + 0.35 * i});
  auto model = fit(testing::dag(schema, {{"X", "Z"}}), PerformanceDataset(schema, rows), 1);
  const auto grid = cause_grid(model, 0);
  REQUIRE(grid.size() == 8);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 7.0);
  CHECK(grid[1] == doctest::Approx(1.0));
  CHECK(ace(model, 0, 1).value == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("largest share option is ranked first") {
  Shares s;
  auto model = s.model();
  auto ranked = rank_paths(model, 4, 5, {2000, 1});
  REQUIRE(ranked.option_effects.size() == 4);
  CHECK(ranked.option_effects[0].share == doctest::Approx(0.55).epsilon(0.03));
  CHECK(ranked.option_effects[3].share == 0.0);
  double total = 0.0;
  for (const auto& e : ranked.option_effects) total += e.share;
  CHECK(total == doctest::Approx(1.0));
  auto causes = root_causes({ranked});
  REQUIRE(causes.size() == 3);
  CHECK(causes[0].option == 0);
  CHECK(causes[1].option == 1);
  CHECK(causes[2].option == 2);
  CHECK(ranked.paths.front().vertices.front() == 0);
}

TEST_CASE("path extraction") {
  Schema diamond({testing::option("O", {0, 1}), testing::event("A"), testing::event("B"), testing::objective("P")});
  auto g = testing::dag(diamond, {{"O", "A"}, {"O", "B"}, {"A", "P"}, {"B", "P"}});
  auto paths = extract_paths(g, 3);
  CHECK(paths.size() == 2);
  for (const auto& p : paths) CHECK(valid_path(g, p, 3));

  Schema lonely({testing::option("O", {0, 1}), testing::objective("P")});
  CHECK(extract_paths(testing::dag(lonely, {}), 1).empty());

  auto bi = testing::dag(diamond, {{"O", "A"}, {"A", "P"}});
  bi.add_edge(2, 3, EdgeMark::Arrow, EdgeMark::Arrow);
  CHECK(extract_paths(bi, 3).size() == 1);
}

TEST_CASE("case-study shaped graph yields the batch size path") {
  Schema schema({testing::option("Batch Size", {1, 2, 4}), testing::option("CPU Frequency", {1, 2}),
                 testing::option("Swap Memory", {0, 1}), testing::event("Cache Misses"),
                 testing::event("Context Switches"), testing::objective("FPS", ObjectiveDirection::Maximize),
                 testing::objective("Energy")});
  auto g = testing::dag(schema, {{"Batch Size", "Cache Misses"},
                                 {"CPU Frequency", "Cache Misses"},
                                 {"Swap Memory", "Context Switches"},
                                 {"Cache Misses", "FPS"},
                                 {"Context Switches", "FPS"},
                                 {"CPU Frequency", "Energy"},
                                 {"Cache Misses", "Energy"}});
  auto paths = extract_paths(g, schema.index_of("FPS"));
  const std::vector<std::size_t> wanted{0, 3, 5};
  CHECK(std::any_of(paths.begin(), paths.end(), [&](const CausalPath& p) { return p.vertices == wanted; }));
  CHECK(paths.size() == 3);
  for (const auto& p : paths) CHECK(valid_path(g, p, 5));
}

TEST_CASE("ranking is deterministic with prefix top-K and mean edge ACE") {
  WorldSpec spec;
  spec.seed = 31;
  auto world = generate_world(spec);
  auto model = fit(world.graph, simulate_world(world, 1500, 1), 2);
  for (auto y : world.objectives()) {
    auto a = rank_paths(model, y, 3, {300, 7});
    auto b = rank_paths(model, y, 3, {300, 7});
    REQUIRE(a.paths.size() == b.paths.size());
    for (std::size_t i = 0; i < a.paths.size(); ++i) {
      CHECK(a.paths[i].vertices == b.paths[i].vertices);
      CHECK(a.paths[i].path_ace == b.paths[i].path_ace);
      CHECK(valid_path(model.graph(), a.paths[i], y));
      double mean = 0.0;
      for (double e : a.paths[i].edge_ace) mean += std::abs(e) / static_cast<double>(a.paths[i].edge_ace.size());
      CHECK(a.paths[i].path_ace == doctest::Approx(mean));
      if (i > 0) CHECK(a.paths[i - 1].path_ace >= a.paths[i].path_ace);
    }
    const auto top = a.top();
    CHECK(top.size() == std::min<std::size_t>(3, a.paths.size()));
    for (std::size_t i = 0; i < top.size(); ++i) CHECK(top[i].vertices == a.paths[i].vertices);
  }
}

TEST_CASE("root causes grow with K and stay within the options") {
  WorldSpec spec;
  spec.seed = 32;
  auto world = generate_world(spec);
  auto model = fit(world.graph, simulate_world(world, 1500, 2), 1);
  std::size_t previous = 0;
  for (std::size_t k = 1; k <= 9; k += 2) {
    std::vector<RankedPaths> ranked;
    for (auto y : world.objectives()) ranked.push_back(rank_paths(model, y, k, {200, 3}));
    auto causes = root_causes(ranked);
    CHECK(causes.size() >= previous);
    CHECK(causes.size() <= world.schema.options().size());
    for (const auto& c : causes) CHECK(world.schema[c.option].kind == VariableKind::Option);
    for (std::size_t i = 1; i < causes.size(); ++i) CHECK(causes[i - 1].score >= causes[i].score);

    // Multi-objective root causes are the union of per-objective ones.
    std::set<std::size_t> uni;
    for (const auto& r : ranked) {
      for (const auto& c : root_causes({r})) uni.insert(c.option);
    }
    std::set<std::size_t> got;
    for (const auto& c : causes) got.insert(c.option);
    CHECK(got == uni);
    previous = causes.size();
  }
}

TEST_CASE("injected root cause lies on a top-3 path") {
  int hits = 0, scenarios = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorldSpec spec;
    spec.seed = 500 + seed;
    auto world = generate_world(spec);
    const auto& fault = *world.fault;
    auto model = fit(world.graph, simulate_world(world, 2000, seed), 1);
    bool hit = false;
    for (auto y : fault.faulty_objectives) {
      for (const auto& p : rank_paths(model, y, 3, {500, seed}).top()) {
        for (auto v : p.vertices) {
          hit = hit || std::find(fault.root_causes.begin(), fault.root_causes.end(), v) != fault.root_causes.end();
        }
      }
    }
    hits += hit;
    ++scenarios;
  }
  CHECK(hits >= 18);
  CHECK(scenarios == 20);
}

TEST_CASE("ranked path report") {
  Shares s;
  auto model = s.model();
  auto ranked = rank_paths(model, 4, 2, {500, 1});
  const auto doc = to_json(ranked, model);
  CHECK(doc["objective"] == "P");
  CHECK(doc["k"] == 2);
  REQUIRE(doc["paths"].size() == 3);
  CHECK(doc["paths"][0]["vertices"][0] == "A");
  CHECK(doc["paths"][1]["top_k"] == true);
  CHECK(doc["paths"][2]["top_k"] == false);
  CHECK(doc["ace_table"]["options"].size() == 4);
}

}  // TEST_SUITE
