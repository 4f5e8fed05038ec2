#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "causalperf/entropy.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/structure.hpp"
#include "support.hpp"

using namespace causalperf;
using testing::error_of;

namespace {

std::set<std::pair<std::size_t, std::size_t>> adjacency(const MixedCausalGraph& g) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (const auto& e : g.edges()) out.insert({e.u, e.v});
  return out;
}

MixedCausalGraph circle_pair(const Schema& schema) {
  auto g = MixedCausalGraph::for_schema(schema);
  g.add_edge(0, 1, EdgeMark::Circle, EdgeMark::Circle);
  g.set_stage(GraphStage::PAG);
  return g;
}

double shannon(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0) h -= v * std::log2(v);
  }
  return h;
}

// Greedy coupling of conditional distributions, written independently of the
// library: repeatedly peel off the smallest of the per-distribution maxima.
double coupling_oracle(std::vector<std::vector<double>> dists) {
  for (auto& d : dists) {
    double s = 0;
    for (double v : d) s += v;
    for (double& v : d) v /= s;
  }
  std::vector<double> pieces;
  double left = 1.0;
  while (left > 1e-12) {
    double piece = 1.0;
    for (auto& d : dists) piece = std::min(piece, *std::max_element(d.begin(), d.end()));
    if (piece <= 1e-15) break;
    for (auto& d : dists) *std::max_element(d.begin(), d.end()) -= piece;
    pieces.push_back(piece);
    left -= piece;
  }
  return shannon(pieces);
}

// H(cause) + coupling entropy of p(effect | cause) on the empirical joint.
double factorization_entropy(const PerformanceDataset& ds, std::size_t cause, std::size_t effect) {
  std::map<int, std::map<int, double>> table;
  std::map<int, double> marginal;
  const double n = static_cast<double>(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const int c = static_cast<int>(ds(r, cause)), e = static_cast<int>(ds(r, effect));
    table[c][e] += 1.0 / n;
    marginal[c] += 1.0 / n;
  }
  std::set<int> effect_levels;
  for (auto& [c, row] : table) {
    for (auto& [e, p] : row) effect_levels.insert(e);
  }
  std::vector<std::vector<double>> conditionals;
  for (auto& [c, row] : table) {
    std::vector<double> d;
    for (int e : effect_levels) d.push_back(row.count(e) ? row[e] : 0.0);
    conditionals.push_back(d);
  }
  std::vector<double> m;
  for (auto& [c, p] : marginal) m.push_back(p);
  return shannon(m) + coupling_oracle(conditionals);
}

}  // namespace

TEST_SUITE("structure") {

TEST_CASE("entropy threshold") {
  CHECK(entropy_threshold(2.0, 1.0) == 0.8);
  CHECK(entropy_threshold(1.0, 2.0) == 0.8);
  CHECK(entropy_threshold(0.0, 3.0) == 0.0);
}

TEST_CASE("skeleton of two independent options and one objective") {
  Schema schema({testing::option("A", testing::range(3)), testing::option("B", testing::range(3)),
                 testing::objective("P")});
  Rng rng(1);
  std::uniform_int_distribution<int> level(0, 2);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<Row> rows;
  for (int i = 0; i < 2000; ++i) {
    const double a = level(rng), b = level(rng);
    rows.push_back({a, b, a - 2.0 * b + noise(rng)});
  }
  auto skel = learn_skeleton(PerformanceDataset(schema, rows), {});
  CHECK(adjacency(skel.graph) == std::set<std::pair<std::size_t, std::size_t>>{{0, 2}, {1, 2}});
  CHECK(skel.graph.stage() == GraphStage::Skeleton);
}

TEST_CASE("skeleton of a single variable is empty") {
  Schema schema({testing::event("E")});
  PerformanceDataset ds(schema, std::vector<Row>{{1}, {2}, {3}, {4}, {5}});
  CHECK(learn_skeleton(ds, {}).graph.edge_count() == 0);
}

TEST_CASE("chain skeleton drops the shortcut and records the separator") {
  auto ds = testing::chain_data(5000, 8);
  auto skel = learn_skeleton(ds, {});
  CHECK(adjacency(skel.graph) == std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}});
  REQUIRE(skel.sepsets.count({0, 2}) == 1);
  CHECK(skel.sepsets.at({0, 2}) == std::vector<std::size_t>{1});
}

TEST_CASE("collider is oriented from separating sets") {
  Schema schema({testing::event("A"), testing::event("B"), testing::event("C")});
  auto skel = MixedCausalGraph::for_schema(schema);
  skel.add_edge(0, 2, EdgeMark::Circle, EdgeMark::Circle);
  skel.add_edge(1, 2, EdgeMark::Circle, EdgeMark::Circle);
  auto pag = orient_pag(skel, {{{0, 1}, {}}});
  CHECK(pag.stage() == GraphStage::PAG);
  CHECK(pag.mark(0, 2) == EdgeMark::Arrow);
  CHECK(pag.mark(1, 2) == EdgeMark::Arrow);
  CHECK(pag.mark(2, 0) == EdgeMark::Circle);

  Schema with_options({testing::option("A", {0, 1}), testing::option("B", {0, 1}), testing::event("C")});
  auto skel2 = MixedCausalGraph::for_schema(with_options);
  skel2.add_edge(0, 2, EdgeMark::Circle, EdgeMark::Circle);
  skel2.add_edge(1, 2, EdgeMark::Circle, EdgeMark::Circle);
  auto pag2 = orient_pag(skel2, {{{0, 1}, {}}});
  CHECK(pag2.is_directed(0, 2));
  CHECK(pag2.is_directed(1, 2));
}

TEST_CASE("non-collider keeps circle marks") {
  Schema schema({testing::event("A"), testing::event("B"), testing::event("C")});
  auto skel = MixedCausalGraph::for_schema(schema);
  skel.add_edge(0, 2, EdgeMark::Circle, EdgeMark::Circle);
  skel.add_edge(1, 2, EdgeMark::Circle, EdgeMark::Circle);
  auto pag = orient_pag(skel, {{{0, 1}, {2}}});
  for (const auto& e : pag.edges()) {
    CHECK(e.mark_u == EdgeMark::Circle);
    CHECK(e.mark_v == EdgeMark::Circle);
  }
}

TEST_CASE("edges at options point out of the option") {
  Schema schema({testing::option("O", {0, 1}), testing::event("E"), testing::objective("P")});
  auto skel = MixedCausalGraph::for_schema(schema);
  skel.add_edge(0, 1, EdgeMark::Circle, EdgeMark::Circle);
  skel.add_edge(1, 2, EdgeMark::Circle, EdgeMark::Circle);
  auto pag = orient_pag(skel, {{{0, 2}, {1}}});
  CHECK(pag.is_directed(0, 1));
  // Objectives emit no directed edges, and R1 then orients E -> P.
  CHECK(pag.mark(1, 2) == EdgeMark::Arrow);
}

TEST_CASE("low-entropy common cause gives a bidirected edge") {
  Schema schema({testing::discrete_event("X", testing::range(4)), testing::discrete_event("Y", testing::range(4))});
  Rng rng(3);
  std::bernoulli_distribution coin;
  std::vector<Row> rows;
  for (int i = 0; i < 4000; ++i) {
    const int z = coin(rng);
    rows.push_back({double(2 * z + coin(rng)), double(2 * z + coin(rng))});
  }
  PerformanceDataset ds(schema, rows);
  auto result = resolve_entropic(circle_pair(schema), ds);
  REQUIRE(result.decisions.size() == 1);
  const auto& d = result.decisions[0];
  // H(X) = H(Y) = 2 bits, the latent needs 1 bit, threshold 1.6.
  CHECK(d.entropy_x == doctest::Approx(2.0).epsilon(0.01));
  CHECK(d.threshold == doctest::Approx(1.6).epsilon(0.01));
  CHECK(d.confounder_checked);
  CHECK(d.confounder_entropy == doctest::Approx(1.0).epsilon(0.02));
  CHECK(d.chosen == EntropicChoice::Bidirected);
  CHECK(result.graph.is_bidirected(0, 1));
}

TEST_CASE("low-entropy additive noise orients cause to effect") {
  Schema schema({testing::discrete_event("X", testing::range(8)), testing::discrete_event("Y", testing::range(9))});
  Rng rng(2);
  std::uniform_int_distribution<int> level(0, 7);
  std::bernoulli_distribution noise(0.1);
  std::vector<Row> rows;
  for (int i = 0; i < 20000; ++i) {
    const int x = level(rng);
    rows.push_back({double(x), double(x + noise(rng))});
  }
  PerformanceDataset ds(schema, rows);
  auto result = resolve_entropic(circle_pair(schema), ds);
  REQUIRE(result.decisions.size() == 1);
  const auto& d = result.decisions[0];
  CHECK(d.confounder_entropy >= d.threshold);
  CHECK(d.total_entropy_xy == doctest::Approx(factorization_entropy(ds, 0, 1)).epsilon(1e-9));
  CHECK(d.total_entropy_yx == doctest::Approx(factorization_entropy(ds, 1, 0)).epsilon(1e-9));
  CHECK(d.total_entropy_xy < d.total_entropy_yx);
  CHECK(d.chosen == EntropicChoice::XcausesY);
  CHECK(result.graph.is_directed(0, 1));
}

TEST_CASE("entropic decisions respect the threshold rule") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    WorldSpec spec;
    spec.seed = 40 + seed;
    spec.hidden_confounders = 1;
    auto world = generate_world(spec);
    auto ds = simulate_world(world, 800, seed);
    LearnOptions options;
    options.seed = seed;
    auto result = learn_cpm_detailed(ds, options);
    for (const auto& d : result.decisions) {
      if (d.confounder_checked && !d.forced) {
        CHECK((d.chosen == EntropicChoice::Bidirected) == (d.confounder_entropy < d.threshold));
      }
      CHECK(d.threshold == doctest::Approx(entropy_threshold(d.entropy_x, d.entropy_y)));
    }
    for (const auto& e : result.graph.edges()) {
      CHECK(e.mark_u != EdgeMark::Circle);
      CHECK(e.mark_v != EdgeMark::Circle);
    }
  }
}

TEST_CASE("learned graphs satisfy every ADMG invariant") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    WorldSpec spec;
    spec.seed = 100 + seed;
    spec.nonlinear = seed % 2 == 1;
    spec.hidden_confounders = seed % 3;
    auto world = generate_world(spec);
    auto ds = simulate_world(world, 300 + 100 * seed, seed);
    LearnOptions options;
    options.seed = seed;
    auto g = learn_cpm(ds, options);
    CHECK(g.stage() == GraphStage::ADMG);
    CHECK(g.violations().empty());
  }
}

TEST_CASE("learning is deterministic") {
  WorldSpec spec;
  spec.seed = 77;
  auto world = generate_world(spec);
  auto ds = simulate_world(world, 1000, 1);
  LearnOptions options;
  options.seed = 9;
  CHECK(learn_cpm(ds, options) == learn_cpm(ds, options));
}

TEST_CASE("skeleton edges grow with alpha") {
  WorldSpec spec;
  spec.seed = 5;
  auto world = generate_world(spec);
  auto ds = simulate_world(world, 400, 3);
  std::set<std::pair<std::size_t, std::size_t>> previous;
  bool first = true;
  for (double alpha : {0.001, 0.01, 0.05, 0.2, 0.5}) {
    LearnOptions options;
    options.alpha = alpha;
    auto edges = adjacency(learn_skeleton(ds, options).graph);
    if (!first) {
      for (const auto& e : previous) CHECK(edges.count(e) == 1);
    }
    previous = edges;
    first = false;
  }
}

TEST_CASE("depth limit restricts conditioning sets") {
  auto ds = testing::chain_data(3000, 4);
  LearnOptions shallow;
  shallow.max_depth = 0;
  CHECK(learn_skeleton(ds, shallow).graph.edge_count() == 3);
  CHECK(learn_skeleton(ds, {}).graph.edge_count() == 2);
}

TEST_CASE("incremental update") {
  WorldSpec spec;
  spec.seed = 12;
  auto world = generate_world(spec);
  auto old_rows = simulate_world(world, 600, 1);
  LearnOptions options;
  options.seed = 2;
  auto g = learn_cpm(old_rows, options);

  auto none = old_rows.select({});
  CHECK(incremental_update(g, old_rows, none, options) == g);

  auto fresh = simulate_world(world, 400, 2);
  auto warm = incremental_update(g, old_rows, fresh, options);
  auto cold = learn_cpm(old_rows.append(fresh), options);
  CHECK(adjacency(warm) == adjacency(cold));
  CHECK(warm == cold);
  CHECK(warm.violations().empty());
}

TEST_CASE("learning errors") {
  Schema schema({testing::event("A"), testing::event("B")});
  PerformanceDataset empty(schema, std::vector<Row>{});
  CHECK(error_of([&] { learn_cpm(empty, {}); }) == ErrorCode::EmptyDataset);
  auto ds = testing::chain_data(100, 1);
  auto skel = learn_skeleton(ds, {}).graph;
  CHECK(error_of([&] { resolve_entropic(skel, ds); }) == ErrorCode::InvalidArgument);
}

}  // TEST_SUITE
