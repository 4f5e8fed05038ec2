#include "causalperf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"
#include "causalperf/repair.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

constexpr std::size_t kSampledSweep = 4096;
constexpr std::size_t kMinSweep = 2048;
constexpr std::size_t kOracleMc = 100000;
constexpr std::size_t kWorldAttempts = 200;
constexpr std::size_t kFaithfulnessDepth = 3;

std::string vertex_name(char prefix, std::size_t i, std::size_t count) {
  std::ostringstream os;
  os << prefix << std::setw(count >= 10 ? 2 : 1) << std::setfill('0') << (i + 1);
  return os.str();
}

double coefficient(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution negative(0.5);
  const double c = mag(rng);
  return negative(rng) ? -c : c;
}

std::vector<Assignment> sweep_configurations(const GroundTruthWorld& world, std::uint64_t seed) {
  if (world.enumerable) {
    // Small spaces are swept with replicates so the 99th percentile has a tail.
    const auto all = all_configurations(world.schema);
    const std::size_t reps = (kMinSweep + all.size() - 1) / all.size();
    std::vector<Assignment> out;
    for (std::size_t r = 0; r < reps; ++r) out.insert(out.end(), all.begin(), all.end());
    return out;
  }
  Rng rng(seed);
  std::vector<Assignment> out;
  for (std::size_t i = 0; i < kSampledSweep; ++i) out.push_back(random_configuration(world.schema, rng));
  return out;
}

// Index of the first hidden-confounder slot in a noise vector.
std::size_t latent_base(const GroundTruthWorld& world) { return world.schema.size(); }

// Every objective back below its tail threshold.
bool unfaulted(const GroundTruthWorld& world, const Row& row) {
  const auto& f = *world.fault;
  const auto objectives = world.objectives();
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const auto& var = world.schema[objectives[i]];
    const double v = oriented(var, row[objectives[i]]);
    if (!(v < oriented(var, f.thresholds[i]))) return false;
  }
  return true;
}

// Fills faulty objectives, QoS targets, root causes and best repair of
// world.fault; false when no reassignment un-faults the row.
bool complete_fault(GroundTruthWorld& world, const std::vector<std::vector<double>>& sweep) {
  const auto& schema = world.schema;
  const auto objectives = world.objectives();
  auto& fault = *world.fault;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const auto& var = schema[objectives[i]];
    if (!(oriented(var, fault.row[objectives[i]]) < oriented(var, fault.thresholds[i]))) {
      fault.faulty_objectives.push_back(objectives[i]);
    }
  }

  // Root causes: smallest option subset whose best frozen-noise reassignment
  // un-faults the row.
  const auto options = schema.options();
  const Assignment fault_config = options_of(fault.row, schema);
  std::optional<Assignment> best;
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t best_size = options.size() + 1;
  std::vector<Assignment> candidates;
  if (world.enumerable) {
    candidates = all_configurations(schema);
  } else {
    // Too many configurations: only single and pairwise reassignments.
    for (std::size_t i = 0; i < options.size(); ++i) {
      for (double a : schema[options[i]].levels()) {
        Assignment c = fault_config;
        c[options[i]] = a;
        candidates.push_back(c);
        for (std::size_t j = i + 1; j < options.size(); ++j) {
          for (double b : schema[options[j]].levels()) {
            Assignment d = c;
            d[options[j]] = b;
            candidates.push_back(d);
          }
        }
      }
    }
  }
  for (const auto& c : candidates) {
    std::size_t changed = 0;
    for (auto o : options) changed += c.at(o) != fault_config.at(o) ? 1 : 0;
    if (changed == 0 || changed > best_size) continue;
    const Row out = frozen_outcome(world, c);
    if (!unfaulted(world, out)) continue;
    const double s = fault_score(world, out);
    if (changed < best_size || s < best_score) {
      best_size = changed;
      best_score = s;
      best = c;
    }
  }
  if (!best) return false;
  for (auto o : options) {
    if (best->at(o) != fault_config.at(o)) {
      fault.root_causes.push_back(o);
      fault.best_repair[o] = best->at(o);
    }
  }

  // QoS targets on the faulty objectives: the smallest common quantile of
  // the sweep measurements met jointly by the requested fraction of rows.
  // Other objectives keep the fault value.
  std::vector<std::size_t> faulty_pos;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    if (std::find(fault.faulty_objectives.begin(), fault.faulty_objectives.end(), objectives[i]) !=
        fault.faulty_objectives.end()) {
      faulty_pos.push_back(i);
    }
  }
  const std::size_t n = sweep.front().size();
  std::vector<double> oriented_targets(objectives.size());
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    oriented_targets[i] = oriented(schema[objectives[i]], fault.row[objectives[i]]);
  }
  for (int step = 1; step <= 100; ++step) {
    const double q = step / 100.0;
    for (auto i : faulty_pos) oriented_targets[i] = nearest_rank_percentile(sweep[i], q);
    std::size_t meeting = 0;
    for (std::size_t c = 0; c < n; ++c) {
      bool all = true;
      for (std::size_t k = 0; k < faulty_pos.size() && all; ++k) {
        all = sweep[faulty_pos[k]][c] < oriented_targets[faulty_pos[k]];
      }
      meeting += all ? 1 : 0;
    }
    if (meeting > 0 && static_cast<double>(meeting) >= world.spec.target_fraction * static_cast<double>(n)) break;
  }
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    // oriented() is its own inverse.
    fault.targets.push_back(oriented(schema[objectives[i]], oriented_targets[i]));
  }
  return true;
}

// Shift each objective so the sweep minimum sits at half the sweep range.
void shift_objectives(GroundTruthWorld& world) {
  const auto configs = sweep_configurations(world, mix_seed(world.spec.seed, 2));
  for (auto y : world.schema.objectives()) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : configs) {
      const double v = expected_row(world, c)[y];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double range = hi - lo;
    world.mechanisms[y].intercept = (range > 0.0 ? 0.5 * range : 1.0) - lo;
  }
}

void inject_fault(GroundTruthWorld& world) {
  const auto& schema = world.schema;
  const auto objectives = world.objectives();
  const auto configs = sweep_configurations(world, mix_seed(world.spec.seed, 2));
  Rng rng(mix_seed(world.spec.seed, 3));
  std::vector<Row> rows;
  std::vector<std::vector<double>> noises;
  for (const auto& c : configs) {
    noises.push_back(draw_noise(world, rng));
    rows.push_back(evaluate(world, c, noises.back()));
  }
  const PerformanceDataset sweep(schema, rows);

  InjectedFault fault;
  std::vector<std::size_t> hits(rows.size(), 0);
  for (auto o : objectives) {
    fault.thresholds.push_back(fault_threshold(sweep, o, 0.99));
    for (auto r : label_faults(sweep, {{schema[o].name}, 0.99})) ++hits[r];
  }
  const std::size_t most = *std::max_element(hits.begin(), hits.end());
  if (most == 0) throw Error(ErrorCode::DegenerateWorld, "configuration sweep has no tail faults");

  std::vector<std::vector<double>> measured(objectives.size());
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < objectives.size(); ++i) {
      measured[i].push_back(oriented(schema[objectives[i]], r[objectives[i]]));
    }
  }

  // Tail rows faulty on the most objectives first, seeded order within a
  // tier; the first one some reassignment can un-fault is injected.
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (hits[r] > 0) order.push_back(r);
  }
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return hits[a] > hits[b]; });
  for (auto chosen : order) {
    InjectedFault candidate = fault;
    candidate.row = rows[chosen];
    candidate.noise = noises[chosen];
    world.fault = candidate;
    if (complete_fault(world, measured)) return;
  }
  world.fault.reset();
  throw Error(ErrorCode::DegenerateWorld, "no tail fault can be repaired by reassigning options");
}

}  // namespace

bool GroundTruthWorld::linear() const {
  for (const auto& m : mechanisms) {
    if (!m.products.empty()) return false;
  }
  return true;
}

std::size_t configuration_count(const Schema& schema) {
  std::size_t n = 1;
  for (auto o : schema.options()) {
    if (schema[o].is_continuous()) return std::numeric_limits<std::size_t>::max();
    const auto l = schema[o].levels().size();
    if (n > std::numeric_limits<std::size_t>::max() / std::max<std::size_t>(l, 1)) {
      return std::numeric_limits<std::size_t>::max();
    }
    n *= l;
  }
  return n;
}

std::vector<Assignment> all_configurations(const Schema& schema) {
  const auto options = schema.options();
  if (configuration_count(schema) > kEnumerableConfigurations) {
    throw Error(ErrorCode::InvalidArgument, "option space too large to enumerate");
  }
  std::vector<std::vector<double>> levels;
  for (auto o : options) levels.push_back(schema[o].levels());
  std::vector<Assignment> out;
  std::vector<std::size_t> idx(options.size(), 0);
  while (true) {
    Assignment a;
    for (std::size_t i = 0; i < options.size(); ++i) a[options[i]] = levels[i][idx[i]];
    out.push_back(std::move(a));
    std::size_t i = options.size();
    while (i > 0) {
      --i;
      if (++idx[i] < levels[i].size()) break;
      idx[i] = 0;
      if (i == 0) return out;
    }
    if (options.empty()) return out;
  }
}

std::vector<double> draw_noise(const GroundTruthWorld& world, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(world.schema.size() + world.confounders.size());
  for (auto& n : noise) n = normal(rng);
  return noise;
}

Row evaluate(const GroundTruthWorld& world, const Assignment& configuration, const std::vector<double>& noise) {
  const auto& schema = world.schema;
  Row r(schema.size(), 0.0);
  for (auto v : world.order) {
    if (schema[v].kind == VariableKind::Option) {
      auto it = configuration.find(v);
      if (it == configuration.end()) throw Error(ErrorCode::InvalidArgument, "configuration misses " + schema[v].name);
      r[v] = it->second;
      continue;
    }
    const auto& m = world.mechanisms[v];
    double value = m.intercept;
    for (const auto& t : m.linear) value += t.coef * r[t.parent];
    for (const auto& t : m.products) value += t.coef * r[t.a] * r[t.b];
    if (!noise.empty()) {
      value += m.noise_sd * noise[v];
      for (std::size_t k = 0; k < world.confounders.size(); ++k) {
        const auto& h = world.confounders[k];
        if (h.a == v) value += h.coef_a * noise[latent_base(world) + k];
        if (h.b == v) value += h.coef_b * noise[latent_base(world) + k];
      }
    }
    r[v] = value;
  }
  return r;
}

Row expected_row(const GroundTruthWorld& world, const Assignment& configuration) {
  return evaluate(world, configuration, {});
}

PerformanceDataset simulate_world(const GroundTruthWorld& world, std::size_t n, std::uint64_t seed,
                                  const Assignment& fixed) {
  Rng rng(seed);
  std::vector<Row> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Assignment c = random_configuration(world.schema, rng);
    for (const auto& [v, value] : fixed) c[v] = value;
    rows.push_back(evaluate(world, c, draw_noise(world, rng)));
  }
  return PerformanceDataset(world.schema, rows);
}

Row SimulatedSut::do_measure(const Assignment& configuration) {
  return evaluate(world_, configuration, draw_noise(world_, rng_));
}

namespace {

// Graph plus standardized mechanisms; `covariance` receives the population
// covariance of the linear part.
GroundTruthWorld draw_world(const WorldSpec& spec, Rng& rng, Eigen::MatrixXd& covariance) {
  const double density = std::min(spec.density, 1.0);
  std::bernoulli_distribution edge(density), weak_edge(density / 2.0), rare_edge(density / 3.0), coin(0.5);
  std::uniform_int_distribution<std::size_t> levels(spec.min_levels, spec.max_levels);

  std::vector<Variable> vars;
  for (std::size_t i = 0; i < spec.n_options; ++i) {
    Variable v;
    v.name = vertex_name('o', i, spec.n_options);
    v.kind = VariableKind::Option;
    DiscreteDomain d;
    const auto l = levels(rng);
    for (std::size_t k = 0; k < l; ++k) d.values.push_back(static_cast<double>(k));
    v.domain = d;
    v.intervenable = true;
    vars.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < spec.n_events; ++i) {
    Variable v;
    v.name = vertex_name('e', i, spec.n_events);
    v.kind = VariableKind::SystemEvent;
    vars.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < spec.n_objectives; ++i) {
    Variable v;
    v.name = vertex_name('y', i, spec.n_objectives);
    v.kind = VariableKind::Objective;
    v.direction = ObjectiveDirection::Minimize;
    vars.push_back(std::move(v));
  }

  GroundTruthWorld world;
  world.spec = spec;
  world.schema = Schema(vars);
  world.graph = MixedCausalGraph::for_schema(world.schema);
  world.graph.set_stage(GraphStage::ADMG);
  world.mechanisms.resize(vars.size());
  const auto options = world.schema.options();
  const auto events = world.schema.events();

  auto link = [&](std::size_t parent, std::size_t child) {
    world.graph.add_edge(parent, child, EdgeMark::Tail, EdgeMark::Arrow);
    world.mechanisms[child].linear.push_back({parent, coefficient(rng, 0.5, 1.5)});
  };
  auto pick_one = [&](const std::vector<std::size_t>& from) {
    std::uniform_int_distribution<std::size_t> d(0, from.size() - 1);
    return from[d(rng)];
  };

  for (std::size_t j = 0; j < events.size(); ++j) {
    const auto e = events[j];
    std::vector<std::size_t> parents;
    for (auto o : options) {
      if (edge(rng)) parents.push_back(o);
    }
    if (parents.empty()) parents.push_back(pick_one(options));
    for (std::size_t i = 0; i < j; ++i) {
      if (weak_edge(rng)) parents.push_back(events[i]);
    }
    for (auto p : parents) link(p, e);
  }
  for (auto y : world.schema.objectives()) {
    std::vector<std::size_t> parents;
    for (auto e : events) {
      if (edge(rng)) parents.push_back(e);
    }
    if (parents.empty() && !events.empty()) parents.push_back(pick_one(events));
    for (auto o : options) {
      if (rare_edge(rng)) parents.push_back(o);
    }
    if (parents.empty()) parents.push_back(pick_one(options));
    for (auto p : parents) link(p, y);
  }

  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (vars[v].kind == VariableKind::Option) continue;
    auto& m = world.mechanisms[v];
    m.noise_sd = vars[v].kind == VariableKind::Objective ? spec.objective_noise_sd : spec.noise_sd;
    if (!spec.nonlinear) continue;
    std::vector<std::size_t> opt_parents;
    for (const auto& t : m.linear) {
      if (vars[t.parent].kind == VariableKind::Option) opt_parents.push_back(t.parent);
    }
    if (opt_parents.empty()) continue;
    if (coin(rng)) {
      const auto o = pick_one(opt_parents);
      m.products.push_back({o, o, coefficient(rng, 0.1, 0.3)});
    }
    if (coin(rng) && m.linear.size() > 1) {
      const auto o = pick_one(opt_parents);
      std::vector<std::size_t> others;
      for (const auto& t : m.linear) {
        if (t.parent != o) others.push_back(t.parent);
      }
      m.products.push_back({o, pick_one(others), coefficient(rng, 0.1, 0.3)});
    }
  }

  for (std::size_t k = 0; k < spec.hidden_confounders; ++k) {
    std::vector<std::pair<std::size_t, std::size_t>> free;
    for (std::size_t i = 0; i < events.size(); ++i) {
      for (std::size_t j = i + 1; j < events.size(); ++j) {
        if (!world.graph.adjacent(events[i], events[j])) free.emplace_back(events[i], events[j]);
      }
    }
    if (free.empty()) break;
    std::uniform_int_distribution<std::size_t> d(0, free.size() - 1);
    const auto [a, b] = free[d(rng)];
    world.graph.add_edge(a, b, EdgeMark::Arrow, EdgeMark::Arrow);
    world.confounders.push_back({a, b, coefficient(rng, 0.5, 1.5), coefficient(rng, 0.5, 1.5)});
  }

  world.order = world.graph.topological_order();
  world.enumerable = configuration_count(world.schema) <= kEnumerableConfigurations;

  // Rescale every mechanism so its parent-driven (linear) variance is 1;
  // otherwise deep events turn into near-deterministic functions of the
  // options and conditional independence tests break down. Each vertex is
  // tracked as a linear combination of independent sources: options, noise
  // terms, hidden confounders.
  const std::size_t n_src = vars.size() + world.confounders.size();
  std::vector<double> src_var(n_src, 1.0);
  for (auto o : options) {
    const auto l = vars[o].levels();
    double mean = 0.0, sq = 0.0;
    for (double x : l) mean += x / static_cast<double>(l.size());
    for (double x : l) sq += (x - mean) * (x - mean) / static_cast<double>(l.size());
    src_var[o] = sq;
  }
  std::vector<std::vector<double>> loading(vars.size(), std::vector<double>(n_src, 0.0));
  for (auto v : world.order) {
    if (vars[v].kind == VariableKind::Option) {
      loading[v][v] = 1.0;
      continue;
    }
    auto& m = world.mechanisms[v];
    std::vector<double> signal(n_src, 0.0);
    for (const auto& t : m.linear) {
      for (std::size_t k = 0; k < n_src; ++k) signal[k] += t.coef * loading[t.parent][k];
    }
    for (std::size_t k = 0; k < world.confounders.size(); ++k) {
      const auto& h = world.confounders[k];
      if (h.a == v) signal[vars.size() + k] += h.coef_a;
      if (h.b == v) signal[vars.size() + k] += h.coef_b;
    }
    double var = 0.0;
    for (std::size_t k = 0; k < n_src; ++k) var += signal[k] * signal[k] * src_var[k];
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (auto& t : m.linear) t.coef *= scale;
    for (auto& t : m.products) t.coef *= scale;
    for (std::size_t k = 0; k < world.confounders.size(); ++k) {
      auto& h = world.confounders[k];
      if (h.a == v) h.coef_a *= scale;
      if (h.b == v) h.coef_b *= scale;
    }
    for (std::size_t k = 0; k < n_src; ++k) loading[v][k] = signal[k] * scale;
    loading[v][v] = m.noise_sd;
    src_var[v] = 1.0;
  }

  covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vars.size()), static_cast<Eigen::Index>(vars.size()));
  for (std::size_t i = 0; i < vars.size(); ++i) {
    for (std::size_t j = 0; j < vars.size(); ++j) {
      double cov = 0.0;
      for (std::size_t k = 0; k < n_src; ++k) cov += loading[i][k] * loading[j][k] * src_var[k];
      covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov;
    }
  }
  return world;
}

}  // namespace

double faithfulness_margin(const MixedCausalGraph& graph, const Eigen::MatrixXd& covariance, std::size_t max_cond,
                           double stop_below) {
  const std::size_t n = graph.size();
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      // Option pairs are never tested by the skeleton search.
      if (graph.kind(a) == VariableKind::Option && graph.kind(b) == VariableKind::Option) continue;
      const bool adjacent = graph.adjacent(a, b);
      std::vector<std::size_t> rest;
      for (std::size_t v = 0; v < n; ++v) {
        if (v != a && v != b) rest.push_back(v);
      }
      std::vector<std::size_t> subset;
      // Depth-first walk over conditioning sets of size <= max_cond.
      auto visit = [&](auto&& self, std::size_t from) -> void {
        if (worst < stop_below) return;
        if (adjacent || !m_separated(graph, a, b, subset)) {
          std::vector<std::size_t> idx{a, b};
          idx.insert(idx.end(), subset.begin(), subset.end());
          Eigen::MatrixXd sub(idx.size(), idx.size());
          for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < idx.size(); ++j) {
              sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                  covariance(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
            }
          }
          const Eigen::MatrixXd prec = sub.inverse();
          worst = std::min(worst, std::abs(prec(0, 1)) / std::sqrt(prec(0, 0) * prec(1, 1)));
        }
        if (subset.size() == max_cond) return;
        for (std::size_t k = from; k < rest.size(); ++k) {
          subset.push_back(rest[k]);
          self(self, k + 1);
          subset.pop_back();
        }
      };
      visit(visit, 0);
    }
  }
  return worst;
}

GroundTruthWorld generate_world(const WorldSpec& spec) {
  if (!(spec.density > 0.0)) throw Error(ErrorCode::DegenerateWorld, "density 0 leaves every objective isolated");
  if (spec.n_options == 0 || spec.n_objectives == 0) {
    throw Error(ErrorCode::InvalidArgument, "worlds need at least one option and one objective");
  }
  if (spec.min_levels < 2 || spec.max_levels < spec.min_levels) {
    throw Error(ErrorCode::InvalidArgument, "option levels must satisfy 2 <= min <= max");
  }
  // Rejection sampling: redraw until every pair the skeleton search could
  // test keeps a population partial correlation of at least
  // spec.faithfulness whenever it is m-connected; the best draw is kept when
  // no attempt qualifies. Draws whose fault cannot be injected are skipped.
  std::optional<GroundTruthWorld> best;
  double best_margin = -1.0;
  for (std::size_t attempt = 0; attempt < kWorldAttempts; ++attempt) {
    Rng rng(mix_seed(spec.seed, 1, attempt));
    Eigen::MatrixXd covariance;
    auto candidate = draw_world(spec, rng, covariance);
    const double margin = faithfulness_margin(candidate.graph, covariance, kFaithfulnessDepth, best_margin);
    if (margin <= best_margin) continue;
    shift_objectives(candidate);
    try {
      inject_fault(candidate);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateWorld) throw;
      continue;
    }
    best_margin = margin;
    best = std::move(candidate);
    if (margin >= spec.faithfulness) break;
  }
  if (!best) throw Error(ErrorCode::DegenerateWorld, "no draw admits a repairable tail fault");
  return *best;
}

PerformanceDataset fault_sweep(const GroundTruthWorld& world) {
  const auto configs = sweep_configurations(world, mix_seed(world.spec.seed, 2));
  Rng rng(mix_seed(world.spec.seed, 3));
  std::vector<Row> rows;
  for (const auto& c : configs) rows.push_back(evaluate(world, c, draw_noise(world, rng)));
  return PerformanceDataset(world.schema, rows);
}

Row frozen_outcome(const GroundTruthWorld& world, const Assignment& configuration) {
  if (!world.fault) throw Error(ErrorCode::MissingGroundTruth, "world has no injected fault");
  return evaluate(world, configuration, world.fault->noise);
}

double fault_score(const GroundTruthWorld& world, const Row& row) {
  if (!world.fault) throw Error(ErrorCode::MissingGroundTruth, "world has no injected fault");
  double s = 0.0;
  for (auto o : world.objectives()) {
    s += oriented(world.schema[o], row[o]) / std::max(std::abs(world.fault->row[o]), 1e-12);
  }
  return s;
}

double linear_total_effect(const GroundTruthWorld& world, std::size_t x, std::size_t z) {
  std::vector<double> d(world.schema.size(), 0.0);
  d[x] = 1.0;
  for (auto v : world.order) {
    if (v == x) continue;
    for (const auto& t : world.mechanisms[v].linear) d[v] += t.coef * d[t.parent];
  }
  return d[z];
}

OracleAce oracle_ace(const GroundTruthWorld& world, std::size_t x, std::size_t z, std::uint64_t seed) {
  const auto& schema = world.schema;
  if (x >= schema.size() || z >= schema.size()) throw Error(ErrorCode::InvalidArgument, "vertex out of range");
  if (schema[x].kind != VariableKind::Option) throw Error(ErrorCode::InvalidArgument, "oracle ACE needs an option cause");
  if (x == z || !world.graph.has_directed_path(x, z)) return {};
  const auto levels = schema[x].levels();
  if (levels.size() < 2) return {};
  const double steps = static_cast<double>(levels.size() - 1);
  if (world.linear()) return {linear_total_effect(world, x, z) * (levels.back() - levels.front()) / steps, 0.0};
  if (world.enumerable) {
    double first = 0.0, last = 0.0;
    std::size_t n_first = 0, n_last = 0;
    for (const auto& c : all_configurations(schema)) {
      const double v = c.at(x);
      if (v == levels.front()) {
        first += expected_row(world, c)[z];
        ++n_first;
      } else if (v == levels.back()) {
        last += expected_row(world, c)[z];
        ++n_last;
      }
    }
    return {(last / static_cast<double>(n_last) - first / static_cast<double>(n_first)) / steps, 0.0};
  }
  Rng rng(seed);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < kOracleMc; ++i) {
    Assignment c = random_configuration(schema, rng);
    c[x] = levels.back();
    const double hi = expected_row(world, c)[z];
    c[x] = levels.front();
    const double contrast = (hi - expected_row(world, c)[z]) / steps;
    sum += contrast;
    sq += contrast * contrast;
  }
  const double n = static_cast<double>(kOracleMc);
  const double mean = sum / n;
  const double var = std::max(0.0, sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

double weighted_jaccard(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                        const std::vector<double>& weights) {
  std::vector<std::size_t> a = predicted, b = truth;
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<std::size_t> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  if (uni.empty()) return 100.0;
  auto weight = [&](std::size_t v) {
    if (v >= weights.size()) throw Error(ErrorCode::InvalidArgument, "no weight for vertex " + std::to_string(v));
    return std::abs(weights[v]);
  };
  double wi = 0.0, wu = 0.0;
  for (auto v : inter) wi += weight(v);
  for (auto v : uni) wu += weight(v);
  if (wu <= 0.0) return 100.0 * static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  return 100.0 * wi / wu;
}

std::vector<double> root_cause_weights(const GroundTruthWorld& world) {
  if (!world.fault) throw Error(ErrorCode::MissingGroundTruth, "world has no injected fault");
  std::vector<double> w(world.schema.size(), 0.0);
  for (auto o : world.schema.options()) {
    for (auto y : world.fault->faulty_objectives) w[o] += std::abs(oracle_ace(world, o, y).value);
  }
  return w;
}

MetricReport metrics(const std::vector<std::size_t>& predicted_root_causes, const GroundTruthWorld& world,
                     const Row& measured_fix, const MixedCausalGraph* learned) {
  if (!world.fault) throw Error(ErrorCode::MissingGroundTruth, "world has no injected fault");
  const auto& truth = world.fault->root_causes;
  MetricReport m;
  m.accuracy = weighted_jaccard(predicted_root_causes, truth, root_cause_weights(world));
  std::size_t hits = 0;
  for (auto p : predicted_root_causes) hits += std::find(truth.begin(), truth.end(), p) != truth.end() ? 1 : 0;
  if (predicted_root_causes.empty()) {
    m.precision = 0.0;
    m.precision_undefined = true;
  } else {
    m.precision = 100.0 * static_cast<double>(hits) / static_cast<double>(predicted_root_causes.size());
  }
  m.recall = truth.empty() ? (predicted_root_causes.empty() ? 100.0 : 0.0)
                           : 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
  for (auto y : world.fault->faulty_objectives) {
    m.gain.push_back(gain(world.schema[y], world.fault->row[y], measured_fix[y]));
  }
  if (learned != nullptr) m.shd = shd(*learned, world.graph);
  return m;
}

std::vector<Point> oracle_front(const GroundTruthWorld& world) {
  std::vector<Point> points;
  const auto objectives = world.objectives();
  for (const auto& c : all_configurations(world.schema)) {
    const Row r = expected_row(world, c);
    Point p;
    for (auto y : objectives) p.push_back(oriented(world.schema[y], r[y]));
    points.push_back(std::move(p));
  }
  std::vector<Point> front;
  for (auto i : nondominated(points)) front.push_back(points[i]);
  return front;
}

Assignment exhaustive_optimum(const GroundTruthWorld& world, std::size_t objective) {
  std::optional<Assignment> best;
  double best_value = std::numeric_limits<double>::infinity();
  for (const auto& c : all_configurations(world.schema)) {
    const double v = oriented(world.schema[objective], expected_row(world, c)[objective]);
    if (v < best_value) {
      best_value = v;
      best = c;
    }
  }
  return *best;
}

BaselineOutcome random_search(SystemUnderTest& sut, const std::vector<std::size_t>& objectives,
                              const std::vector<double>& targets, std::size_t budget, std::uint64_t seed,
                              double margin) {
  Rng rng(seed);
  BaselineOutcome out;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < budget; ++i) {
    const Row row = sut.measure(random_configuration(sut.schema(), rng));
    ++out.samples_used;
    double s = 0.0;
    for (std::size_t k = 0; k < objectives.size(); ++k) {
      s += oriented(sut.schema()[objectives[k]], row[objectives[k]]) / std::max(std::abs(targets[k]), 1e-12);
    }
    if (s < best_score) {
      best_score = s;
      out.best = row;
    }
    if (meets_thresholds(sut.schema(), row, objectives, targets, margin)) {
      out.samples_to_fix = out.samples_used;
      break;
    }
  }
  return out;
}

// --------------------------------------------------------------------- JSON

json to_json(const GroundTruthWorld& world) {
  const auto& schema = world.schema;
  json spec{{"n_options", world.spec.n_options},
            {"n_events", world.spec.n_events},
            {"n_objectives", world.spec.n_objectives},
            {"density", world.spec.density},
            {"seed", world.spec.seed},
            {"nonlinear", world.spec.nonlinear},
            {"hidden_confounders", world.spec.hidden_confounders},
            {"min_levels", world.spec.min_levels},
            {"max_levels", world.spec.max_levels},
            {"noise_sd", world.spec.noise_sd},
            {"objective_noise_sd", world.spec.objective_noise_sd},
            {"faithfulness", world.spec.faithfulness},
            {"target_fraction", world.spec.target_fraction}};
  json mechanisms = json::array();
  for (std::size_t v = 0; v < schema.size(); ++v) {
    if (schema[v].kind == VariableKind::Option) continue;
    const auto& m = world.mechanisms[v];
    json linear = json::array(), products = json::array();
    for (const auto& t : m.linear) linear.push_back({{"parent", schema[t.parent].name}, {"coef", t.coef}});
    for (const auto& t : m.products) {
      products.push_back({{"a", schema[t.a].name}, {"b", schema[t.b].name}, {"coef", t.coef}});
    }
    mechanisms.push_back({{"vertex", schema[v].name},
                          {"intercept", m.intercept},
                          {"noise_sd", m.noise_sd},
                          {"linear", linear},
                          {"products", products}});
  }
  json confounders = json::array();
  for (const auto& h : world.confounders) {
    confounders.push_back(
        {{"a", schema[h.a].name}, {"b", schema[h.b].name}, {"coef_a", h.coef_a}, {"coef_b", h.coef_b}});
  }
  json out{{"format", "causalperf-world/1"},
           {"spec", spec},
           {"schema", to_json(schema)},
           {"graph", to_json(world.graph)},
           {"mechanisms", mechanisms},
           {"confounders", confounders},
           {"enumerable", world.enumerable},
           {"fault", nullptr}};
  if (world.fault) {
    const auto& f = *world.fault;
    auto names = [&](const std::vector<std::size_t>& idx) {
      json a = json::array();
      for (auto i : idx) a.push_back(schema[i].name);
      return a;
    };
    json thresholds = json::object(), targets = json::object();
    const auto objectives = world.objectives();
    for (std::size_t i = 0; i < objectives.size(); ++i) {
      thresholds[schema[objectives[i]].name] = f.thresholds[i];
      targets[schema[objectives[i]].name] = f.targets[i];
    }
    out["fault"] = {{"row", row_to_json(f.row, schema)},
                    {"noise", f.noise},
                    {"faulty_objectives", names(f.faulty_objectives)},
                    {"thresholds", thresholds},
                    {"targets", targets},
                    {"root_causes", names(f.root_causes)},
                    {"best_repair", assignment_to_json(f.best_repair, schema)}};
  }
  return out;
}

GroundTruthWorld world_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "causalperf-world/1") {
      throw Error(ErrorCode::ParseError, "unsupported world format");
    }
    GroundTruthWorld w;
    const auto& s = doc.at("spec");
    w.spec.n_options = s.at("n_options").get<std::size_t>();
    w.spec.n_events = s.at("n_events").get<std::size_t>();
    w.spec.n_objectives = s.at("n_objectives").get<std::size_t>();
    w.spec.density = s.at("density").get<double>();
    w.spec.seed = s.at("seed").get<std::uint64_t>();
    w.spec.nonlinear = s.at("nonlinear").get<bool>();
    w.spec.hidden_confounders = s.at("hidden_confounders").get<std::size_t>();
    w.spec.min_levels = s.at("min_levels").get<std::size_t>();
    w.spec.max_levels = s.at("max_levels").get<std::size_t>();
    w.spec.noise_sd = s.at("noise_sd").get<double>();
    w.spec.objective_noise_sd = s.at("objective_noise_sd").get<double>();
    w.spec.faithfulness = s.at("faithfulness").get<double>();
    w.spec.target_fraction = s.at("target_fraction").get<double>();
    w.schema = schema_from_json(doc.at("schema"));
    w.graph = graph_from_json(doc.at("graph"));
    w.mechanisms.resize(w.schema.size());
    for (const auto& m : doc.at("mechanisms")) {
      auto& mech = w.mechanisms[w.schema.index_of(m.at("vertex").get<std::string>())];
      mech.intercept = m.at("intercept").get<double>();
      mech.noise_sd = m.at("noise_sd").get<double>();
      for (const auto& t : m.at("linear")) {
        mech.linear.push_back({w.schema.index_of(t.at("parent").get<std::string>()), t.at("coef").get<double>()});
      }
      for (const auto& t : m.at("products")) {
        mech.products.push_back({w.schema.index_of(t.at("a").get<std::string>()),
                                 w.schema.index_of(t.at("b").get<std::string>()), t.at("coef").get<double>()});
      }
    }
    for (const auto& h : doc.at("confounders")) {
      w.confounders.push_back({w.schema.index_of(h.at("a").get<std::string>()),
                               w.schema.index_of(h.at("b").get<std::string>()), h.at("coef_a").get<double>(),
                               h.at("coef_b").get<double>()});
    }
    w.enumerable = doc.at("enumerable").get<bool>();
    w.order = w.graph.topological_order();
    if (!doc.at("fault").is_null()) {
      const auto& f = doc.at("fault");
      InjectedFault fault;
      fault.row = row_from_json(f.at("row"), w.schema);
      fault.noise = f.at("noise").get<std::vector<double>>();
      for (const auto& n : f.at("faulty_objectives")) fault.faulty_objectives.push_back(w.schema.index_of(n.get<std::string>()));
      for (auto y : w.schema.objectives()) {
        fault.thresholds.push_back(f.at("thresholds").at(w.schema[y].name).get<double>());
        fault.targets.push_back(f.at("targets").at(w.schema[y].name).get<double>());
      }
      for (const auto& n : f.at("root_causes")) fault.root_causes.push_back(w.schema.index_of(n.get<std::string>()));
      fault.best_repair = assignment_from_json(f.at("best_repair"), w.schema);
      w.fault = fault;
    }
    return w;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed world: ") + e.what());
  }
}

json to_json(const MetricReport& r) {
  return {{"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"precision_undefined", r.precision_undefined},
          {"gain", r.gain},
          {"shd", r.shd ? json(*r.shd) : json(nullptr)},
          {"hypervolume_error", r.hypervolume_error ? json(*r.hypervolume_error) : json(nullptr)}};
}

}  // namespace causalperf
