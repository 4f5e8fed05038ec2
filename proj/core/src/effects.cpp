#include "causalperf/effects.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

constexpr std::size_t kContinuousGrid = 8;

std::vector<std::string> path_names(const CausalPath& p, const MixedCausalGraph& g) {
  std::vector<std::string> out;
  for (auto v : p.vertices) out.push_back(g.name(v));
  return out;
}

}  // namespace

std::vector<double> cause_grid(const StructuralModel& model, std::size_t x) {
  const auto& var = model.schema()[x];
  if (!var.is_continuous()) return var.levels();
  const auto& dom = std::get<ContinuousDomain>(var.domain);
  const auto& vm = model.vertex(x);
  const double lo = dom.min.value_or(vm.observed_min);
  const double hi = dom.max.value_or(vm.observed_max);
  if (!(hi > lo)) return {lo};
  std::vector<double> grid(kContinuousGrid);
  for (std::size_t i = 0; i < kContinuousGrid; ++i) {
    grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kContinuousGrid - 1);
  }
  return grid;
}

AceEstimate ace(const StructuralModel& model, std::size_t x, std::size_t z, const AceOptions& options) {
  const auto& g = model.graph();
  if (x >= g.size() || z >= g.size()) throw Error(ErrorCode::UnknownColumn, "ACE variable out of range");
  AceEstimate est;
  if (x == z || !g.has_directed_path(x, z)) {
    est.downstream = false;
    return est;
  }
  const auto grid = cause_grid(model, x);
  if (grid.size() < 2) return est;
  const bool forced = !model.schema()[x].intervenable;
  if (forced && model.schema()[x].kind == VariableKind::Objective) {
    throw Error(ErrorCode::NotIntervenable, model.schema()[x].name + " is an objective");
  }

  const std::size_t worlds = std::max<std::size_t>(1, options.n_mc);
  std::vector<std::vector<double>> exo(worlds);
  Rng rng(options.seed);
  for (auto& e : exo) e = model.draw_exogenous(rng);

  std::vector<double> per_world(worlds);
  parallel_for(worlds, [&](std::size_t w) {
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double value = model.propagate({{x, grid[i]}}, exo[w], forced)[z];
      if (i == 0) first = value;
      last = value;
    }
    // Consecutive contrasts telescope to (last - first) / (N - 1).
    per_world[w] = (last - first) / static_cast<double>(grid.size() - 1);
  });
  double mean = 0.0;
  for (double v : per_world) mean += v;
  mean /= static_cast<double>(worlds);
  double var = 0.0;
  for (double v : per_world) var += (v - mean) * (v - mean);
  est.value = mean;
  est.std_error = worlds > 1 ? std::sqrt(var / static_cast<double>(worlds - 1) / static_cast<double>(worlds)) : 0.0;
  return est;
}

std::vector<CausalPath> extract_paths(const MixedCausalGraph& graph, std::size_t objective) {
  if (graph.kind(objective) != VariableKind::Objective) {
    throw Error(ErrorCode::InvalidArgument, graph.name(objective) + " is not an objective");
  }
  std::vector<CausalPath> out;
  std::vector<std::size_t> stack{objective};
  std::function<void(std::size_t)> backtrack = [&](std::size_t v) {
    const auto parents = graph.parents(v);
    if (parents.empty()) {
      if (stack.size() > 1) {
        CausalPath p;
        p.vertices.assign(stack.rbegin(), stack.rend());
        out.push_back(std::move(p));
      }
      return;
    }
    for (auto q : parents) {
      stack.push_back(q);
      backtrack(q);
      stack.pop_back();
    }
  };
  backtrack(objective);
  std::sort(out.begin(), out.end(), [&](const CausalPath& a, const CausalPath& b) {
    return path_names(a, graph) < path_names(b, graph);
  });
  return out;
}

std::vector<CausalPath> RankedPaths::top() const {
  return {paths.begin(), paths.begin() + static_cast<std::ptrdiff_t>(std::min(k, paths.size()))};
}

RankedPaths rank_paths(const StructuralModel& model, std::vector<CausalPath> paths, std::size_t objective,
                       std::size_t k, const AceOptions& options) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const auto& g = model.graph();
  RankedPaths out;
  out.objective = objective;
  out.k = k;

  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (const auto& p : paths) {
    for (std::size_t i = 0; i + 1 < p.vertices.size(); ++i) {
      if (!g.is_directed(p.vertices[i], p.vertices[i + 1])) {
        throw Error(ErrorCode::InvalidArgument, "path contains a non-directed edge");
      }
      edges.emplace_back(p.vertices[i], p.vertices[i + 1]);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  const auto options_idx = model.schema().options();

  // Edge effects and option -> objective effects, each with its own stream.
  std::vector<AceEstimate> edge_est(edges.size());
  std::vector<AceEstimate> option_est(options_idx.size());
  const std::size_t jobs = edges.size() + options_idx.size();
  parallel_for(jobs, [&](std::size_t j) {
    if (j < edges.size()) {
      const auto [a, b] = edges[j];
      edge_est[j] = ace(model, a, b, {options.n_mc, mix_seed(options.seed, a, b)});
    } else {
      const auto o = options_idx[j - edges.size()];
      option_est[j - edges.size()] = ace(model, o, objective, {options.n_mc, mix_seed(options.seed, o, objective)});
    }
  });
  for (std::size_t j = 0; j < edges.size(); ++j) out.edge_ace[edges[j]] = edge_est[j];

  double mass = 0.0;
  for (const auto& e : option_est) mass += std::abs(e.value);
  for (std::size_t i = 0; i < options_idx.size(); ++i) {
    out.option_effects.push_back(
        {options_idx[i], option_est[i], mass > 0.0 ? std::abs(option_est[i].value) / mass : 0.0});
  }

  for (auto& p : paths) {
    p.edge_ace.clear();
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < p.vertices.size(); ++i) {
      const double v = out.edge_ace.at({p.vertices[i], p.vertices[i + 1]}).value;
      p.edge_ace.push_back(v);
      total += std::abs(v);
    }
    p.path_ace = p.edge_ace.empty() ? 0.0 : total / static_cast<double>(p.edge_ace.size());
  }
  std::stable_sort(paths.begin(), paths.end(), [&](const CausalPath& a, const CausalPath& b) {
    if (a.path_ace != b.path_ace) return a.path_ace > b.path_ace;
    return path_names(a, g) < path_names(b, g);
  });
  out.paths = std::move(paths);
  return out;
}

RankedPaths rank_paths(const StructuralModel& model, std::size_t objective, std::size_t k,
                       const AceOptions& options) {
  return rank_paths(model, extract_paths(model.graph(), objective), objective, k, options);
}

std::vector<RootCause> root_causes(const std::vector<RankedPaths>& ranked) {
  std::set<std::size_t> on_paths;
  std::map<std::size_t, double> score;
  for (const auto& r : ranked) {
    for (const auto& p : r.top()) {
      for (auto v : p.vertices) on_paths.insert(v);
    }
    for (const auto& e : r.option_effects) score[e.option] += e.share;
  }
  std::vector<RootCause> out;
  for (const auto& [option, s] : score) {
    if (on_paths.count(option)) out.push_back({option, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const RootCause& a, const RootCause& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.option < b.option;
  });
  return out;
}

json to_json(const RankedPaths& ranked, const StructuralModel& model) {
  const auto& g = model.graph();
  json paths = json::array();
  for (std::size_t i = 0; i < ranked.paths.size(); ++i) {
    const auto& p = ranked.paths[i];
    paths.push_back({{"rank", i + 1},
                     {"vertices", path_names(p, g)},
                     {"edge_ace", p.edge_ace},
                     {"path_ace", p.path_ace},
                     {"top_k", i < ranked.k}});
  }
  json edges = json::array();
  for (const auto& [e, est] : ranked.edge_ace) {
    edges.push_back({{"cause", g.name(e.first)},
                     {"effect", g.name(e.second)},
                     {"ace", est.value},
                     {"std_error", est.std_error}});
  }
  json options = json::array();
  for (const auto& o : ranked.option_effects) {
    options.push_back({{"option", g.name(o.option)},
                       {"ace", o.estimate.value},
                       {"std_error", o.estimate.std_error},
                       {"downstream", o.estimate.downstream},
                       {"share", o.share}});
  }
  return {{"objective", g.name(ranked.objective)},
          {"k", ranked.k},
          {"paths", paths},
          {"ace_table", {{"edges", edges}, {"options", options}}}};
}

json to_json(const std::vector<RootCause>& causes, const StructuralModel& model) {
  json out = json::array();
  for (const auto& c : causes) out.push_back({{"option", model.graph().name(c.option)}, {"score", c.score}});
  return out;
}

}  // namespace causalperf
