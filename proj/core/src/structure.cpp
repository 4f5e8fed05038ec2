#include "causalperf/structure.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "causalperf/citest.hpp"
#include "causalperf/error.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

namespace {

using Pair = std::pair<std::size_t, std::size_t>;

Pair key(std::size_t a, std::size_t b) { return {std::min(a, b), std::max(a, b)}; }

/// rank[v] = position of v when vertices are sorted by name.
std::vector<std::size_t> name_ranks(const MixedCausalGraph& g) {
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return g.name(a) < g.name(b); });
  std::vector<std::size_t> rank(g.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  return rank;
}

/// Calls visit(subset) for each size-k subset of pool in lexicographic
/// order; stops early when visit returns true.
template <typename Visit>
bool for_each_subset(const std::vector<std::size_t>& pool, std::size_t k, Visit&& visit) {
  if (k > pool.size()) return false;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> subset(k);
  while (true) {
    for (std::size_t i = 0; i < k; ++i) subset[i] = pool[idx[i]];
    if (visit(subset)) return true;
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == pool.size() - k + i - 1) --i;
    if (i == 0) return false;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

struct EdgeVerdict {
  bool removed = false;
  std::vector<std::size_t> sepset;
  std::size_t tests = 0;
};

bool has_mark(const MixedCausalGraph& g, std::size_t a, std::size_t b, EdgeMark m) {
  return g.mark(a, b) == m;
}

// Mark at b on the a-b edge.
bool set_if_circle(MixedCausalGraph& g, std::size_t a, std::size_t b, EdgeMark m) {
  if (g.mark(a, b) != EdgeMark::Circle) return false;
  g.set_mark(a, b, m);
  return true;
}

bool in_sepset(const SepsetMap& sepsets, std::size_t a, std::size_t b, std::size_t v) {
  auto it = sepsets.find(key(a, b));
  if (it == sepsets.end()) return false;
  return std::find(it->second.begin(), it->second.end(), v) != it->second.end();
}

void apply_background_knowledge(MixedCausalGraph& g) {
  for (const auto& e : g.edges()) {
    for (auto [a, b] : {Pair{e.u, e.v}, Pair{e.v, e.u}}) {
      if (g.kind(a) == VariableKind::Option) {
        g.set_mark(b, a, EdgeMark::Tail);
        g.set_mark(a, b, EdgeMark::Arrow);
      }
    }
  }
  for (const auto& e : g.edges()) {
    for (auto [a, b] : {Pair{e.u, e.v}, Pair{e.v, e.u}}) {
      if (g.kind(b) == VariableKind::Objective && g.kind(a) != VariableKind::Option) {
        g.set_mark(a, b, EdgeMark::Arrow);
      }
    }
  }
}

void orient_colliders(MixedCausalGraph& g, const SepsetMap& sepsets) {
  // Decide all colliders against the unoriented marks, then apply.
  std::vector<Pair> arrows;
  for (std::size_t b = 0; b < g.size(); ++b) {
    const auto adj = g.adjacents(b);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      for (std::size_t j = i + 1; j < adj.size(); ++j) {
        const auto a = adj[i];
        const auto c = adj[j];
        if (g.adjacent(a, c) || in_sepset(sepsets, a, c, b)) continue;
        arrows.push_back({a, b});
        arrows.push_back({c, b});
      }
    }
  }
  for (auto [a, b] : arrows) set_if_circle(g, a, b, EdgeMark::Arrow);
}

bool rule1(MixedCausalGraph& g) {
  bool changed = false;
  for (std::size_t b = 0; b < g.size(); ++b) {
    for (auto a : g.adjacents(b)) {
      if (!has_mark(g, a, b, EdgeMark::Arrow)) continue;
      for (auto c : g.adjacents(b)) {
        if (c == a || g.adjacent(a, c) || !has_mark(g, c, b, EdgeMark::Circle)) continue;
        if (has_mark(g, b, c, EdgeMark::Tail)) continue;
        g.set_mark(c, b, EdgeMark::Tail);
        set_if_circle(g, b, c, EdgeMark::Arrow);
        changed = true;
      }
    }
  }
  return changed;
}

bool rule2(MixedCausalGraph& g) {
  bool changed = false;
  for (std::size_t a = 0; a < g.size(); ++a) {
    for (auto c : g.adjacents(a)) {
      if (!has_mark(g, a, c, EdgeMark::Circle)) continue;
      for (auto b : g.adjacents(a)) {
        if (b == c || !g.adjacent(b, c)) continue;
        const bool via_first = g.is_directed(a, b) && has_mark(g, b, c, EdgeMark::Arrow);
        const bool via_second = has_mark(g, a, b, EdgeMark::Arrow) && g.is_directed(b, c);
        if (via_first || via_second) {
          g.set_mark(a, c, EdgeMark::Arrow);
          changed = true;
          break;
        }
      }
    }
  }
  return changed;
}

bool rule3(MixedCausalGraph& g) {
  bool changed = false;
  for (std::size_t b = 0; b < g.size(); ++b) {
    const auto adj = g.adjacents(b);
    for (auto t : adj) {
      if (!has_mark(g, t, b, EdgeMark::Circle)) continue;
      bool fired = false;
      for (std::size_t i = 0; i < adj.size() && !fired; ++i) {
        for (std::size_t j = i + 1; j < adj.size() && !fired; ++j) {
          const auto a = adj[i];
          const auto c = adj[j];
          if (a == t || c == t || g.adjacent(a, c)) continue;
          if (!has_mark(g, a, b, EdgeMark::Arrow) || !has_mark(g, c, b, EdgeMark::Arrow)) continue;
          if (!g.adjacent(a, t) || !g.adjacent(c, t)) continue;
          if (!has_mark(g, a, t, EdgeMark::Circle) || !has_mark(g, c, t, EdgeMark::Circle)) continue;
          g.set_mark(t, b, EdgeMark::Arrow);
          changed = fired = true;
        }
      }
    }
  }
  return changed;
}

// Discriminating path <theta, ..., a, b, c> for b with b o-* c.
bool rule4(MixedCausalGraph& g, const SepsetMap& sepsets) {
  bool changed = false;
  for (std::size_t b = 0; b < g.size(); ++b) {
    for (auto c : g.adjacents(b)) {
      if (!has_mark(g, c, b, EdgeMark::Circle)) continue;
      for (auto a : g.adjacents(b)) {
        if (a == c || !has_mark(g, b, a, EdgeMark::Arrow) || !g.adjacent(a, c) || !g.is_directed(a, c)) continue;
        // BFS back from a over colliders that are parents of c.
        std::vector<bool> visited(g.size(), false);
        visited[a] = visited[b] = visited[c] = true;
        std::deque<std::size_t> queue{a};
        std::optional<std::size_t> theta;
        while (!queue.empty() && !theta) {
          const auto cur = queue.front();
          queue.pop_front();
          for (auto w : g.adjacents(cur)) {
            if (visited[w] || !has_mark(g, w, cur, EdgeMark::Arrow)) continue;
            if (!g.adjacent(w, c)) {
              theta = w;
              break;
            }
            if (g.is_directed(w, c) && has_mark(g, cur, w, EdgeMark::Arrow)) {
              visited[w] = true;
              queue.push_back(w);
            }
          }
        }
        if (!theta) continue;
        if (in_sepset(sepsets, *theta, c, b)) {
          g.set_mark(c, b, EdgeMark::Tail);
          set_if_circle(g, b, c, EdgeMark::Arrow);
        } else {
          set_if_circle(g, a, b, EdgeMark::Arrow);
          g.set_mark(c, b, EdgeMark::Arrow);
          set_if_circle(g, b, c, EdgeMark::Arrow);
        }
        changed = true;
        break;
      }
    }
  }
  return changed;
}

}  // namespace

// ------------------------------------------------------------------ skeleton

SkeletonResult learn_skeleton(const PerformanceDataset& ds, const LearnOptions& options,
                              const MixedCausalGraph* warm_start) {
  if (ds.empty()) throw Error(ErrorCode::EmptyDataset, "structure learning needs data");

  SkeletonResult out;
  out.graph = MixedCausalGraph::for_schema(ds.schema());
  auto& g = out.graph;
  const std::size_t p = g.size();
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t v = u + 1; v < p; ++v) {
      if (g.kind(u) == VariableKind::Option && g.kind(v) == VariableKind::Option) continue;
      g.add_edge(u, v, EdgeMark::Circle, EdgeMark::Circle);
    }
  }

  const auto rank = name_ranks(g);
  auto by_name = [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; };
  const IndependenceTester tester(ds, {options.alpha, options.permutations, options.seed});
  const std::size_t n = ds.rows();

  for (std::size_t depth = 0;; ++depth) {
    if (options.max_depth >= 0 && depth > static_cast<std::size_t>(options.max_depth)) break;
    std::vector<std::vector<std::size_t>> frozen(p);
    for (std::size_t v = 0; v < p; ++v) {
      frozen[v] = g.adjacents(v);
      std::sort(frozen[v].begin(), frozen[v].end(), by_name);
    }
    std::vector<Pair> pending;
    for (const auto& e : g.edges()) {
      const auto a = rank[e.u] < rank[e.v] ? e.u : e.v;
      const auto b = a == e.u ? e.v : e.u;
      if (frozen[a].size() - 1 >= depth || frozen[b].size() - 1 >= depth) pending.push_back({a, b});
    }
    if (pending.empty()) break;
    std::sort(pending.begin(), pending.end(), [&](const Pair& l, const Pair& r) {
      if (warm_start != nullptr) {
        const bool la = warm_start->adjacent(l.first, l.second);
        const bool ra = warm_start->adjacent(r.first, r.second);
        if (la != ra) return !la;
      }
      return std::pair(rank[l.first], rank[l.second]) < std::pair(rank[r.first], rank[r.second]);
    });

    std::vector<EdgeVerdict> verdicts(pending.size());
    parallel_for(pending.size(), [&](std::size_t i) {
      const auto [a, b] = pending[i];
      auto& verdict = verdicts[i];
      if (depth + 3 >= n) return;  // too few rows for any test at this depth
      for (auto [from, to] : {Pair{a, b}, Pair{b, a}}) {
        std::vector<std::size_t> pool;
        for (auto w : frozen[from]) {
          if (w != to) pool.push_back(w);
        }
        const bool found = for_each_subset(pool, depth, [&](const std::vector<std::size_t>& s) {
          ++verdict.tests;
          try {
            if (tester.test(a, b, s).independent) {
              verdict.removed = true;
              verdict.sepset = s;
              return true;
            }
          } catch (const Error& err) {
            if (err.code() != ErrorCode::SingularCorrelationMatrix && err.code() != ErrorCode::InsufficientSamples) {
              throw;
            }
          }
          return false;
        });
        if (found) break;
      }
    });
    for (std::size_t i = 0; i < pending.size(); ++i) {
      out.tests += verdicts[i].tests;
      if (!verdicts[i].removed) continue;
      const auto [a, b] = pending[i];
      g.remove_edge(a, b);
      auto sep = verdicts[i].sepset;
      std::sort(sep.begin(), sep.end());
      out.sepsets[key(a, b)] = std::move(sep);
    }
  }
  // Options are independent by design; their (absent) edges are separated by the empty set.
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t v = u + 1; v < p; ++v) {
      if (g.kind(u) == VariableKind::Option && g.kind(v) == VariableKind::Option) out.sepsets[{u, v}] = {};
    }
  }
  g.set_stage(GraphStage::Skeleton);
  return out;
}

// ---------------------------------------------------------------- orientation

MixedCausalGraph orient_pag(const MixedCausalGraph& skeleton, const SepsetMap& sepsets) {
  if (skeleton.stage() != GraphStage::Skeleton) throw Error(ErrorCode::InvalidArgument, "orient_pag expects a skeleton");
  MixedCausalGraph g = skeleton;
  for (const auto& e : g.edges()) g.add_edge(e.u, e.v, EdgeMark::Circle, EdgeMark::Circle);
  apply_background_knowledge(g);
  orient_colliders(g, sepsets);
  while (true) {
    bool changed = rule1(g);
    changed = rule2(g) || changed;
    changed = rule3(g) || changed;
    changed = rule4(g, sepsets) || changed;
    if (!changed) break;
  }
  g.set_stage(GraphStage::PAG);
  return g;
}

// ------------------------------------------------------------------ entropic

std::string_view to_string(EntropicChoice choice) {
  switch (choice) {
    case EntropicChoice::Bidirected: return "Bidirected";
    case EntropicChoice::XcausesY: return "XcausesY";
    case EntropicChoice::YcausesX: return "YcausesX";
  }
  return "Bidirected";
}

double entropy_threshold(double entropy_x, double entropy_y) { return 0.8 * std::min(entropy_x, entropy_y); }

EntropicResult resolve_entropic(const MixedCausalGraph& pag, const PerformanceDataset& ds,
                                const LearnOptions& options) {
  if (pag.stage() != GraphStage::PAG) throw Error(ErrorCode::InvalidArgument, "resolve_entropic expects a PAG");
  if (pag.names().size() != ds.cols()) throw Error(ErrorCode::VertexMismatch, "graph and dataset differ");
  EntropicResult out;
  out.graph = pag;
  auto& g = out.graph;
  const auto rank = name_ranks(g);

  std::vector<Pair> pending;
  for (const auto& e : g.edges()) {
    if (e.mark_u == EdgeMark::Tail && e.mark_v == EdgeMark::Tail) {
      g.add_edge(e.u, e.v, EdgeMark::Circle, EdgeMark::Circle);
    }
    if (g.mark(e.v, e.u) == EdgeMark::Circle || g.mark(e.u, e.v) == EdgeMark::Circle) {
      pending.push_back(rank[e.u] < rank[e.v] ? Pair{e.u, e.v} : Pair{e.v, e.u});
    }
  }
  std::sort(pending.begin(), pending.end(),
            [&](const Pair& l, const Pair& r) {
              return std::pair(rank[l.first], rank[l.second]) < std::pair(rank[r.first], rank[r.second]);
            });

  std::map<std::size_t, std::vector<int>> codes;
  auto codes_of = [&](std::size_t v) -> const std::vector<int>& {
    auto it = codes.find(v);
    if (it == codes.end()) it = codes.emplace(v, entropy_codes(ds, v)).first;
    return it->second;
  };

  for (auto [x, y] : pending) {
    EntropicDecision d;
    d.x = x;
    d.y = y;
    const auto& cx = codes_of(x);
    const auto& cy = codes_of(y);
    const Eigen::MatrixXd pxy = joint_distribution(cx, cy);
    d.entropy_x = entropy_bits(cx);
    d.entropy_y = entropy_bits(cy);
    d.threshold = entropy_threshold(d.entropy_x, d.entropy_y);

    const auto mx = *g.mark(y, x);  // mark at x
    const auto my = *g.mark(x, y);  // mark at y
    auto directed_ok = [&](std::size_t from, std::size_t to, EdgeMark at_from, EdgeMark at_to) {
      if (at_from == EdgeMark::Arrow || at_to == EdgeMark::Tail) return false;
      if (g.kind(from) == VariableKind::Objective || g.kind(to) == VariableKind::Option) return false;
      return !g.has_directed_path(to, from);
    };
    const bool xy_ok = directed_ok(x, y, mx, my);
    const bool yx_ok = directed_ok(y, x, my, mx);
    const bool bi_ok = mx != EdgeMark::Tail && my != EdgeMark::Tail && g.kind(x) != VariableKind::Option &&
                       g.kind(y) != VariableKind::Option;

    // Direction entropies.
    const auto& vx = ds.schema()[x];
    const auto& vy = ds.schema()[y];
    if (vx.is_continuous() && vy.is_continuous()) {
      const auto xs = ds.column(x);
      const auto ys = ds.column(y);
      const double ex = differential_entropy(polynomial_residuals(ys, xs, 2));
      const double ey = differential_entropy(polynomial_residuals(xs, ys, 2));
      d.noise_entropy_xy = std::max(0.0, ey);
      d.noise_entropy_yx = std::max(0.0, ex);
      d.total_entropy_xy = differential_entropy(xs) + ey;
      d.total_entropy_yx = differential_entropy(ys) + ex;
    } else {
      std::vector<std::vector<double>> y_given_x, x_given_y;
      for (Eigen::Index i = 0; i < pxy.rows(); ++i) {
        if (pxy.row(i).sum() <= 0.0) continue;
        std::vector<double> r(static_cast<std::size_t>(pxy.cols()));
        for (Eigen::Index j = 0; j < pxy.cols(); ++j) r[static_cast<std::size_t>(j)] = pxy(i, j);
        y_given_x.push_back(std::move(r));
      }
      for (Eigen::Index j = 0; j < pxy.cols(); ++j) {
        if (pxy.col(j).sum() <= 0.0) continue;
        std::vector<double> c(static_cast<std::size_t>(pxy.rows()));
        for (Eigen::Index i = 0; i < pxy.rows(); ++i) c[static_cast<std::size_t>(i)] = pxy(i, j);
        x_given_y.push_back(std::move(c));
      }
      d.noise_entropy_xy = min_entropy_coupling(y_given_x);
      d.noise_entropy_yx = min_entropy_coupling(x_given_y);
      d.total_entropy_xy = d.entropy_x + d.noise_entropy_xy;
      d.total_entropy_yx = d.entropy_y + d.noise_entropy_yx;
    }
    if (!std::isfinite(d.total_entropy_xy) || !std::isfinite(d.total_entropy_yx)) {
      throw Error(ErrorCode::NonFiniteEntropy, "non-finite entropy for " + g.name(x) + " - " + g.name(y));
    }

    bool decided = false;
    if (bi_ok) {
      const auto ce = common_entropy(pxy, mix_seed(options.seed, x, y), options.latent);
      d.confounder_checked = true;
      d.confounder_entropy = ce.entropy;
      if (ce.entropy < d.threshold) {
        d.chosen = EntropicChoice::Bidirected;
        decided = true;
      }
    } else {
      d.confounder_entropy = std::min(d.entropy_x, d.entropy_y);
    }
    if (!decided) {
      if (xy_ok && yx_ok) {
        // Ties go to the lexicographically first vertex as cause.
        d.chosen = d.total_entropy_yx < d.total_entropy_xy ? EntropicChoice::YcausesX : EntropicChoice::XcausesY;
      } else if (xy_ok || yx_ok) {
        d.chosen = xy_ok ? EntropicChoice::XcausesY : EntropicChoice::YcausesX;
        d.forced = true;
      } else {
        d.chosen = EntropicChoice::Bidirected;
        d.forced = true;
      }
    }
    switch (d.chosen) {
      case EntropicChoice::Bidirected: g.add_edge(x, y, EdgeMark::Arrow, EdgeMark::Arrow); break;
      case EntropicChoice::XcausesY: g.add_edge(x, y, EdgeMark::Tail, EdgeMark::Arrow); break;
      case EntropicChoice::YcausesX: g.add_edge(x, y, EdgeMark::Arrow, EdgeMark::Tail); break;
    }
    out.decisions.push_back(d);
  }

  // Orientations fixed by the rules can still close a cycle through noisy
  // tests; break each by turning one of its edges bidirected.
  while (!g.directed_acyclic()) {
    bool repaired = false;
    for (const auto& e : g.edges()) {
      for (auto [a, b] : {Pair{e.u, e.v}, Pair{e.v, e.u}}) {
        if (!repaired && g.is_directed(a, b) && g.has_directed_path(b, a)) {
          g.add_edge(a, b, EdgeMark::Arrow, EdgeMark::Arrow);
          repaired = true;
        }
      }
      if (repaired) break;
    }
    if (!repaired) break;
  }
  g.set_stage(GraphStage::ADMG);
  return out;
}

// --------------------------------------------------------------- composition

LearnResult learn_cpm_detailed(const PerformanceDataset& ds, const LearnOptions& options,
                               const MixedCausalGraph* warm_start) {
  LearnResult out;
  auto skeleton = learn_skeleton(ds, options, warm_start);
  out.skeleton = skeleton.graph;
  out.sepsets = std::move(skeleton.sepsets);
  out.tests = skeleton.tests;
  out.pag = orient_pag(out.skeleton, out.sepsets);
  auto resolved = resolve_entropic(out.pag, ds, options);
  out.graph = std::move(resolved.graph);
  out.decisions = std::move(resolved.decisions);
  return out;
}

MixedCausalGraph learn_cpm(const PerformanceDataset& ds, const LearnOptions& options) {
  return learn_cpm_detailed(ds, options).graph;
}

MixedCausalGraph incremental_update(const MixedCausalGraph& previous, const PerformanceDataset& old_rows,
                                    const PerformanceDataset& new_rows, const LearnOptions& options) {
  if (!(old_rows.schema() == new_rows.schema())) {
    throw Error(ErrorCode::InvalidArgument, "new rows do not share the schema");
  }
  if (new_rows.empty()) return previous;
  return learn_cpm_detailed(old_rows.append(new_rows), options, &previous).graph;
}

nlohmann::json to_json(const EntropicDecision& d, const MixedCausalGraph& graph) {
  return {{"x", graph.name(d.x)},
          {"y", graph.name(d.y)},
          {"entropy_x", d.entropy_x},
          {"entropy_y", d.entropy_y},
          {"confounder_entropy", d.confounder_entropy},
          {"threshold", d.threshold},
          {"confounder_checked", d.confounder_checked},
          {"noise_entropy_xy", d.noise_entropy_xy},
          {"noise_entropy_yx", d.noise_entropy_yx},
          {"total_entropy_xy", d.total_entropy_xy},
          {"total_entropy_yx", d.total_entropy_yx},
          {"chosen", to_string(d.chosen)},
          {"forced", d.forced}};
}

}  // namespace causalperf
