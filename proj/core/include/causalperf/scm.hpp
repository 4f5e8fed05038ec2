#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/graph.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

/// One regressor column before polynomial expansion: a numeric parent divided
/// by `scale`, or the indicator of one categorical level.
struct BaseFeature {
  std::size_t parent = 0;
  std::optional<double> level;
  double scale = 1.0;
};

/// y = sum_t coefficients[t] * prod(base features in terms[t]).
struct Mechanism {
  std::vector<std::size_t> parents;
  int degree = 1;
  std::vector<BaseFeature> base;
  std::vector<std::vector<std::size_t>> terms;  // {} is the intercept
  Eigen::VectorXd coefficients;

  double evaluate(const Row& values) const;
  /// Coefficients on the unscaled parent values, aligned with `terms`.
  Eigen::VectorXd raw_coefficients() const;
};

struct VertexModel {
  bool root = true;
  Mechanism mechanism;
  /// Residuals of the fit (non-root) or observed values (root), one per training row.
  std::vector<double> bank;
  double observed_min = 0.0;
  double observed_max = 0.0;
};

/// Polynomial structural equations with additive empirical noise over an ADMG.
class StructuralModel {
 public:
  const Schema& schema() const { return schema_; }
  const MixedCausalGraph& graph() const { return graph_; }
  const VertexModel& vertex(std::size_t v) const { return vertices_[v]; }
  const std::vector<std::size_t>& order() const { return order_; }
  int degree() const { return degree_; }
  std::size_t bank_size() const { return bank_size_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Vertices linked by bidirected edges share one component; their noise is
  /// drawn from the same residual row.
  const std::vector<std::vector<std::size_t>>& components() const { return components_; }

  /// Exogenous terms for one world: root values for roots, residuals otherwise.
  std::vector<double> draw_exogenous(Rng& rng) const;

  /// Forward pass in topological order. Fixed vertices are pinned; all values
  /// are projected into their domains. `forced` allows fixing observe-only
  /// variables (used for effects of system events).
  Row propagate(const Assignment& fixed, const std::vector<double>& exogenous, bool forced = false) const;

  void check_interventions(const Assignment& interventions, bool forced) const;

 private:
  friend StructuralModel fit(const MixedCausalGraph& graph, const PerformanceDataset& ds, int degree);
  friend StructuralModel model_from_json(const nlohmann::json& doc);
  void finalize();

  Schema schema_;
  MixedCausalGraph graph_;
  std::vector<VertexModel> vertices_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<std::size_t>> components_;
  std::vector<std::size_t> component_of_;
  int degree_ = 2;
  std::size_t bank_size_ = 0;
  std::vector<std::string> warnings_;
};

/// Least-squares polynomial fit of every vertex on its directed parents.
/// A vertex with fewer rows than terms falls back to degree 1 (warning).
StructuralModel fit(const MixedCausalGraph& graph, const PerformanceDataset& ds, int degree = 2);

/// Observational / interventional sampling.
PerformanceDataset simulate(const StructuralModel& model, std::size_t n, const Assignment& interventions,
                            std::uint64_t seed);

struct CounterfactualOptions {
  std::size_t n_mc = 1000;
  std::uint64_t seed = 0;
  bool forced = false;
};

struct CounterfactualResult {
  /// One row per Monte-Carlo world; a single world when every noise term
  /// is point-identified from the factual row.
  std::vector<Row> worlds;
  Row mean;
  bool point_identified = true;
  bool interventional_fallback = false;
  std::vector<std::size_t> fallback_vertices;
};

/// Abduction (additive noise solved from the factual row), action, prediction.
/// NaN entries of the factual row are unobserved and drawn from the banks.
CounterfactualResult counterfactual(const StructuralModel& model, const Row& factual, const Assignment& interventions,
                                    const CounterfactualOptions& options = {});

nlohmann::json to_json(const StructuralModel& model);
StructuralModel model_from_json(const nlohmann::json& doc);

}  // namespace causalperf
