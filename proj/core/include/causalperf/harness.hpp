#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/graph.hpp"
#include "causalperf/loop.hpp"
#include "causalperf/pareto.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

struct WorldSpec {
  std::size_t n_options = 6;
  std::size_t n_events = 6;
  std::size_t n_objectives = 2;
  double density = 0.3;
  std::uint64_t seed = 0;
  /// Adds squared option terms and option x parent interactions.
  bool nonlinear = false;
  /// Unmeasured common causes between event pairs (bidirected in the truth).
  std::size_t hidden_confounders = 0;
  std::size_t min_levels = 2;
  std::size_t max_levels = 4;
  /// Event noise sd; mechanisms are scaled to unit parent-driven variance.
  double noise_sd = 0.3;
  double objective_noise_sd = 0.1;
  /// Minimum population |partial correlation| of every true adjacency
  /// under conditioning sets of up to 3 vertices (strong faithfulness).
  double faithfulness = 0.1;
  /// Fraction of sweep measurements meeting every QoS target of the faulty objectives.
  double target_fraction = 0.01;
};

/// Polynomial mechanism: intercept + linear terms + product terms + noise.
/// Product terms always involve at least one option, so every vertex stays
/// linear in the noise once the options are fixed.
struct TrueMechanism {
  struct Linear {
    std::size_t parent;
    double coef;
  };
  struct Product {
    std::size_t a, b;  // a == b: square
    double coef;
  };
  double intercept = 0.0;
  std::vector<Linear> linear;
  std::vector<Product> products;
  double noise_sd = 0.0;
};

struct HiddenConfounder {
  std::size_t a, b;
  double coef_a, coef_b;
};

struct InjectedFault {
  Row row;
  /// Frozen exogenous terms: one per vertex, then one per hidden confounder.
  std::vector<double> noise;
  std::vector<std::size_t> faulty_objectives;
  std::vector<double> thresholds;  // 99th-percentile tail, per objective
  /// QoS targets per objective; objectives that are not faulty keep the fault value.
  std::vector<double> targets;
  std::vector<std::size_t> root_causes;
  Assignment best_repair;
};

struct GroundTruthWorld {
  WorldSpec spec;
  Schema schema;
  MixedCausalGraph graph;
  std::vector<TrueMechanism> mechanisms;  // empty for options
  std::vector<HiddenConfounder> confounders;
  std::optional<InjectedFault> fault;
  bool enumerable = false;
  std::vector<std::size_t> order;  // topological order of the truth graph

  std::vector<std::size_t> objectives() const { return schema.objectives(); }
  bool linear() const;
};

/// Configurations kept at or below this count are swept exhaustively.
constexpr std::size_t kEnumerableConfigurations = 10000;

GroundTruthWorld generate_world(const WorldSpec& spec);

/// Smallest population |partial correlation| over pairs that are
/// m-connected given a conditioning set of size <= max_cond. Stops early
/// once the running minimum drops below `stop_below`.
double faithfulness_margin(const MixedCausalGraph& graph, const Eigen::MatrixXd& covariance, std::size_t max_cond,
                           double stop_below = 0.0);

std::size_t configuration_count(const Schema& schema);
/// Every option configuration, first option varying slowest.
std::vector<Assignment> all_configurations(const Schema& schema);

std::vector<double> draw_noise(const GroundTruthWorld& world, Rng& rng);
/// Row for `configuration` under the given exogenous terms.
Row evaluate(const GroundTruthWorld& world, const Assignment& configuration, const std::vector<double>& noise);
/// Noise-free row; equals the expected row because mechanisms are linear in the noise.
Row expected_row(const GroundTruthWorld& world, const Assignment& configuration);

/// n rows with uniformly random configurations (options in `fixed` pinned).
PerformanceDataset simulate_world(const GroundTruthWorld& world, std::size_t n, std::uint64_t seed,
                                  const Assignment& fixed = {});

/// Fresh noise on every call; deterministic given the seed.
class SimulatedSut : public SystemUnderTest {
 public:
  SimulatedSut(const GroundTruthWorld& world, std::uint64_t seed) : world_(world), rng_(seed) {}
  const Schema& schema() const override { return world_.schema; }

 protected:
  Row do_measure(const Assignment& configuration) override;

 private:
  const GroundTruthWorld& world_;
  Rng rng_;
};

struct OracleAce {
  double value = 0.0;
  double std_error = 0.0;
};

/// ACE of option x on z on the true mechanisms, with the contrast used by
/// effects::ace: consecutive grid levels, the other options uniform over
/// their levels. Exact by enumeration when the world is enumerable (closed
/// form for linear worlds), otherwise Monte Carlo with its standard error.
OracleAce oracle_ace(const GroundTruthWorld& world, std::size_t x, std::size_t z, std::uint64_t seed = 0);
/// Per-unit total effect: sum over directed paths of coefficient products.
/// Ignores product terms, so it is the exact effect only in linear worlds.
double linear_total_effect(const GroundTruthWorld& world, std::size_t x, std::size_t z);

/// The sweep used for fault labelling: noisy rows for every configuration
/// (replicated up to 2048 rows) when enumerable, otherwise 4096 random ones.
PerformanceDataset fault_sweep(const GroundTruthWorld& world);

/// Outcome of the fault row with its noise frozen and options reassigned.
Row frozen_outcome(const GroundTruthWorld& world, const Assignment& configuration);

/// Sum of objective values oriented so larger is worse, each divided by |fault value|.
double fault_score(const GroundTruthWorld& world, const Row& row);

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;
  std::vector<double> gain;  // per faulty objective
  std::optional<std::size_t> shd;
  std::optional<double> hypervolume_error;
};

/// ACE-weighted Jaccard in percent; falls back to plain Jaccard when every
/// weight in the union is zero.
double weighted_jaccard(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                        const std::vector<double>& weights);

/// Per-option weights |oracle ACE| summed over the faulty objectives.
std::vector<double> root_cause_weights(const GroundTruthWorld& world);

MetricReport metrics(const std::vector<std::size_t>& predicted_root_causes, const GroundTruthWorld& world,
                     const Row& measured_fix, const MixedCausalGraph* learned = nullptr);

/// Pareto front of expected objective vectors over every configuration
/// (oriented, minimization).
std::vector<Point> oracle_front(const GroundTruthWorld& world);

/// Configuration with the lowest expected scalarized objective.
Assignment exhaustive_optimum(const GroundTruthWorld& world, std::size_t objective);

struct BaselineOutcome {
  std::optional<std::size_t> samples_to_fix;
  std::size_t samples_used = 0;
  Row best;
};

/// Uniform random search until every objective meets `targets` strictly.
BaselineOutcome random_search(SystemUnderTest& sut, const std::vector<std::size_t>& objectives,
                              const std::vector<double>& targets, std::size_t budget, std::uint64_t seed,
                              double margin = 0.0);

nlohmann::json to_json(const GroundTruthWorld& world);
GroundTruthWorld world_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MetricReport& report);

}  // namespace causalperf
