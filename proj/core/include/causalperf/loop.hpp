#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/effects.hpp"
#include "causalperf/graph.hpp"
#include "causalperf/repair.hpp"
#include "causalperf/scm.hpp"
#include "causalperf/structure.hpp"

namespace causalperf {

/// Measurement backend: configuration (one value per option) -> full row.
class SystemUnderTest {
 public:
  virtual ~SystemUnderTest() = default;
  virtual const Schema& schema() const = 0;
  Row measure(const Assignment& configuration);
  std::size_t calls() const { return calls_; }

 protected:
  virtual Row do_measure(const Assignment& configuration) = 0;

 private:
  std::size_t calls_ = 0;
};

/// Looks configurations up in a measured table (exact option match). Repeated
/// requests cycle through the replicates of that configuration.
class ReplaySut : public SystemUnderTest {
 public:
  explicit ReplaySut(PerformanceDataset table);
  const Schema& schema() const override { return table_.schema(); }

 protected:
  Row do_measure(const Assignment& configuration) override;

 private:
  PerformanceDataset table_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::size_t> cursor_;
};

/// Runs a shell command per measurement: the configuration goes to stdin as
/// a JSON object, one JSON object with every variable comes back on stdout.
class CommandSut : public SystemUnderTest {
 public:
  CommandSut(std::string command, Schema schema);
  const Schema& schema() const override { return schema_; }

 protected:
  Row do_measure(const Assignment& configuration) override;

 private:
  std::string command_;
  Schema schema_;
};

struct Budget {
  std::size_t max_samples = 250;
  std::chrono::duration<double> max_wallclock{0.0};  // 0: unlimited
  std::size_t repeat_stop = 5;
};

enum class LoopMode { Debug, Optimize };
std::string_view to_string(LoopMode mode);

struct LoopParams {
  LearnOptions learn;
  int degree = 2;
  std::size_t k = 5;
  std::size_t ace_mc = 200;
  std::size_t ice_mc = 1000;
  double margin = 0.0;
  /// Per-objective targets; defaults to the fault row's values.
  std::optional<std::vector<double>> targets;
  /// 0: max(25, 10% of the budget).
  std::size_t initial_samples = 0;
  double epsilon = 0.01;
  std::uint64_t seed = 0;
};

std::size_t default_initial_samples(const Budget& budget);

/// n uniformly random configurations over the option domains, measured.
PerformanceDataset initial_sample(SystemUnderTest& sut, std::size_t n, std::uint64_t seed);

/// Uniform random configuration (continuous options use the 8-point grid).
Assignment random_configuration(const Schema& schema, Rng& rng);

/// Per-option selection weights max(epsilon, normalized |ACE|) averaged over
/// the ranked objectives, in schema option order.
std::vector<double> selection_weights(const Schema& schema, const std::vector<RankedPaths>& ranked, double epsilon);

/// Changes one option of `base`, chosen with probability proportional to its
/// weight; the new value is drawn from values never measured for that option,
/// otherwise from the rest of its domain.
Assignment next_configuration(const Schema& schema, const PerformanceDataset& measured, const Assignment& base,
                              const std::vector<double>& weights, Rng& rng);

/// (fault - nofault) / |fault| * 100 on oriented values (larger is worse).
double gain(double nfp_fault, double nfp_nofault);
double gain(const Variable& objective, double fault_value, double nofault_value);

struct TraceEntry {
  std::size_t iteration = 0;
  std::string source;  // initial | repair | explore
  Assignment configuration;
  Row measurement;
  std::optional<std::size_t> shd;
  double best_so_far = 0.0;
  bool target_met = false;
};

nlohmann::json to_json(const TraceEntry& entry, const Schema& schema);

struct StepResult {
  std::size_t iteration = 0;
  std::size_t measured = 0;  // rows measured in this step
  bool done = false;
  std::string stop_reason;
  nlohmann::json summary;
};

/// Active-learning loop as a state machine; each step() is one iteration.
/// Iteration 0 draws the initial sample.
class LoopSession {
 public:
  LoopSession(SystemUnderTest& sut, LoopMode mode, std::vector<std::size_t> objectives, Budget budget,
              LoopParams params, std::optional<Row> fault_row = std::nullopt,
              std::optional<MixedCausalGraph> truth = std::nullopt);

  StepResult step();
  bool done() const { return done_; }
  const std::string& stop_reason() const { return stop_reason_; }
  std::size_t samples_used() const { return samples_used_; }
  std::size_t iteration() const { return iteration_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  const PerformanceDataset& dataset() const { return data_; }
  const std::vector<std::size_t>& objectives() const { return objectives_; }
  const std::vector<double>& targets() const { return targets_; }
  LoopMode mode() const { return mode_; }
  const std::optional<Row>& fault_row() const { return fault_row_; }
  const std::optional<MixedCausalGraph>& graph() const { return graph_; }
  std::optional<std::size_t> first_fix() const { return first_fix_; }
  /// Options on the top-K paths of the latest model, highest score first.
  const std::vector<std::size_t>& root_causes() const { return root_causes_; }

  /// Best measured row (lowest scalarized score), if any.
  std::optional<Row> best_row() const;
  double score(const Row& row) const;
  /// Measured rows whose objective vectors are nondominated.
  std::vector<Row> pareto_front() const;

  nlohmann::json outcome() const;

 private:
  void record(const Assignment& config, const Row& row, const std::string& source);
  bool out_of_budget() const;
  bool measured_before(const Assignment& config) const;
  void finish(std::string reason);
  /// Re-learns on the final data so a debug run always reports root causes.
  void diagnose_final();

  SystemUnderTest& sut_;
  LoopMode mode_;
  std::vector<std::size_t> objectives_;
  Budget budget_;
  LoopParams params_;
  std::optional<Row> fault_row_;
  std::optional<MixedCausalGraph> truth_;
  std::vector<double> targets_;
  std::vector<double> scales_;
  PerformanceDataset data_;
  std::optional<MixedCausalGraph> graph_;
  std::vector<TraceEntry> trace_;
  std::size_t iteration_ = 0;
  std::size_t samples_used_ = 0;
  std::size_t repeats_ = 0;
  std::optional<Assignment> last_selection_;
  std::optional<std::size_t> first_fix_;
  std::vector<std::size_t> root_causes_;
  std::size_t diagnosed_rows_ = 0;
  bool done_ = false;
  std::string stop_reason_;
  Rng rng_;
  std::chrono::steady_clock::time_point started_;
};

struct DebugOutcome {
  bool fixed = false;
  Assignment repair;
  Row measurement;
  std::vector<double> gain;  // per objective, percent
  std::size_t samples_used = 0;
  std::optional<std::size_t> samples_to_fix;
  std::string stop_reason;
  std::vector<TraceEntry> trace;
};

DebugOutcome run_debug(SystemUnderTest& sut, const Row& fault_row, const std::vector<std::size_t>& objectives,
                       const Budget& budget, const LoopParams& params,
                       const std::optional<MixedCausalGraph>& truth = std::nullopt);

struct OptimizeOutcome {
  Assignment best_config;
  Row best_row;
  std::vector<Row> pareto_front;
  std::size_t samples_used = 0;
  std::string stop_reason;
  std::vector<TraceEntry> trace;
};

OptimizeOutcome run_optimize(SystemUnderTest& sut, const std::vector<std::size_t>& objectives, const Budget& budget,
                             const LoopParams& params);

void write_trace(std::ostream& out, const std::vector<TraceEntry>& trace, const Schema& schema);

Assignment options_of(const Row& row, const Schema& schema);

}  // namespace causalperf
