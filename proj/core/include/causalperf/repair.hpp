#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "causalperf/effects.hpp"
#include "causalperf/scm.hpp"

namespace causalperf {

/// Reassignment of on-path options; every other option keeps its value from
/// the fault row.
struct Repair {
  Assignment assignment;
  std::vector<std::size_t> paths;  // indices into the ranked top-K lists that produced it

  /// Options whose value differs from the fault row.
  std::size_t changed(const Row& fault_row) const;
};

/// One repair per permitted value (8-point grid for continuous options) of
/// each option on each top-K path, deduplicated across paths.
std::vector<Repair> build_repair_set(const std::vector<RankedPaths>& ranked, const Row& fault_row,
                                     const StructuralModel& model);

struct IceOptions {
  std::size_t n_mc = 1000;
  std::uint64_t seed = 0;
  /// Required relative improvement over the threshold (0: strictly better).
  double margin = 0.0;
};

struct RepairVerdict {
  Repair repair;
  double ice = 0.0;
  double p_fix = 0.0;
  double p_still_faulty = 1.0;
  /// Mean over worlds and objectives of (threshold - value) / |threshold|,
  /// oriented so that positive means better.
  double expected_improvement = 0.0;
  Row predicted;  // mean counterfactual row
  bool point_identified = true;
  bool interventional_fallback = false;
};

/// Configuration the repair describes: the fault row's options with the
/// repair applied.
Assignment repair_configuration(const Repair& repair, const Row& fault_row, const Schema& schema);

/// Scores a repair with counterfactual worlds over the fitted model. Never
/// touches a system under test. `thresholds` holds one value per objective;
/// a world is fixed when every objective is strictly better than its threshold.
RepairVerdict ice(const StructuralModel& model, const Row& fault_row, const Repair& repair,
                  const std::vector<std::size_t>& objectives, const std::vector<double>& thresholds,
                  const IceOptions& options = {});

std::vector<RepairVerdict> score_repairs(const StructuralModel& model, const Row& fault_row,
                                         const std::vector<Repair>& repairs,
                                         const std::vector<std::size_t>& objectives,
                                         const std::vector<double>& thresholds, const IceOptions& options = {});

struct BestRepair {
  RepairVerdict verdict;
  bool improving = true;  // false: "no improving repair found"
};

/// Sorted best first: higher ICE, then larger expected improvement, fewer
/// changed options, lexicographic assignment.
std::vector<RepairVerdict> rank_repairs(std::vector<RepairVerdict> verdicts, const Row& fault_row);

/// Front of rank_repairs.
BestRepair best_repair(const std::vector<RepairVerdict>& verdicts, const Row& fault_row);

/// Fault-row objective values, the default thresholds.
std::vector<double> fault_thresholds(const Row& fault_row, const std::vector<std::size_t>& objectives);

/// True when every objective is strictly better than its threshold by the margin.
bool meets_thresholds(const Schema& schema, const Row& row, const std::vector<std::size_t>& objectives,
                      const std::vector<double>& thresholds, double margin = 0.0);

nlohmann::json to_json(const RepairVerdict& verdict, const StructuralModel& model);

}  // namespace causalperf
