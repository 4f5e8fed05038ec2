#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "causalperf/scm.hpp"

namespace causalperf {

struct AceOptions {
  std::size_t n_mc = 1000;
  std::uint64_t seed = 0;
};

struct AceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  /// False when no directed route x -> z exists; value is then exactly 0.
  bool downstream = true;
};

/// Values the cause is set to: sorted levels for discrete causes, an 8-point
/// equal-width grid over the domain (or the observed range when unbounded)
/// for continuous ones.
std::vector<double> cause_grid(const StructuralModel& model, std::size_t x);

/// Average of E[Z | do(X = b)] - E[Z | do(X = a)] over consecutive grid
/// values, with common random numbers across values. System events are set
/// by forced-value simulation.
AceEstimate ace(const StructuralModel& model, std::size_t x, std::size_t z, const AceOptions& options = {});

struct CausalPath {
  std::vector<std::size_t> vertices;  // source ... objective
  std::vector<double> edge_ace;       // signed, one per consecutive pair
  double path_ace = 0.0;              // mean |edge ACE|
};

/// Maximal directed paths ending at the objective, one branch per parent.
std::vector<CausalPath> extract_paths(const MixedCausalGraph& graph, std::size_t objective);

struct OptionEffect {
  std::size_t option = 0;
  AceEstimate estimate;
  double share = 0.0;  // |ACE| / sum over options of |ACE| toward the objective
};

struct RankedPaths {
  std::size_t objective = 0;
  std::size_t k = 5;
  std::vector<CausalPath> paths;  // all paths, best first; top-K is the prefix
  std::map<std::pair<std::size_t, std::size_t>, AceEstimate> edge_ace;
  std::vector<OptionEffect> option_effects;  // every option, schema order

  std::vector<CausalPath> top() const;
};

RankedPaths rank_paths(const StructuralModel& model, std::vector<CausalPath> paths, std::size_t objective,
                       std::size_t k, const AceOptions& options = {});
RankedPaths rank_paths(const StructuralModel& model, std::size_t objective, std::size_t k,
                       const AceOptions& options = {});

struct RootCause {
  std::size_t option = 0;
  double score = 0.0;  // sum over objectives of the option's |ACE| share
};

/// Options on the top-K paths of any objective, highest aggregate score first.
std::vector<RootCause> root_causes(const std::vector<RankedPaths>& ranked);

nlohmann::json to_json(const RankedPaths& ranked, const StructuralModel& model);
nlohmann::json to_json(const std::vector<RootCause>& causes, const StructuralModel& model);

}  // namespace causalperf
