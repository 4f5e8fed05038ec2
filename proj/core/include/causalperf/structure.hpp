#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/entropy.hpp"
#include "causalperf/graph.hpp"

namespace causalperf {

struct LearnOptions {
  double alpha = 0.05;
  int max_depth = -1;  // -1: unbounded
  std::size_t permutations = 200;
  std::uint64_t seed = 0;
  LatentSearchOptions latent;
};

/// Separating sets keyed by (min, max) vertex index.
using SepsetMap = std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>;

struct SkeletonResult {
  MixedCausalGraph graph;
  SepsetMap sepsets;
  std::size_t tests = 0;
};

/// Order-independent (stable) adjacency search. Adjacency sets are frozen per
/// depth level, so the outcome does not depend on the order edges are visited;
/// `warm_start` only changes that order (previously absent edges first).
SkeletonResult learn_skeleton(const PerformanceDataset& ds, const LearnOptions& options,
                              const MixedCausalGraph* warm_start = nullptr);

/// Background knowledge, unshielded colliders, then rules R1-R4 to fixpoint.
MixedCausalGraph orient_pag(const MixedCausalGraph& skeleton, const SepsetMap& sepsets);

enum class EntropicChoice { Bidirected, XcausesY, YcausesX };
std::string_view to_string(EntropicChoice choice);

struct EntropicDecision {
  std::size_t x = 0;
  std::size_t y = 0;
  double entropy_x = 0.0;
  double entropy_y = 0.0;
  double confounder_entropy = 0.0;
  double threshold = 0.0;
  bool confounder_checked = false;
  /// Exogenous-noise entropy for X -> Y and Y -> X (floored at 0).
  double noise_entropy_xy = 0.0;
  double noise_entropy_yx = 0.0;
  /// H(cause) + H(noise) per direction, the quantity actually compared.
  double total_entropy_xy = 0.0;
  double total_entropy_yx = 0.0;
  EntropicChoice chosen = EntropicChoice::Bidirected;
  /// Set when marks, model constraints or acyclicity left a single option.
  bool forced = false;
};

/// 0.8 * min(H(X), H(Y)).
double entropy_threshold(double entropy_x, double entropy_y);

struct EntropicResult {
  MixedCausalGraph graph;
  std::vector<EntropicDecision> decisions;
};

/// Replaces every remaining circle mark: bidirected when a low-entropy latent
/// explains the dependence, otherwise the lower-entropy causal direction.
EntropicResult resolve_entropic(const MixedCausalGraph& pag, const PerformanceDataset& ds,
                                const LearnOptions& options = {});

struct LearnResult {
  MixedCausalGraph skeleton;
  MixedCausalGraph pag;
  MixedCausalGraph graph;
  SepsetMap sepsets;
  std::vector<EntropicDecision> decisions;
  std::size_t tests = 0;
};

LearnResult learn_cpm_detailed(const PerformanceDataset& ds, const LearnOptions& options,
                               const MixedCausalGraph* warm_start = nullptr);
MixedCausalGraph learn_cpm(const PerformanceDataset& ds, const LearnOptions& options);

/// Re-learns on old + new rows, using `previous` to order edge tests.
/// With no new rows the previous graph is returned as is.
MixedCausalGraph incremental_update(const MixedCausalGraph& previous, const PerformanceDataset& old_rows,
                                    const PerformanceDataset& new_rows, const LearnOptions& options);

nlohmann::json to_json(const EntropicDecision& decision, const MixedCausalGraph& graph);

}  // namespace causalperf
