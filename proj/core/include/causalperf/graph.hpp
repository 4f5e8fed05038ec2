#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "causalperf/dataset.hpp"

namespace causalperf {

enum class EdgeMark { Arrow, Tail, Circle };
enum class GraphStage { Skeleton, PAG, ADMG };

std::string_view to_string(EdgeMark mark);
std::string_view to_string(GraphStage stage);

/// Canonical edge view with u < v.
struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;
  EdgeMark mark_u = EdgeMark::Circle;
  EdgeMark mark_v = EdgeMark::Circle;

  bool operator==(const Edge&) const = default;
};

/// Mixed graph over typed vertices. Every edge stores one mark per endpoint;
/// `mark(a, b)` is the mark at b's end of the a-b edge.
class MixedCausalGraph {
 public:
  MixedCausalGraph() = default;
  MixedCausalGraph(std::vector<std::string> names, std::vector<VariableKind> kinds);
  static MixedCausalGraph for_schema(const Schema& schema);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t v) const { return names_[v]; }
  VariableKind kind(std::size_t v) const { return kinds_[v]; }
  std::size_t index_of(std::string_view name) const;

  GraphStage stage() const { return stage_; }
  void set_stage(GraphStage stage) { stage_ = stage; }

  bool adjacent(std::size_t a, std::size_t b) const;
  std::optional<EdgeMark> mark(std::size_t a, std::size_t b) const;
  void add_edge(std::size_t a, std::size_t b, EdgeMark at_a, EdgeMark at_b);
  void set_mark(std::size_t a, std::size_t b, EdgeMark at_b);
  void remove_edge(std::size_t a, std::size_t b);

  /// a -> b: tail at a, arrow at b.
  bool is_directed(std::size_t a, std::size_t b) const;
  bool is_bidirected(std::size_t a, std::size_t b) const;

  std::vector<std::size_t> adjacents(std::size_t v) const;
  std::vector<std::size_t> parents(std::size_t v) const;
  std::vector<std::size_t> children(std::size_t v) const;
  std::vector<std::size_t> spouses(std::size_t v) const;

  std::vector<Edge> edges() const;
  std::size_t edge_count() const;

  bool has_directed_path(std::size_t from, std::size_t to) const;
  /// Topological order of the directed part; throws InvalidArgument on a cycle.
  std::vector<std::size_t> topological_order() const;
  bool directed_acyclic() const;

  /// Violations of the stage invariants and of the performance-model
  /// structural constraints (options are unconfounded roots, objectives emit
  /// no directed edges, options are never adjacent to each other).
  std::vector<std::string> violations() const;

  bool operator==(const MixedCausalGraph& other) const;

 private:
  std::size_t slot(std::size_t a, std::size_t b) const { return a * names_.size() + b; }

  std::vector<std::string> names_;
  std::vector<VariableKind> kinds_;
  std::vector<signed char> marks_;
  GraphStage stage_ = GraphStage::Skeleton;
};

nlohmann::json to_json(const MixedCausalGraph& graph);
MixedCausalGraph graph_from_json(const nlohmann::json& doc);
std::string to_dot(const MixedCausalGraph& graph);

/// Structural Hamming distance: one per unordered pair whose adjacency or
/// endpoint marks differ (a flip or a directed/bidirected mismatch counts 1).
std::size_t shd(const MixedCausalGraph& a, const MixedCausalGraph& b);

/// m-separation of a and b given `given` in an ADMG (directed and
/// bidirected edges only; bidirected edges stand for latent common causes).
bool m_separated(const MixedCausalGraph& g, std::size_t a, std::size_t b, const std::vector<std::size_t>& given);

}  // namespace causalperf
