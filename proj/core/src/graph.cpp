#include "causalperf/graph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

constexpr signed char kNoEdge = -1;

EdgeMark parse_mark(std::string_view text) {
  if (text == "Arrow") return EdgeMark::Arrow;
  if (text == "Tail") return EdgeMark::Tail;
  if (text == "Circle") return EdgeMark::Circle;
  throw Error(ErrorCode::ParseError, "unknown edge mark '" + std::string(text) + "'");
}

GraphStage parse_stage(std::string_view text) {
  if (text == "Skeleton") return GraphStage::Skeleton;
  if (text == "PAG") return GraphStage::PAG;
  if (text == "ADMG") return GraphStage::ADMG;
  throw Error(ErrorCode::ParseError, "unknown graph stage '" + std::string(text) + "'");
}

}  // namespace

std::string_view to_string(EdgeMark mark) {
  switch (mark) {
    case EdgeMark::Arrow: return "Arrow";
    case EdgeMark::Tail: return "Tail";
    case EdgeMark::Circle: return "Circle";
  }
  return "Circle";
}

std::string_view to_string(GraphStage stage) {
  switch (stage) {
    case GraphStage::Skeleton: return "Skeleton";
    case GraphStage::PAG: return "PAG";
    case GraphStage::ADMG: return "ADMG";
  }
  return "Skeleton";
}

MixedCausalGraph::MixedCausalGraph(std::vector<std::string> names, std::vector<VariableKind> kinds)
    : names_(std::move(names)), kinds_(std::move(kinds)) {
  if (names_.size() != kinds_.size()) throw Error(ErrorCode::InvalidArgument, "names/kinds size mismatch");
  marks_.assign(names_.size() * names_.size(), kNoEdge);
}

MixedCausalGraph MixedCausalGraph::for_schema(const Schema& schema) {
  std::vector<std::string> names;
  std::vector<VariableKind> kinds;
  for (const auto& v : schema.variables()) {
    names.push_back(v.name);
    kinds.push_back(v.kind);
  }
  return MixedCausalGraph(std::move(names), std::move(kinds));
}

std::size_t MixedCausalGraph::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error(ErrorCode::NotFound, "unknown vertex '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

bool MixedCausalGraph::adjacent(std::size_t a, std::size_t b) const {
  return marks_[slot(a, b)] != kNoEdge;
}

std::optional<EdgeMark> MixedCausalGraph::mark(std::size_t a, std::size_t b) const {
  const auto m = marks_[slot(a, b)];
  if (m == kNoEdge) return std::nullopt;
  return static_cast<EdgeMark>(m);
}

void MixedCausalGraph::add_edge(std::size_t a, std::size_t b, EdgeMark at_a, EdgeMark at_b) {
  if (a == b) throw Error(ErrorCode::InvalidArgument, "self-loops are not allowed");
  marks_[slot(b, a)] = static_cast<signed char>(at_a);
  marks_[slot(a, b)] = static_cast<signed char>(at_b);
}

void MixedCausalGraph::set_mark(std::size_t a, std::size_t b, EdgeMark at_b) {
  if (!adjacent(a, b)) throw Error(ErrorCode::InvalidArgument, "no edge " + names_[a] + " - " + names_[b]);
  marks_[slot(a, b)] = static_cast<signed char>(at_b);
}

void MixedCausalGraph::remove_edge(std::size_t a, std::size_t b) {
  marks_[slot(a, b)] = kNoEdge;
  marks_[slot(b, a)] = kNoEdge;
}

bool MixedCausalGraph::is_directed(std::size_t a, std::size_t b) const {
  return mark(b, a) == EdgeMark::Tail && mark(a, b) == EdgeMark::Arrow;
}

bool MixedCausalGraph::is_bidirected(std::size_t a, std::size_t b) const {
  return mark(b, a) == EdgeMark::Arrow && mark(a, b) == EdgeMark::Arrow;
}

std::vector<std::size_t> MixedCausalGraph::adjacents(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (adjacent(v, u)) out.push_back(u);
  }
  return out;
}

std::vector<std::size_t> MixedCausalGraph::parents(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (adjacent(u, v) && is_directed(u, v)) out.push_back(u);
  }
  return out;
}

std::vector<std::size_t> MixedCausalGraph::children(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (adjacent(u, v) && is_directed(v, u)) out.push_back(u);
  }
  return out;
}

std::vector<std::size_t> MixedCausalGraph::spouses(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < size(); ++u) {
    if (adjacent(u, v) && is_bidirected(u, v)) out.push_back(u);
  }
  return out;
}

std::vector<Edge> MixedCausalGraph::edges() const {
  std::vector<Edge> out;
  for (std::size_t u = 0; u < size(); ++u) {
    for (std::size_t v = u + 1; v < size(); ++v) {
      if (adjacent(u, v)) out.push_back({u, v, *mark(v, u), *mark(u, v)});
    }
  }
  return out;
}

std::size_t MixedCausalGraph::edge_count() const {
  std::size_t count = 0;
  for (std::size_t u = 0; u < size(); ++u) {
    for (std::size_t v = u + 1; v < size(); ++v) count += adjacent(u, v) ? 1 : 0;
  }
  return count;
}

bool MixedCausalGraph::has_directed_path(std::size_t from, std::size_t to) const {
  std::vector<bool> seen(size(), false);
  std::deque<std::size_t> queue{from};
  seen[from] = true;
  while (!queue.empty()) {
    const auto cur = queue.front();
    queue.pop_front();
    for (auto c : children(cur)) {
      if (c == to) return true;
      if (!seen[c]) {
        seen[c] = true;
        queue.push_back(c);
      }
    }
  }
  return false;
}

std::vector<std::size_t> MixedCausalGraph::topological_order() const {
  std::vector<std::size_t> indegree(size(), 0);
  for (std::size_t v = 0; v < size(); ++v) indegree[v] = parents(v).size();
  std::vector<std::size_t> order;
  std::vector<std::size_t> ready;
  for (std::size_t v = 0; v < size(); ++v) {
    if (indegree[v] == 0) ready.push_back(v);
  }
  while (!ready.empty()) {
    // Smallest index first keeps the order deterministic.
    auto it = std::min_element(ready.begin(), ready.end());
    const auto v = *it;
    ready.erase(it);
    order.push_back(v);
    for (auto c : children(v)) {
      if (--indegree[c] == 0) ready.push_back(c);
    }
  }
  if (order.size() != size()) throw Error(ErrorCode::InvalidArgument, "directed part contains a cycle");
  return order;
}

bool MixedCausalGraph::directed_acyclic() const {
  try {
    topological_order();
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::vector<std::string> MixedCausalGraph::violations() const {
  std::vector<std::string> out;
  for (const auto& e : edges()) {
    const auto& a = names_[e.u];
    const auto& b = names_[e.v];
    if (stage_ == GraphStage::ADMG && (e.mark_u == EdgeMark::Circle || e.mark_v == EdgeMark::Circle)) {
      out.push_back("circle mark on " + a + " - " + b + " in an ADMG");
    }
    if (stage_ == GraphStage::ADMG && e.mark_u == EdgeMark::Tail && e.mark_v == EdgeMark::Tail) {
      out.push_back("undirected edge " + a + " - " + b + " in an ADMG");
    }
    if (kinds_[e.u] == VariableKind::Option && kinds_[e.v] == VariableKind::Option) {
      out.push_back("edge between options " + a + " and " + b);
    }
    for (auto [x, y, mark_x, mark_y] : {std::tuple{e.u, e.v, e.mark_u, e.mark_v},
                                        std::tuple{e.v, e.u, e.mark_v, e.mark_u}}) {
      if (kinds_[x] == VariableKind::Option && mark_x == EdgeMark::Arrow) {
        out.push_back("arrowhead into option " + names_[x]);
      }
      if (kinds_[x] == VariableKind::Objective && mark_x == EdgeMark::Tail && mark_y == EdgeMark::Arrow) {
        out.push_back("objective " + names_[x] + " has an outgoing directed edge");
      }
    }
  }
  if (stage_ == GraphStage::ADMG && !directed_acyclic()) out.push_back("directed cycle");
  return out;
}

bool MixedCausalGraph::operator==(const MixedCausalGraph& other) const {
  return names_ == other.names_ && kinds_ == other.kinds_ && marks_ == other.marks_ &&
         stage_ == other.stage_;
}

json to_json(const MixedCausalGraph& graph) {
  json vertices = json::array();
  for (std::size_t v = 0; v < graph.size(); ++v) {
    vertices.push_back({{"name", graph.name(v)}, {"kind", to_string(graph.kind(v))}});
  }
  json edges = json::array();
  for (const auto& e : graph.edges()) {
    edges.push_back({{"u", graph.name(e.u)},
                     {"v", graph.name(e.v)},
                     {"mark_u", to_string(e.mark_u)},
                     {"mark_v", to_string(e.mark_v)}});
  }
  return {{"stage", to_string(graph.stage())}, {"vertices", vertices}, {"edges", edges}};
}

MixedCausalGraph graph_from_json(const json& doc) {
  try {
    std::vector<std::string> names;
    std::vector<VariableKind> kinds;
    for (const auto& v : doc.at("vertices")) {
      names.push_back(v.at("name").get<std::string>());
      kinds.push_back(parse_variable_kind(v.at("kind").get<std::string>()));
    }
    MixedCausalGraph g(std::move(names), std::move(kinds));
    for (const auto& e : doc.at("edges")) {
      g.add_edge(g.index_of(e.at("u").get<std::string>()), g.index_of(e.at("v").get<std::string>()),
                 parse_mark(e.at("mark_u").get<std::string>()), parse_mark(e.at("mark_v").get<std::string>()));
    }
    g.set_stage(parse_stage(doc.value("stage", std::string("ADMG"))));
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed graph JSON: ") + e.what());
  }
}

std::string to_dot(const MixedCausalGraph& graph) {
  auto arrowhead = [](EdgeMark m) {
    switch (m) {
      case EdgeMark::Arrow: return "normal";
      case EdgeMark::Tail: return "none";
      case EdgeMark::Circle: return "odot";
    }
    return "none";
  };
  std::ostringstream os;
  os << "digraph cpm {\n  rankdir=TB;\n";
  for (std::size_t v = 0; v < graph.size(); ++v) {
    const char* shape = graph.kind(v) == VariableKind::Option        ? "box"
                        : graph.kind(v) == VariableKind::SystemEvent ? "ellipse"
                                                                     : "doubleoctagon";
    os << "  \"" << graph.name(v) << "\" [shape=" << shape << "];\n";
  }
  for (const auto& e : graph.edges()) {
    os << "  \"" << graph.name(e.u) << "\" -> \"" << graph.name(e.v) << "\" [dir=both, arrowtail="
       << arrowhead(e.mark_u) << ", arrowhead=" << arrowhead(e.mark_v) << "];\n";
  }
  os << "}\n";
  return os.str();
}

std::size_t shd(const MixedCausalGraph& a, const MixedCausalGraph& b) {
  if (a.names() != b.names()) throw Error(ErrorCode::VertexMismatch, "graphs have different vertex sets");
  std::size_t distance = 0;
  for (std::size_t u = 0; u < a.size(); ++u) {
    for (std::size_t v = u + 1; v < a.size(); ++v) {
      const bool in_a = a.adjacent(u, v);
      const bool in_b = b.adjacent(u, v);
      if (in_a != in_b) {
        ++distance;
      } else if (in_a && (a.mark(u, v) != b.mark(u, v) || a.mark(v, u) != b.mark(v, u))) {
        ++distance;
      }
    }
  }
  return distance;
}

bool m_separated(const MixedCausalGraph& g, std::size_t a, std::size_t b, const std::vector<std::size_t>& given) {
  const std::size_t n = g.size();
  // Expand bidirected edges into explicit latent parents, then moralize the
  // ancestral set of {a, b} and `given`.
  std::vector<std::vector<std::size_t>> parents(n);
  for (const auto& e : g.edges()) {
    if (g.is_directed(e.u, e.v)) {
      parents[e.v].push_back(e.u);
    } else if (g.is_directed(e.v, e.u)) {
      parents[e.u].push_back(e.v);
    } else if (g.is_bidirected(e.u, e.v)) {
      parents.emplace_back();
      parents[e.u].push_back(parents.size() - 1);
      parents[e.v].push_back(parents.size() - 1);
    } else {
      throw Error(ErrorCode::InvalidArgument, "m-separation needs a graph without circle or undirected edges");
    }
  }
  const std::size_t total = parents.size();
  std::vector<bool> ancestral(total, false), blocked(total, false);
  std::vector<std::size_t> stack{a, b};
  for (auto v : given) {
    stack.push_back(v);
    blocked[v] = true;
  }
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    if (ancestral[v]) continue;
    ancestral[v] = true;
    for (auto p : parents[v]) stack.push_back(p);
  }
  std::vector<std::vector<std::size_t>> moral(total);
  for (std::size_t v = 0; v < total; ++v) {
    if (!ancestral[v]) continue;
    const auto& ps = parents[v];
    for (std::size_t i = 0; i < ps.size(); ++i) {
      moral[v].push_back(ps[i]);
      moral[ps[i]].push_back(v);
      for (std::size_t j = i + 1; j < ps.size(); ++j) {
        moral[ps[i]].push_back(ps[j]);
        moral[ps[j]].push_back(ps[i]);
      }
    }
  }
  if (blocked[a] || blocked[b]) return true;
  std::vector<bool> seen(total, false);
  stack = {a};
  seen[a] = true;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    for (auto w : moral[v]) {
      if (w == b) return false;
      if (!seen[w] && !blocked[w]) {
        seen[w] = true;
        stack.push_back(w);
      }
    }
  }
  return true;
}

}  // namespace causalperf
