#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/error.hpp"
#include "causalperf/graph.hpp"
#include "causalperf/rng.hpp"

namespace testing {

using namespace causalperf;

inline Variable option(const std::string& name, std::vector<double> values) {
  Variable v;
  v.name = name;
  v.kind = VariableKind::Option;
  v.domain = DiscreteDomain{std::move(values)};
  v.intervenable = true;
  return v;
}

inline Variable event(const std::string& name) {
  Variable v;
  v.name = name;
  v.kind = VariableKind::SystemEvent;
  return v;
}

inline Variable discrete_event(const std::string& name, std::vector<double> values) {
  Variable v = event(name);
  v.domain = DiscreteDomain{std::move(values)};
  return v;
}

inline Variable objective(const std::string& name, ObjectiveDirection dir = ObjectiveDirection::Minimize) {
  Variable v;
  v.name = name;
  v.kind = VariableKind::Objective;
  v.direction = dir;
  return v;
}

inline std::vector<double> range(int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(i);
  return out;
}

/// Code thrown by f, or nullopt when it returns normally.
inline std::optional<ErrorCode> error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// O (4 levels) -> E -> P, linear-Gaussian.
inline PerformanceDataset chain_data(std::size_t n, std::uint64_t seed, double noise = 0.5) {
  Schema schema({option("O", range(4)), event("E"), objective("P")});
  Rng rng(seed);
  std::uniform_int_distribution<int> level(0, 3);
  std::normal_distribution<double> z(0.0, noise);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double o = level(rng);
    const double e = 2.0 * o + z(rng);
    rows.push_back({o, e, 1.5 * e + z(rng)});
  }
  return PerformanceDataset(schema, rows);
}

/// Directed graph over a schema from (parent, child) name pairs.
inline MixedCausalGraph dag(const Schema& schema, const std::vector<std::pair<std::string, std::string>>& edges) {
  auto g = MixedCausalGraph::for_schema(schema);
  for (const auto& [a, b] : edges) g.add_edge(schema.index_of(a), schema.index_of(b), EdgeMark::Tail, EdgeMark::Arrow);
  g.set_stage(GraphStage::ADMG);
  return g;
}

/// Minimal JSON Schema check: type, required, properties, items, enum,
/// minimum, maximum, additionalProperties (schema form). Returns the
/// violations with their JSON pointer.
inline void validate(const nlohmann::json& schema, const nlohmann::json& doc, const std::string& at,
                     std::vector<std::string>& errors) {
  using nlohmann::json;
  auto type_ok = [&](const std::string& t) {
    if (t == "object") return doc.is_object();
    if (t == "array") return doc.is_array();
    if (t == "string") return doc.is_string();
    if (t == "number") return doc.is_number();
    if (t == "integer") return doc.is_number_integer() || doc.is_number_unsigned();
    if (t == "boolean") return doc.is_boolean();
    if (t == "null") return doc.is_null();
    return false;
  };
  if (schema.contains("type")) {
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || type_ok(t.get<std::string>());
    } else {
      ok = type_ok(schema["type"].get<std::string>());
    }
    if (!ok) {
      errors.push_back(at + ": expected " + schema["type"].dump() + ", got " + doc.type_name());
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& v : schema["enum"]) found = found || v == doc;
    if (!found) errors.push_back(at + ": value " + doc.dump() + " not in enum");
  }
  if (doc.is_number()) {
    if (schema.contains("minimum") && doc.get<double>() < schema["minimum"].get<double>()) {
      errors.push_back(at + ": below minimum");
    }
    if (schema.contains("maximum") && doc.get<double>() > schema["maximum"].get<double>()) {
      errors.push_back(at + ": above maximum");
    }
  }
  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        if (!doc.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.get<std::string>());
      }
    }
    for (const auto& [key, value] : doc.items()) {
      if (schema.contains("properties") && schema["properties"].contains(key)) {
        validate(schema["properties"][key], value, at + "/" + key, errors);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"].is_object()) {
        validate(schema["additionalProperties"], value, at + "/" + key, errors);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
        errors.push_back(at + ": unexpected key " + key);
      }
    }
  }
  if (doc.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < doc.size(); ++i) validate(schema["items"], doc[i], at + "/" + std::to_string(i), errors);
  }
}

inline std::vector<std::string> validate(const nlohmann::json& schema, const nlohmann::json& doc) {
  std::vector<std::string> errors;
  validate(schema, doc, "", errors);
  return errors;
}

}  // namespace testing
