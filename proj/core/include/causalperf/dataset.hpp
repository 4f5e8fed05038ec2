#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace causalperf {

enum class VariableKind { Option, SystemEvent, Objective };
enum class ObjectiveDirection { Minimize, Maximize, NotApplicable };

std::string_view to_string(VariableKind kind);
std::string_view to_string(ObjectiveDirection direction);
VariableKind parse_variable_kind(std::string_view text);
ObjectiveDirection parse_objective_direction(std::string_view text);

/// Categorical values are stored as the index of their level.
struct CategoricalDomain {
  std::vector<std::string> levels;
};

/// Permitted integer values, kept sorted ascending.
struct DiscreteDomain {
  std::vector<double> values;
};

/// Unset bounds mean the variable is unbounded on that side.
struct ContinuousDomain {
  std::optional<double> min;
  std::optional<double> max;
};

using ValueDomain = std::variant<CategoricalDomain, DiscreteDomain, ContinuousDomain>;

struct Variable {
  std::string name;
  VariableKind kind = VariableKind::Option;
  ValueDomain domain = ContinuousDomain{};
  bool intervenable = false;
  ObjectiveDirection direction = ObjectiveDirection::NotApplicable;

  bool is_categorical() const { return std::holds_alternative<CategoricalDomain>(domain); }
  bool is_continuous() const { return std::holds_alternative<ContinuousDomain>(domain); }
  bool is_discrete() const { return !is_continuous(); }

  /// Permitted values in ascending order (level codes for categorical).
  /// Empty for continuous variables.
  std::vector<double> levels() const;

  bool contains(double value) const;
  /// Nearest permitted level for discrete domains, clamp for continuous ones.
  double project(double value) const;

  double parse_value(std::string_view text) const;
  std::string format_value(double value) const;
  nlohmann::json value_to_json(double value) const;
  double value_from_json(const nlohmann::json& value) const;
};

/// Ordered, validated list of variables with name lookup.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Variable> variables);

  std::size_t size() const { return variables_.size(); }
  const Variable& operator[](std::size_t i) const { return variables_[i]; }
  const std::vector<Variable>& variables() const { return variables_; }

  std::size_t index_of(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;

  std::vector<std::size_t> indices_of(VariableKind kind) const;
  std::vector<std::size_t> options() const { return indices_of(VariableKind::Option); }
  std::vector<std::size_t> events() const { return indices_of(VariableKind::SystemEvent); }
  std::vector<std::size_t> objectives() const { return indices_of(VariableKind::Objective); }

  bool operator==(const Schema& other) const;

 private:
  std::vector<Variable> variables_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

nlohmann::json to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& doc);
Schema load_schema(const std::filesystem::path& path);

/// One value per schema variable, in schema order. NaN marks "not observed"
/// where an API explicitly allows it.
using Row = std::vector<double>;

/// Variable index -> value.
using Assignment = std::map<std::size_t, double>;

nlohmann::json row_to_json(const Row& row, const Schema& schema);
/// Missing names become NaN when allow_missing, otherwise ParseError.
Row row_from_json(const nlohmann::json& doc, const Schema& schema, bool allow_missing = false);
Assignment assignment_from_json(const nlohmann::json& doc, const Schema& schema);
nlohmann::json assignment_to_json(const Assignment& assignment, const Schema& schema);

/// Immutable measurement table. Every value is validated against its
/// variable's domain at construction.
class PerformanceDataset {
 public:
  PerformanceDataset() = default;
  PerformanceDataset(Schema schema, Eigen::MatrixXd values);
  PerformanceDataset(Schema schema, const std::vector<Row>& rows);

  const Schema& schema() const { return schema_; }
  const Eigen::MatrixXd& values() const { return values_; }
  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }
  bool empty() const { return values_.rows() == 0; }

  double operator()(std::size_t row, std::size_t col) const { return values_(row, col); }
  Row row(std::size_t index) const;
  std::vector<double> column(std::size_t index) const;

  PerformanceDataset append(const PerformanceDataset& other) const;
  PerformanceDataset append(const std::vector<Row>& rows) const;
  PerformanceDataset select(const std::vector<std::size_t>& row_indices) const;

  /// Rows grouped by exact equality of every Option column, ordered by the
  /// first occurrence of each configuration.
  std::vector<std::vector<std::size_t>> replicate_groups() const;

 private:
  Schema schema_;
  Eigen::MatrixXd values_;
};

PerformanceDataset parse_csv(std::istream& in, const Schema& schema);
PerformanceDataset load_csv(const std::filesystem::path& path, const Schema& schema);
void write_csv(std::ostream& out, const PerformanceDataset& ds);

/// Median with the mean-of-middle-two rule for even counts.
double median(std::vector<double> values);

/// Nearest-rank percentile of unsorted values, q in (0, 1].
double nearest_rank_percentile(std::vector<double> values, double q);

/// Collapses replicates of the same configuration into one row holding the
/// per-column median of events and objectives.
PerformanceDataset aggregate_replicates(const PerformanceDataset& ds);

struct FaultSpec {
  std::vector<std::string> objectives;
  double percentile = 0.99;
};

/// Per-objective tail threshold on the "worse" side.
double fault_threshold(const PerformanceDataset& ds, std::size_t objective, double percentile);

/// Indices of rows strictly worse than the tail threshold on any of the
/// requested objectives (union over objectives), ascending.
std::vector<std::size_t> label_faults(const PerformanceDataset& ds, const FaultSpec& spec);

/// True when `candidate` is strictly better than `reference` for the
/// objective's direction.
bool strictly_better(const Variable& objective, double candidate, double reference);

/// Objective value oriented so that larger is worse.
double oriented(const Variable& objective, double value);

}  // namespace causalperf
