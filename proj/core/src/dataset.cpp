#include "causalperf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

constexpr double kContinuousSlack = 1e-9;
constexpr double kLevelTolerance = 1e-9;

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

std::optional<double> parse_number(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(current);
  return fields;
}

std::string format_double(double v) {
  if (std::isfinite(v) && v == std::round(v) && std::abs(v) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(v);
    return os.str();
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
void require_unique(const std::vector<T>& values, const std::string& name) {
  if (values.empty()) {
    throw Error(ErrorCode::InvalidArgument, "variable '" + name + "' has an empty domain");
  }
  auto sorted = values;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::InvalidArgument, "variable '" + name + "' has duplicate domain values");
  }
}

}  // namespace

std::string_view to_string(VariableKind kind) {
  switch (kind) {
    case VariableKind::Option: return "Option";
    case VariableKind::SystemEvent: return "SystemEvent";
    case VariableKind::Objective: return "Objective";
  }
  return "Option";
}

std::string_view to_string(ObjectiveDirection direction) {
  switch (direction) {
    case ObjectiveDirection::Minimize: return "Minimize";
    case ObjectiveDirection::Maximize: return "Maximize";
    case ObjectiveDirection::NotApplicable: return "NotApplicable";
  }
  return "NotApplicable";
}

VariableKind parse_variable_kind(std::string_view text) {
  if (text == "Option") return VariableKind::Option;
  if (text == "SystemEvent") return VariableKind::SystemEvent;
  if (text == "Objective") return VariableKind::Objective;
  throw Error(ErrorCode::ParseError, "unknown variable kind '" + std::string(text) + "'");
}

ObjectiveDirection parse_objective_direction(std::string_view text) {
  if (text == "Minimize") return ObjectiveDirection::Minimize;
  if (text == "Maximize") return ObjectiveDirection::Maximize;
  if (text == "NotApplicable") return ObjectiveDirection::NotApplicable;
  throw Error(ErrorCode::ParseError, "unknown objective direction '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- Variable

std::vector<double> Variable::levels() const {
  if (const auto* c = std::get_if<CategoricalDomain>(&domain)) {
    std::vector<double> codes(c->levels.size());
    for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = static_cast<double>(i);
    return codes;
  }
  if (const auto* d = std::get_if<DiscreteDomain>(&domain)) return d->values;
  return {};
}

bool Variable::contains(double value) const {
  if (!std::isfinite(value)) return false;
  if (const auto* c = std::get_if<CategoricalDomain>(&domain)) {
    return value == std::round(value) && value >= 0 &&
           value < static_cast<double>(c->levels.size());
  }
  if (const auto* d = std::get_if<DiscreteDomain>(&domain)) {
    return std::any_of(d->values.begin(), d->values.end(),
                       [&](double v) { return std::abs(v - value) <= kLevelTolerance; });
  }
  const auto& c = std::get<ContinuousDomain>(domain);
  if (c.min && value < *c.min - kContinuousSlack * std::max(1.0, std::abs(*c.min))) return false;
  if (c.max && value > *c.max + kContinuousSlack * std::max(1.0, std::abs(*c.max))) return false;
  return true;
}

double Variable::project(double value) const {
  if (is_continuous()) {
    const auto& c = std::get<ContinuousDomain>(domain);
    if (c.min) value = std::max(value, *c.min);
    if (c.max) value = std::min(value, *c.max);
    return value;
  }
  const auto lv = levels();
  double best = lv.front();
  for (double l : lv) {
    if (std::abs(l - value) < std::abs(best - value)) best = l;
  }
  return best;
}

double Variable::parse_value(std::string_view text) const {
  if (const auto* c = std::get_if<CategoricalDomain>(&domain)) {
    const std::string t = trim(text);
    auto it = std::find(c->levels.begin(), c->levels.end(), t);
    if (it == c->levels.end()) {
      throw Error(ErrorCode::DomainViolation,
                  "value '" + t + "' is not a level of '" + name + "'");
    }
    return static_cast<double>(it - c->levels.begin());
  }
  auto parsed = parse_number(text);
  if (!parsed) {
    throw Error(ErrorCode::ParseError,
                "cannot parse '" + std::string(text) + "' as a number for '" + name + "'");
  }
  return *parsed;
}

std::string Variable::format_value(double value) const {
  if (const auto* c = std::get_if<CategoricalDomain>(&domain)) {
    const auto i = static_cast<std::size_t>(value);
    return i < c->levels.size() ? c->levels[i] : std::string("?");
  }
  return format_double(value);
}

json Variable::value_to_json(double value) const {
  if (std::isnan(value)) return nullptr;
  if (const auto* c = std::get_if<CategoricalDomain>(&domain)) {
    const auto i = static_cast<std::size_t>(value);
    return i < c->levels.size() ? json(c->levels[i]) : json(nullptr);
  }
  return value;
}

double Variable::value_from_json(const json& value) const {
  if (value.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (value.is_string()) return parse_value(value.get<std::string>());
  if (value.is_number()) {
    if (is_categorical()) {
      throw Error(ErrorCode::ParseError, "categorical '" + name + "' expects a level name");
    }
    return value.get<double>();
  }
  throw Error(ErrorCode::ParseError, "unsupported JSON value for '" + name + "'");
}

// ------------------------------------------------------------------ Schema

Schema::Schema(std::vector<Variable> variables) : variables_(std::move(variables)) {
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    auto& v = variables_[i];
    if (v.name.empty()) throw Error(ErrorCode::InvalidArgument, "variable name is empty");
    if (!lookup_.emplace(v.name, i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate variable '" + v.name + "'");
    }
    const bool is_objective = v.kind == VariableKind::Objective;
    if (is_objective != (v.direction != ObjectiveDirection::NotApplicable)) {
      throw Error(ErrorCode::InvalidArgument,
                  "'" + v.name + "': objective_direction must be set exactly for objectives");
    }
    if (v.intervenable && v.kind != VariableKind::Option) {
      throw Error(ErrorCode::InvalidArgument, "'" + v.name + "': only options are intervenable");
    }
    if (auto* c = std::get_if<CategoricalDomain>(&v.domain)) require_unique(c->levels, v.name);
    if (auto* d = std::get_if<DiscreteDomain>(&v.domain)) {
      require_unique(d->values, v.name);
      for (double x : d->values) {
        if (x != std::round(x)) {
          throw Error(ErrorCode::InvalidArgument, "'" + v.name + "': discrete values must be integers");
        }
      }
      std::sort(d->values.begin(), d->values.end());
    }
    if (auto* c = std::get_if<ContinuousDomain>(&v.domain)) {
      if (c->min && c->max && *c->min > *c->max) {
        throw Error(ErrorCode::InvalidArgument, "'" + v.name + "': min exceeds max");
      }
    }
  }
}

std::size_t Schema::index_of(std::string_view name) const {
  auto found = find(name);
  if (!found) throw Error(ErrorCode::UnknownColumn, "unknown variable '" + std::string(name) + "'");
  return *found;
}

std::optional<std::size_t> Schema::find(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Schema::indices_of(VariableKind kind) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].kind == kind) out.push_back(i);
  }
  return out;
}

bool Schema::operator==(const Schema& other) const { return to_json(*this) == to_json(other); }

json to_json(const Schema& schema) {
  json vars = json::array();
  for (const auto& v : schema.variables()) {
    json domain;
    if (const auto* c = std::get_if<CategoricalDomain>(&v.domain)) {
      domain = {{"type", "Categorical"}, {"levels", c->levels}};
    } else if (const auto* d = std::get_if<DiscreteDomain>(&v.domain)) {
      domain = {{"type", "Discrete"}, {"values", d->values}};
    } else {
      const auto& c = std::get<ContinuousDomain>(v.domain);
      domain = {{"type", "Continuous"},
                {"min", c.min ? json(*c.min) : json(nullptr)},
                {"max", c.max ? json(*c.max) : json(nullptr)}};
    }
    vars.push_back({{"name", v.name},
                    {"kind", to_string(v.kind)},
                    {"value_domain", domain},
                    {"intervenable", v.intervenable},
                    {"objective_direction", to_string(v.direction)}});
  }
  return vars;
}

Schema schema_from_json(const json& doc) {
  const json& vars = doc.is_object() ? doc.at("variables") : doc;
  if (!vars.is_array()) throw Error(ErrorCode::ParseError, "schema must be an array of variables");
  std::vector<Variable> out;
  try {
    for (const auto& item : vars) {
      Variable v;
      v.name = item.at("name").get<std::string>();
      v.kind = parse_variable_kind(item.at("kind").get<std::string>());
      const auto& dom = item.at("value_domain");
      const auto type = dom.at("type").get<std::string>();
      if (type == "Categorical") {
        v.domain = CategoricalDomain{dom.at("levels").get<std::vector<std::string>>()};
      } else if (type == "Discrete") {
        v.domain = DiscreteDomain{dom.at("values").get<std::vector<double>>()};
      } else if (type == "Continuous") {
        ContinuousDomain c;
        if (dom.contains("min") && !dom["min"].is_null()) c.min = dom["min"].get<double>();
        if (dom.contains("max") && !dom["max"].is_null()) c.max = dom["max"].get<double>();
        v.domain = c;
      } else {
        throw Error(ErrorCode::ParseError, "unknown domain type '" + type + "'");
      }
      v.intervenable = item.value("intervenable", v.kind == VariableKind::Option);
      v.direction = parse_objective_direction(item.value(
          "objective_direction",
          std::string(v.kind == VariableKind::Objective ? "Minimize" : "NotApplicable")));
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed schema: ") + e.what());
  }
  return Schema(std::move(out));
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open schema file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, "schema is not valid JSON: " + std::string(e.what()));
  }
  return schema_from_json(doc);
}

json row_to_json(const Row& row, const Schema& schema) {
  json out = json::object();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    out[schema[i].name] = schema[i].value_to_json(row[i]);
  }
  return out;
}

Row row_from_json(const json& doc, const Schema& schema, bool allow_missing) {
  if (!doc.is_object()) throw Error(ErrorCode::ParseError, "row must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!schema.find(key)) throw Error(ErrorCode::UnknownColumn, "unknown variable '" + key + "'");
  }
  Row row(schema.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& v = schema[i];
    auto it = doc.find(v.name);
    if (it == doc.end() || it->is_null()) {
      if (!allow_missing) throw Error(ErrorCode::ParseError, "row is missing '" + v.name + "'");
      continue;
    }
    row[i] = v.value_from_json(*it);
    if (!v.contains(row[i])) {
      throw Error(ErrorCode::DomainViolation, "value for '" + v.name + "' outside its domain");
    }
  }
  return row;
}

Assignment assignment_from_json(const json& doc, const Schema& schema) {
  if (!doc.is_object()) throw Error(ErrorCode::ParseError, "assignment must be a JSON object");
  Assignment out;
  for (const auto& [key, value] : doc.items()) {
    const auto idx = schema.index_of(key);
    const double v = schema[idx].value_from_json(value);
    if (!schema[idx].contains(v)) {
      throw Error(ErrorCode::DomainViolation, "value for '" + key + "' outside its domain");
    }
    out[idx] = v;
  }
  return out;
}

json assignment_to_json(const Assignment& assignment, const Schema& schema) {
  json out = json::object();
  for (const auto& [idx, value] : assignment) out[schema[idx].name] = schema[idx].value_to_json(value);
  return out;
}

// ------------------------------------------------------- PerformanceDataset

PerformanceDataset::PerformanceDataset(Schema schema, Eigen::MatrixXd values)
    : schema_(std::move(schema)), values_(std::move(values)) {
  if (values_.rows() > 0 && static_cast<std::size_t>(values_.cols()) != schema_.size()) {
    throw Error(ErrorCode::InvalidArgument, "dataset width does not match schema");
  }
  if (values_.rows() == 0) values_.resize(0, static_cast<Eigen::Index>(schema_.size()));
  for (Eigen::Index r = 0; r < values_.rows(); ++r) {
    for (Eigen::Index c = 0; c < values_.cols(); ++c) {
      if (!schema_[c].contains(values_(r, c))) {
        throw Error(ErrorCode::DomainViolation,
                    "row " + std::to_string(r) + ", column '" + schema_[c].name +
                        "': value " + format_double(values_(r, c)) + " outside its domain");
      }
    }
  }
}

namespace {
Eigen::MatrixXd to_matrix(const std::vector<Row>& rows, std::size_t width) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) throw Error(ErrorCode::InvalidArgument, "row width mismatch");
    for (std::size_t c = 0; c < width; ++c) m(r, c) = rows[r][c];
  }
  return m;
}
}  // namespace

PerformanceDataset::PerformanceDataset(Schema schema, const std::vector<Row>& rows)
    : PerformanceDataset(schema, to_matrix(rows, schema.size())) {}

Row PerformanceDataset::row(std::size_t index) const {
  Row out(cols());
  for (std::size_t c = 0; c < cols(); ++c) out[c] = values_(index, c);
  return out;
}

std::vector<double> PerformanceDataset::column(std::size_t index) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = values_(r, index);
  return out;
}

PerformanceDataset PerformanceDataset::append(const PerformanceDataset& other) const {
  if (!(other.schema_ == schema_)) throw Error(ErrorCode::InvalidArgument, "schema mismatch on append");
  Eigen::MatrixXd m(values_.rows() + other.values_.rows(), values_.cols());
  m << values_, other.values_;
  PerformanceDataset out;
  out.schema_ = schema_;
  out.values_ = std::move(m);
  return out;
}

PerformanceDataset PerformanceDataset::append(const std::vector<Row>& rows) const {
  return append(PerformanceDataset(schema_, rows));
}

PerformanceDataset PerformanceDataset::select(const std::vector<std::size_t>& row_indices) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(row_indices.size()), values_.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) m.row(i) = values_.row(row_indices[i]);
  PerformanceDataset out;
  out.schema_ = schema_;
  out.values_ = std::move(m);
  return out;
}

std::vector<std::vector<std::size_t>> PerformanceDataset::replicate_groups() const {
  const auto opts = schema_.options();
  std::map<std::vector<double>, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < rows(); ++r) {
    std::vector<double> key;
    key.reserve(opts.size());
    for (auto o : opts) key.push_back(values_(r, o));
    auto [it, inserted] = slot.emplace(std::move(key), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(r);
  }
  return groups;
}

// --------------------------------------------------------------------- CSV

PerformanceDataset parse_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "line 1: missing header");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  auto header = split_csv_line(line);
  std::vector<std::size_t> column_to_var;
  std::set<std::size_t> seen;
  for (auto& h : header) {
    const std::string name = trim(h);
    auto idx = schema.find(name);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "unknown column '" + name + "'");
    if (!seen.insert(*idx).second) throw Error(ErrorCode::ParseError, "line 1: duplicate column '" + name + "'");
    column_to_var.push_back(*idx);
  }
  if (seen.size() != schema.size()) {
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!seen.count(i)) {
        throw Error(ErrorCode::UnknownColumn, "schema variable '" + schema[i].name + "' has no column");
      }
    }
  }
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " fields");
    }
    Row row(schema.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto& var = schema[column_to_var[c]];
      if (trim(fields[c]).empty()) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": missing value for '" +
                                               var.name + "'");
      }
      try {
        row[column_to_var[c]] = var.parse_value(fields[c]);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) {
          throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        }
        throw Error(e.code(), "row " + std::to_string(rows.size()) + ", column '" + var.name + "': " + e.what());
      }
      if (!var.contains(row[column_to_var[c]])) {
        throw Error(ErrorCode::DomainViolation, "row " + std::to_string(rows.size()) + ", column '" +
                                                    var.name + "': value " + trim(fields[c]) +
                                                    " outside its domain");
      }
    }
    rows.push_back(std::move(row));
  }
  return PerformanceDataset(schema, rows);
}

PerformanceDataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return parse_csv(in, schema);
}

void write_csv(std::ostream& out, const PerformanceDataset& ds) {
  const auto& schema = ds.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) out << (c ? "," : "") << schema[c].name;
  out << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      out << (c ? "," : "") << schema[c].format_value(ds(r, c));
    }
    out << '\n';
  }
}

// -------------------------------------------------------------- statistics

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyDataset, "median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyDataset, "percentile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "percentile must be in (0,1]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

PerformanceDataset aggregate_replicates(const PerformanceDataset& ds) {
  const auto groups = ds.replicate_groups();
  const auto& schema = ds.schema();
  std::vector<Row> rows;
  rows.reserve(groups.size());
  for (const auto& g : groups) {
    Row row = ds.row(g.front());
    if (g.size() > 1) {
      for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].kind == VariableKind::Option) continue;
        std::vector<double> vals;
        vals.reserve(g.size());
        for (auto r : g) vals.push_back(ds(r, c));
        // The median of a discrete column can fall between levels.
        row[c] = schema[c].is_continuous() ? median(vals) : schema[c].project(median(vals));
      }
    }
    rows.push_back(std::move(row));
  }
  return PerformanceDataset(schema, rows);
}

double oriented(const Variable& objective, double value) {
  return objective.direction == ObjectiveDirection::Maximize ? -value : value;
}

bool strictly_better(const Variable& objective, double candidate, double reference) {
  return oriented(objective, candidate) < oriented(objective, reference);
}

double fault_threshold(const PerformanceDataset& ds, std::size_t objective, double percentile) {
  const auto& var = ds.schema()[objective];
  std::vector<double> vals = ds.column(objective);
  for (auto& v : vals) v = oriented(var, v);
  return oriented(var, nearest_rank_percentile(std::move(vals), percentile));
}

std::vector<std::size_t> label_faults(const PerformanceDataset& ds, const FaultSpec& spec) {
  if (ds.empty()) throw Error(ErrorCode::EmptyDataset, "cannot label faults in an empty dataset");
  std::set<std::size_t> out;
  for (const auto& name : spec.objectives) {
    const auto idx = ds.schema().index_of(name);
    const auto& var = ds.schema()[idx];
    if (var.kind != VariableKind::Objective) {
      throw Error(ErrorCode::InvalidArgument, "'" + name + "' is not an objective");
    }
    const double threshold = fault_threshold(ds, idx, spec.percentile);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      if (strictly_better(var, threshold, ds(r, idx))) out.insert(r);
    }
  }
  return {out.begin(), out.end()};
}

}  // namespace causalperf
