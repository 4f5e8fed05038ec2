#include "causalperf/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"
#include "causalperf/pareto.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

constexpr std::size_t kContinuousChoices = 8;
// Redraws of an exploration step that landed on a measured configuration.
constexpr std::size_t kExploreAttempts = 32;

std::vector<double> option_values(const Schema& schema, std::size_t o, const PerformanceDataset* measured) {
  const auto& var = schema[o];
  if (!var.is_continuous()) return var.levels();
  const auto& dom = std::get<ContinuousDomain>(var.domain);
  double lo = dom.min.value_or(0.0);
  double hi = dom.max.value_or(1.0);
  if ((!dom.min || !dom.max) && measured != nullptr && !measured->empty()) {
    const auto col = measured->column(o);
    if (!dom.min) lo = *std::min_element(col.begin(), col.end());
    if (!dom.max) hi = *std::max_element(col.begin(), col.end());
  }
  if (!(hi > lo)) return {lo};
  std::vector<double> out(kContinuousChoices);
  for (std::size_t i = 0; i < kContinuousChoices; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kContinuousChoices - 1);
  }
  return out;
}

bool same_value(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

bool same_configuration(const Assignment& config, const Row& row) {
  for (const auto& [v, value] : config) {
    if (!same_value(row[v], value)) return false;
  }
  return true;
}

}  // namespace

// ------------------------------------------------------------- SUT plumbing

Row SystemUnderTest::measure(const Assignment& configuration) {
  const auto& s = schema();
  for (auto o : s.options()) {
    auto it = configuration.find(o);
    if (it == configuration.end()) throw Error(ErrorCode::InvalidArgument, "configuration misses option " + s[o].name);
    if (!s[o].contains(it->second)) throw Error(ErrorCode::DomainViolation, "configuration value outside " + s[o].name);
  }
  ++calls_;
  Row row = do_measure(configuration);
  if (row.size() != s.size()) throw Error(ErrorCode::SutFailure, "measurement has the wrong width");
  for (const auto& [v, value] : configuration) row[v] = value;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (std::isnan(row[c]) || !s[c].contains(row[c])) {
      throw Error(ErrorCode::SutFailure, "measurement of " + s[c].name + " is missing or out of domain");
    }
  }
  return row;
}

ReplaySut::ReplaySut(PerformanceDataset table) : table_(std::move(table)) {
  groups_ = table_.replicate_groups();
  cursor_.assign(groups_.size(), 0);
}

Row ReplaySut::do_measure(const Assignment& configuration) {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const Row first = table_.row(groups_[g].front());
    bool match = true;
    for (const auto& [v, value] : configuration) match = match && first[v] == value;
    if (!match) continue;
    const auto idx = groups_[g][cursor_[g] % groups_[g].size()];
    ++cursor_[g];
    return table_.row(idx);
  }
  std::ostringstream os;
  os << "configuration not in the replay table: " << assignment_to_json(configuration, table_.schema()).dump();
  throw Error(ErrorCode::SutFailure, os.str());
}

CommandSut::CommandSut(std::string command, Schema schema) : command_(std::move(command)), schema_(std::move(schema)) {}

Row CommandSut::do_measure(const Assignment& configuration) {
  namespace fs = std::filesystem;
  static std::size_t counter = 0;
  const auto input = fs::temp_directory_path() /
                     ("causalperf-sut-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".json");
  {
    std::ofstream out(input);
    out << assignment_to_json(configuration, schema_).dump() << '\n';
  }
  const std::string cmd = command_ + " < '" + input.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    fs::remove(input);
    throw Error(ErrorCode::SutFailure, "cannot start '" + command_ + "'");
  }
  std::string output;
  char buffer[4096];
  while (std::size_t got = std::fread(buffer, 1, sizeof buffer, pipe)) output.append(buffer, got);
  const int status = ::pclose(pipe);
  fs::remove(input);
  if (status != 0) throw Error(ErrorCode::SutFailure, "'" + command_ + "' exited with status " + std::to_string(status));
  try {
    Row row = row_from_json(json::parse(output), schema_, true);
    for (const auto& [v, value] : configuration) row[v] = value;
    return row;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SutFailure, std::string("unparseable measurement: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::SutFailure, std::string("invalid measurement: ") + e.what());
  }
}

// ---------------------------------------------------------------- sampling

std::string_view to_string(LoopMode mode) { return mode == LoopMode::Debug ? "debug" : "optimize"; }

std::size_t default_initial_samples(const Budget& budget) {
  return std::max<std::size_t>(25, budget.max_samples / 10);
}

Assignment random_configuration(const Schema& schema, Rng& rng) {
  Assignment config;
  for (auto o : schema.options()) {
    const auto values = option_values(schema, o, nullptr);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    config[o] = values[pick(rng)];
  }
  return config;
}

PerformanceDataset initial_sample(SystemUnderTest& sut, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "initial sample size must be positive");
  Rng rng(seed);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(sut.measure(random_configuration(sut.schema(), rng)));
  return PerformanceDataset(sut.schema(), rows);
}

std::vector<double> selection_weights(const Schema& schema, const std::vector<RankedPaths>& ranked, double epsilon) {
  const auto options = schema.options();
  std::vector<double> share(options.size(), 0.0);
  for (const auto& r : ranked) {
    for (const auto& e : r.option_effects) {
      const auto pos = std::find(options.begin(), options.end(), e.option) - options.begin();
      share[static_cast<std::size_t>(pos)] += e.share / static_cast<double>(ranked.size());
    }
  }
  for (auto& s : share) s = std::max(epsilon, s);
  return share;
}

Assignment next_configuration(const Schema& schema, const PerformanceDataset& measured, const Assignment& base,
                              const std::vector<double>& weights, Rng& rng) {
  const auto options = schema.options();
  if (weights.size() != options.size()) throw Error(ErrorCode::InvalidArgument, "one weight per option");
  std::discrete_distribution<std::size_t> choose(weights.begin(), weights.end());
  const auto o = options[choose(rng)];
  const auto values = option_values(schema, o, &measured);
  const double current = base.at(o);
  std::vector<double> unexplored, others;
  const auto column = measured.column(o);
  for (double v : values) {
    if (same_value(v, current)) continue;
    others.push_back(v);
    const bool seen = std::any_of(column.begin(), column.end(), [&](double c) { return same_value(c, v); });
    if (!seen) unexplored.push_back(v);
  }
  Assignment next = base;
  const auto& pool = unexplored.empty() ? others : unexplored;
  if (!pool.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    next[o] = pool[pick(rng)];
  }
  return next;
}

double gain(double nfp_fault, double nfp_nofault) {
  if (nfp_fault == 0.0) throw Error(ErrorCode::InvalidArgument, "gain is undefined for a zero fault value");
  return (nfp_fault - nfp_nofault) / std::abs(nfp_fault) * 100.0;
}

double gain(const Variable& objective, double fault_value, double nofault_value) {
  if (fault_value == 0.0) throw Error(ErrorCode::InvalidArgument, "gain is undefined for a zero fault value");
  return (oriented(objective, fault_value) - oriented(objective, nofault_value)) / std::abs(fault_value) * 100.0;
}

Assignment options_of(const Row& row, const Schema& schema) {
  Assignment a;
  for (auto o : schema.options()) a[o] = row[o];
  return a;
}

json to_json(const TraceEntry& e, const Schema& schema) {
  return {{"iteration", e.iteration},
          {"source", e.source},
          {"configuration", assignment_to_json(e.configuration, schema)},
          {"measurement", row_to_json(e.measurement, schema)},
          {"shd", e.shd ? json(*e.shd) : json(nullptr)},
          {"best_so_far", e.best_so_far},
          {"target_met", e.target_met}};
}

void write_trace(std::ostream& out, const std::vector<TraceEntry>& trace, const Schema& schema) {
  for (const auto& e : trace) out << to_json(e, schema).dump() << '\n';
}

// ----------------------------------------------------------------- session

LoopSession::LoopSession(SystemUnderTest& sut, LoopMode mode, std::vector<std::size_t> objectives, Budget budget,
                         LoopParams params, std::optional<Row> fault_row, std::optional<MixedCausalGraph> truth)
    : sut_(sut),
      mode_(mode),
      objectives_(std::move(objectives)),
      budget_(budget),
      params_(std::move(params)),
      fault_row_(std::move(fault_row)),
      truth_(std::move(truth)),
      data_(sut.schema(), std::vector<Row>{}),
      rng_(mix_seed(params_.seed, 0x5e55)),
      started_(std::chrono::steady_clock::now()) {
  const auto& schema = sut_.schema();
  if (objectives_.empty()) throw Error(ErrorCode::InvalidArgument, "at least one objective is required");
  for (auto o : objectives_) {
    if (o >= schema.size() || schema[o].kind != VariableKind::Objective) {
      throw Error(ErrorCode::InvalidArgument, "loop objectives must be objective variables");
    }
  }
  if (params_.initial_samples == 0) params_.initial_samples = default_initial_samples(budget_);
  if (budget_.max_samples < params_.initial_samples) {
    throw Error(ErrorCode::InvalidArgument, "budget is smaller than the initial sample");
  }
  if (mode_ == LoopMode::Debug) {
    if (!fault_row_) throw Error(ErrorCode::InvalidArgument, "debugging needs a measured fault row");
    if (fault_row_->size() != schema.size()) throw Error(ErrorCode::InvalidArgument, "fault row has the wrong width");
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (std::isnan((*fault_row_)[c])) throw Error(ErrorCode::InvalidArgument, "fault row must be fully measured");
    }
    targets_ = params_.targets.value_or(fault_thresholds(*fault_row_, objectives_));
    if (targets_.size() != objectives_.size()) throw Error(ErrorCode::InvalidArgument, "one target per objective");
    for (auto t : fault_thresholds(*fault_row_, objectives_)) scales_.push_back(std::max(std::abs(t), 1e-12));
    data_ = data_.append(std::vector<Row>{*fault_row_});
  }
}

double LoopSession::score(const Row& row) const {
  const auto& schema = sut_.schema();
  double s = 0.0;
  for (std::size_t i = 0; i < objectives_.size(); ++i) {
    const double scale = i < scales_.size() ? scales_[i] : 1.0;
    s += oriented(schema[objectives_[i]], row[objectives_[i]]) / scale;
  }
  return s;
}

std::optional<Row> LoopSession::best_row() const {
  std::optional<Row> best;
  double best_score = 0.0;
  for (std::size_t r = 0; r < data_.rows(); ++r) {
    const Row row = data_.row(r);
    const double s = score(row);
    if (!best || s < best_score) {
      best = row;
      best_score = s;
    }
  }
  return best;
}

std::vector<Row> LoopSession::pareto_front() const {
  const std::size_t skip = fault_row_ ? 1 : 0;
  std::vector<Point> points;
  std::vector<Row> rows;
  for (std::size_t r = skip; r < data_.rows(); ++r) {
    rows.push_back(data_.row(r));
    Point p;
    for (auto o : objectives_) p.push_back(oriented(sut_.schema()[o], rows.back()[o]));
    points.push_back(std::move(p));
  }
  std::vector<Row> out;
  for (auto i : nondominated(points)) out.push_back(rows[i]);
  return out;
}

bool LoopSession::out_of_budget() const {
  if (samples_used_ >= budget_.max_samples) return true;
  if (budget_.max_wallclock.count() > 0.0) {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started_;
    if (elapsed >= budget_.max_wallclock) return true;
  }
  return false;
}

void LoopSession::finish(std::string reason) {
  done_ = true;
  stop_reason_ = std::move(reason);
  if (mode_ == LoopMode::Debug) diagnose_final();
}

void LoopSession::diagnose_final() {
  if (diagnosed_rows_ == data_.rows()) return;
  try {
    const auto prior = graph_;
    graph_ = learn_cpm_detailed(data_, params_.learn, prior ? &*prior : nullptr).graph;
    const auto model = fit(*graph_, data_, params_.degree);
    std::vector<RankedPaths> ranked;
    for (auto o : objectives_) {
      ranked.push_back(rank_paths(model, o, params_.k, {params_.ace_mc, mix_seed(params_.seed, iteration_, o)}));
    }
    root_causes_.clear();
    for (const auto& c : causalperf::root_causes(ranked)) root_causes_.push_back(c.option);
    diagnosed_rows_ = data_.rows();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UnderdeterminedFit && e.code() != ErrorCode::InsufficientSamples) throw;
  }
}

void LoopSession::record(const Assignment& config, const Row& row, const std::string& source) {
  data_ = data_.append(std::vector<Row>{row});
  ++samples_used_;
  TraceEntry e;
  e.iteration = iteration_;
  e.source = source;
  e.configuration = config;
  e.measurement = row;
  if (truth_ && graph_) e.shd = shd(*graph_, *truth_);
  e.best_so_far = score(*best_row());
  if (mode_ == LoopMode::Debug) {
    e.target_met = meets_thresholds(sut_.schema(), row, objectives_, targets_, params_.margin);
    if (e.target_met && !first_fix_) first_fix_ = samples_used_;
  }
  trace_.push_back(std::move(e));
}

bool LoopSession::measured_before(const Assignment& config) const {
  for (std::size_t r = 0; r < data_.rows(); ++r) {
    if (same_configuration(config, data_.row(r))) return true;
  }
  return false;
}

StepResult LoopSession::step() {
  if (done_) throw Error(ErrorCode::Conflict, "session already terminated (" + stop_reason_ + ")");
  const auto& schema = sut_.schema();
  StepResult result;
  result.iteration = iteration_;
  const std::size_t before = samples_used_;

  if (iteration_ == 0) {
    Rng init(mix_seed(params_.seed, 0x1417));
    std::vector<Assignment> configs;
    for (std::size_t i = 0; i < params_.initial_samples; ++i) configs.push_back(random_configuration(schema, init));
    for (const auto& c : configs) {
      record(c, sut_.measure(c), "initial");
      if (first_fix_) break;
    }
    if (mode_ == LoopMode::Optimize) {
      scales_.clear();
      for (auto o : objectives_) {
        std::vector<double> col;
        for (std::size_t r = 0; r < data_.rows(); ++r) col.push_back(std::abs(data_(r, o)));
        scales_.push_back(std::max(median(col), 1e-12));
      }
      for (auto& e : trace_) e.best_so_far = score(*best_row());
    }
  } else {
    const auto prior = graph_;
    auto learned = learn_cpm_detailed(data_, params_.learn, prior ? &*prior : nullptr);
    graph_ = std::move(learned.graph);
    const Row base = *best_row();
    const Assignment base_config = options_of(base, schema);

    std::vector<RankedPaths> ranked;
    std::optional<Assignment> choice;
    try {
      const auto model = fit(*graph_, data_, params_.degree);
      for (auto o : objectives_) {
        ranked.push_back(rank_paths(model, o, params_.k, {params_.ace_mc, mix_seed(params_.seed, iteration_, o)}));
      }
      root_causes_.clear();
      for (const auto& c : causalperf::root_causes(ranked)) root_causes_.push_back(c.option);
      std::vector<double> thresholds = targets_;
      if (mode_ == LoopMode::Optimize) thresholds = fault_thresholds(base, objectives_);
      const auto repairs = build_repair_set(ranked, base, model);
      const auto verdicts = score_repairs(model, base, repairs, objectives_, thresholds,
                                          {params_.ice_mc, mix_seed(params_.seed, iteration_, 0x1ce), params_.margin});
      // Best repair not measured yet; re-measuring a failed repair only
      // re-samples the noise.
      for (const auto& v : rank_repairs(verdicts, base)) {
        if (!(v.ice > 0.0)) break;
        const auto config = repair_configuration(v.repair, base, schema);
        if (!measured_before(config)) {
          choice = config;
          break;
        }
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyPaths && e.code() != ErrorCode::UnderdeterminedFit) throw;
    }

    std::string source = "repair";
    if (!choice) {
      const auto weights = selection_weights(schema, ranked, params_.epsilon);
      // Walk away from the base while the neighbour is already measured.
      Assignment from = base_config;
      for (std::size_t attempt = 0; attempt < kExploreAttempts; ++attempt) {
        choice = next_configuration(schema, data_, from, weights, rng_);
        if (!measured_before(*choice)) break;
        from = *choice;
      }
      source = "explore";
    }
    repeats_ = last_selection_ == choice ? repeats_ + 1 : 1;
    last_selection_ = choice;
    record(*choice, sut_.measure(*choice), source);
  }

  ++iteration_;
  if (!done_) {
    if (first_fix_ && mode_ == LoopMode::Debug) {
      finish("fixed");
    } else if (repeats_ >= budget_.repeat_stop) {
      finish("repeated");
    } else if (out_of_budget()) {
      finish(samples_used_ >= budget_.max_samples ? "budget" : "wallclock");
    }
  }
  result.measured = samples_used_ - before;
  result.done = done_;
  result.stop_reason = stop_reason_;
  json entries = json::array();
  for (std::size_t i = trace_.size() - result.measured; i < trace_.size(); ++i) entries.push_back(to_json(trace_[i], schema));
  result.summary = {{"iteration", result.iteration},
                    {"measurements", entries},
                    {"samples_used", samples_used_},
                    {"done", done_},
                    {"stop_reason", done_ ? json(stop_reason_) : json(nullptr)},
                    {"graph", graph_ ? to_json(*graph_) : json(nullptr)}};
  return result;
}

json LoopSession::outcome() const {
  const auto& schema = sut_.schema();
  json out{{"mode", to_string(mode_)},
           {"stop_reason", done_ ? json(stop_reason_) : json(nullptr)},
           {"samples_used", samples_used_},
           {"iterations", iteration_}};
  json objectives = json::array();
  for (auto o : objectives_) objectives.push_back(schema[o].name);
  out["objectives"] = objectives;
  const auto best = best_row();
  if (mode_ == LoopMode::Debug) {
    std::optional<Row> chosen;
    if (first_fix_) chosen = trace_[*first_fix_ - 1].measurement;
    else chosen = best;
    out["fixed"] = first_fix_.has_value();
    out["samples_to_fix"] = first_fix_ ? json(*first_fix_) : json(nullptr);
    out["fault"] = row_to_json(*fault_row_, schema);
    json targets = json::object();
    for (std::size_t i = 0; i < objectives_.size(); ++i) targets[schema[objectives_[i]].name] = targets_[i];
    out["targets"] = targets;
    out["repair"] = assignment_to_json(options_of(*chosen, schema), schema);
    json changed = json::array();
    for (auto o : schema.options()) {
      if (!same_value((*chosen)[o], (*fault_row_)[o])) changed.push_back(schema[o].name);
    }
    out["changed_options"] = changed;
    json causes = json::array();
    for (auto o : root_causes_) causes.push_back(schema[o].name);
    out["root_causes"] = causes;
    out["measurement"] = row_to_json(*chosen, schema);
    json gains = json::object();
    for (auto o : objectives_) gains[schema[o].name] = gain(schema[o], (*fault_row_)[o], (*chosen)[o]);
    out["gain"] = gains;
  } else {
    out["best_config"] = best ? assignment_to_json(options_of(*best, schema), schema) : json(nullptr);
    out["best"] = best ? row_to_json(*best, schema) : json(nullptr);
    json front = json::array();
    for (const auto& r : pareto_front()) front.push_back(row_to_json(r, schema));
    out["pareto_front"] = front;
  }
  return out;
}

// ------------------------------------------------------------ drivers

DebugOutcome run_debug(SystemUnderTest& sut, const Row& fault_row, const std::vector<std::size_t>& objectives,
                       const Budget& budget, const LoopParams& params, const std::optional<MixedCausalGraph>& truth) {
  LoopSession session(sut, LoopMode::Debug, objectives, budget, params, fault_row, truth);
  while (!session.done()) session.step();
  const auto& schema = sut.schema();
  DebugOutcome out;
  out.fixed = session.first_fix().has_value();
  out.samples_to_fix = session.first_fix();
  out.measurement = out.fixed ? session.trace()[*session.first_fix() - 1].measurement : *session.best_row();
  out.repair = options_of(out.measurement, schema);
  for (auto o : objectives) out.gain.push_back(gain(schema[o], fault_row[o], out.measurement[o]));
  out.samples_used = session.samples_used();
  out.stop_reason = session.stop_reason();
  out.trace = session.trace();
  return out;
}

OptimizeOutcome run_optimize(SystemUnderTest& sut, const std::vector<std::size_t>& objectives, const Budget& budget,
                             const LoopParams& params) {
  LoopSession session(sut, LoopMode::Optimize, objectives, budget, params);
  while (!session.done()) session.step();
  OptimizeOutcome out;
  out.best_row = *session.best_row();
  out.best_config = options_of(out.best_row, sut.schema());
  out.pareto_front = session.pareto_front();
  out.samples_used = session.samples_used();
  out.stop_reason = session.stop_reason();
  out.trace = session.trace();
  return out;
}

}  // namespace causalperf
