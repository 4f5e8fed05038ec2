#include "causalperf/repair.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

using nlohmann::json;

std::size_t Repair::changed(const Row& fault_row) const {
  std::size_t n = 0;
  for (const auto& [v, value] : assignment) n += fault_row[v] != value ? 1 : 0;
  return n;
}

std::vector<Repair> build_repair_set(const std::vector<RankedPaths>& ranked, const Row& fault_row,
                                     const StructuralModel& model) {
  const auto& schema = model.schema();
  for (auto o : schema.options()) {
    if (o >= fault_row.size() || std::isnan(fault_row[o])) {
      throw Error(ErrorCode::InvalidArgument, "fault row must set option " + schema[o].name);
    }
  }
  std::map<Assignment, std::vector<std::size_t>> unique;
  std::vector<Assignment> order;
  bool any_path = false;
  std::size_t path_id = 0;
  for (const auto& r : ranked) {
    for (const auto& p : r.top()) {
      any_path = true;
      for (auto v : p.vertices) {
        if (schema[v].kind != VariableKind::Option) continue;
        for (double value : cause_grid(model, v)) {
          Assignment a{{v, value}};
          auto [it, inserted] = unique.try_emplace(a);
          if (inserted) order.push_back(a);
          if (std::find(it->second.begin(), it->second.end(), path_id) == it->second.end()) {
            it->second.push_back(path_id);
          }
        }
      }
      ++path_id;
    }
  }
  if (!any_path) throw Error(ErrorCode::EmptyPaths, "no causal paths to build repairs from");
  std::vector<Repair> out;
  for (const auto& a : order) out.push_back({a, unique[a]});
  return out;
}

Assignment repair_configuration(const Repair& repair, const Row& fault_row, const Schema& schema) {
  Assignment config;
  for (auto o : schema.options()) config[o] = fault_row[o];
  for (const auto& [v, value] : repair.assignment) config[v] = value;
  return config;
}

std::vector<double> fault_thresholds(const Row& fault_row, const std::vector<std::size_t>& objectives) {
  std::vector<double> out;
  for (auto o : objectives) out.push_back(fault_row[o]);
  return out;
}

bool meets_thresholds(const Schema& schema, const Row& row, const std::vector<std::size_t>& objectives,
                      const std::vector<double>& thresholds, double margin) {
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const auto& var = schema[objectives[i]];
    const double target = oriented(var, thresholds[i]) - margin * std::abs(thresholds[i]);
    if (!(oriented(var, row[objectives[i]]) < target)) return false;
  }
  return true;
}

RepairVerdict ice(const StructuralModel& model, const Row& fault_row, const Repair& repair,
                  const std::vector<std::size_t>& objectives, const std::vector<double>& thresholds,
                  const IceOptions& options) {
  if (objectives.empty()) throw Error(ErrorCode::InvalidArgument, "ICE needs at least one objective");
  if (thresholds.size() != objectives.size()) throw Error(ErrorCode::InvalidArgument, "one threshold per objective");
  const auto& schema = model.schema();
  const auto interventions = repair_configuration(repair, fault_row, schema);
  const auto cf = counterfactual(model, fault_row, interventions, {options.n_mc, options.seed, false});

  RepairVerdict v;
  v.repair = repair;
  v.predicted = cf.mean;
  v.point_identified = cf.point_identified;
  v.interventional_fallback = cf.interventional_fallback;
  std::size_t fixed = 0;
  double improvement = 0.0;
  for (const auto& world : cf.worlds) {
    if (meets_thresholds(schema, world, objectives, thresholds, options.margin)) ++fixed;
    for (std::size_t i = 0; i < objectives.size(); ++i) {
      const auto& var = schema[objectives[i]];
      const double scale = std::max(std::abs(thresholds[i]), 1e-12);
      improvement += (oriented(var, thresholds[i]) - oriented(var, world[objectives[i]])) / scale;
    }
  }
  const double worlds = static_cast<double>(cf.worlds.size());
  v.p_fix = static_cast<double>(fixed) / worlds;
  v.p_still_faulty = 1.0 - v.p_fix;
  v.ice = v.p_fix - v.p_still_faulty;
  v.expected_improvement = improvement / (worlds * static_cast<double>(objectives.size()));
  return v;
}

std::vector<RepairVerdict> score_repairs(const StructuralModel& model, const Row& fault_row,
                                         const std::vector<Repair>& repairs,
                                         const std::vector<std::size_t>& objectives,
                                         const std::vector<double>& thresholds, const IceOptions& options) {
  std::vector<RepairVerdict> out(repairs.size());
  parallel_for(repairs.size(), [&](std::size_t i) {
    // Same stream for every repair: common random numbers across candidates.
    out[i] = ice(model, fault_row, repairs[i], objectives, thresholds, options);
  });
  return out;
}

std::vector<RepairVerdict> rank_repairs(std::vector<RepairVerdict> verdicts, const Row& fault_row) {
  std::stable_sort(verdicts.begin(), verdicts.end(), [&](const RepairVerdict& a, const RepairVerdict& b) {
    if (a.ice != b.ice) return a.ice > b.ice;
    if (a.expected_improvement != b.expected_improvement) return a.expected_improvement > b.expected_improvement;
    const auto ca = a.repair.changed(fault_row);
    const auto cb = b.repair.changed(fault_row);
    if (ca != cb) return ca < cb;
    return a.repair.assignment < b.repair.assignment;
  });
  return verdicts;
}

BestRepair best_repair(const std::vector<RepairVerdict>& verdicts, const Row& fault_row) {
  if (verdicts.empty()) throw Error(ErrorCode::EmptyRepairSet, "no repairs to choose from");
  const auto ranked = rank_repairs(verdicts, fault_row);
  return {ranked.front(), ranked.front().ice > 0.0};
}

json to_json(const RepairVerdict& v, const StructuralModel& model) {
  json predicted = json::object();
  for (auto o : model.schema().objectives()) predicted[model.schema()[o].name] = v.predicted[o];
  return {{"assignment", assignment_to_json(v.repair.assignment, model.schema())},
          {"paths", v.repair.paths},
          {"ice", v.ice},
          {"p_fix", v.p_fix},
          {"p_still_faulty", v.p_still_faulty},
          {"expected_improvement", v.expected_improvement},
          {"predicted", predicted},
          {"point_identified", v.point_identified},
          {"interventional_fallback", v.interventional_fallback}};
}

}  // namespace causalperf
