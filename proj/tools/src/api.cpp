#include "causalperf/api.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "causalperf/effects.hpp"
#include "causalperf/pareto.hpp"
#include "causalperf/repair.hpp"
#include "causalperf/structure.hpp"

namespace causalperf::api {

std::string serialize(const json& doc) { return doc.dump(2) + "\n"; }

json error_json(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", std::string(to_string(code))}, {"message", message}}}};
}

json error_json(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return error_json(err->code(), err->what());
  if (dynamic_cast<const json::exception*>(&e) != nullptr) return error_json(ErrorCode::ParseError, e.what());
  return error_json(ErrorCode::InvalidArgument, e.what());
}

std::string content_id(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

json json_argument(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '{' || text[first] == '[')) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, std::string("inline JSON: ") + e.what());
    }
  }
  return read_json_file(text);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << bytes;
}

// ------------------------------------------------------------------ learn

json learn_model(const PerformanceDataset& input, const LearnRequest& request) {
  const PerformanceDataset ds = request.aggregate ? aggregate_replicates(input) : input;
  LearnOptions options;
  options.alpha = request.alpha;
  options.max_depth = request.depth;
  options.seed = request.seed;
  const auto learned = learn_cpm_detailed(ds, options);
  const auto model = fit(learned.graph, ds, request.degree);
  json doc = to_json(model);
  json decisions = json::array();
  for (const auto& d : learned.decisions) decisions.push_back(to_json(d, learned.graph));
  doc["learning"] = {{"alpha", request.alpha},
                     {"depth", request.depth},
                     {"degree", request.degree},
                     {"seed", request.seed},
                     {"rows", ds.rows()},
                     {"tests", learned.tests},
                     {"pag", to_json(learned.pag)},
                     {"decisions", decisions}};
  return doc;
}

// --------------------------------------------------------------- diagnose

namespace {

std::uint64_t seed_of(const json& body, std::uint64_t fallback) { return body.value("seed", fallback); }

json names_json(const std::vector<std::size_t>& idx, const Schema& schema) {
  json out = json::array();
  for (auto i : idx) out.push_back(schema[i].name);
  return out;
}

}  // namespace

std::vector<std::size_t> parse_names(const std::vector<std::string>& names, const Schema& schema) {
  std::vector<std::size_t> out;
  for (const auto& n : names) {
    const auto idx = schema.find(n);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "unknown variable '" + n + "'");
    out.push_back(*idx);
  }
  return out;
}

json paths(const StructuralModel& model, std::size_t objective, std::size_t k, std::size_t n_mc, std::uint64_t seed) {
  const auto ranked = rank_paths(model, objective, k, {n_mc, mix_seed(seed, objective)});
  return to_json(ranked, model);
}

DiagnoseRequest diagnose_request(const StructuralModel& model, const json& body) {
  const auto& schema = model.schema();
  if (!body.is_object() || !body.contains("fault")) throw Error(ErrorCode::InvalidArgument, "body needs a fault row");
  DiagnoseRequest r;
  r.fault = row_from_json(body.at("fault"), schema);
  if (body.contains("objectives")) {
    r.objectives = parse_names(body.at("objectives").get<std::vector<std::string>>(), schema);
  } else {
    r.objectives = schema.objectives();
  }
  r.k = body.value("k", r.k);
  r.ace_mc = body.value("ace_mc", r.ace_mc);
  r.ice_mc = body.value("ice_mc", r.ice_mc);
  r.margin = body.value("margin", r.margin);
  r.seed = seed_of(body, r.seed);
  if (body.contains("thresholds")) {
    std::vector<double> t;
    for (auto o : r.objectives) t.push_back(body.at("thresholds").at(schema[o].name).get<double>());
    r.thresholds = t;
  }
  return r;
}

json diagnose(const StructuralModel& model, const DiagnoseRequest& r) {
  const auto& schema = model.schema();
  if (r.objectives.empty()) throw Error(ErrorCode::InvalidArgument, "at least one objective is required");
  if (r.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  for (auto o : r.objectives) {
    if (o >= schema.size() || schema[o].kind != VariableKind::Objective) {
      throw Error(ErrorCode::InvalidArgument, "diagnose objectives must be objective variables");
    }
  }
  std::vector<RankedPaths> ranked;
  json paths_json = json::array();
  for (auto y : r.objectives) {
    ranked.push_back(rank_paths(model, y, r.k, {r.ace_mc, mix_seed(r.seed, y)}));
    paths_json.push_back(to_json(ranked.back(), model));
  }
  const auto thresholds = r.thresholds.value_or(fault_thresholds(r.fault, r.objectives));
  json thresholds_json = json::object();
  for (std::size_t i = 0; i < r.objectives.size(); ++i) thresholds_json[schema[r.objectives[i]].name] = thresholds[i];

  json out{{"objectives", names_json(r.objectives, schema)},
           {"thresholds", thresholds_json},
           {"root_causes", to_json(root_causes(ranked), model)},
           {"paths", paths_json},
           {"repairs", json::array()},
           {"best", nullptr},
           {"improving", false}};
  std::vector<Repair> repairs;
  try {
    repairs = build_repair_set(ranked, r.fault, model);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyPaths) throw;
    out["warning"] = e.what();
    return out;
  }
  IceOptions ice_options;
  ice_options.n_mc = r.ice_mc;
  ice_options.seed = mix_seed(r.seed, 0x1ce);
  ice_options.margin = r.margin;
  const auto verdicts =
      rank_repairs(score_repairs(model, r.fault, repairs, r.objectives, thresholds, ice_options), r.fault);
  json repairs_json = json::array();
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    json v = to_json(verdicts[i], model);
    v["rank"] = i + 1;
    v["changed"] = verdicts[i].repair.changed(r.fault);
    repairs_json.push_back(std::move(v));
  }
  out["repairs"] = repairs_json;
  out["best"] = repairs_json.front();
  out["improving"] = verdicts.front().ice > 0.0;
  return out;
}

// ----------------------------------------------------------------- what-if

Assignment parse_settings(const std::string& text, const Schema& schema) {
  Assignment out;
  std::stringstream items(text);
  std::string item;
  while (std::getline(items, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "expected NAME=VALUE, got '" + item + "'");
    const auto name = item.substr(0, eq);
    const auto idx = schema.find(name);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "unknown variable '" + name + "'");
    out[*idx] = schema[*idx].parse_value(item.substr(eq + 1));
  }
  return out;
}

WhatIfRequest whatif_request(const StructuralModel& model, const json& body) {
  const auto& schema = model.schema();
  if (!body.is_object() || !body.contains("factual")) throw Error(ErrorCode::InvalidArgument, "body needs a factual row");
  WhatIfRequest r;
  r.factual = row_from_json(body.at("factual"), schema, true);
  if (body.contains("interventions")) r.interventions = assignment_from_json(body.at("interventions"), schema);
  r.n_mc = body.value("n_mc", r.n_mc);
  r.seed = seed_of(body, r.seed);
  return r;
}

json whatif(const StructuralModel& model, const WhatIfRequest& r) {
  const auto& schema = model.schema();
  CounterfactualOptions options;
  options.n_mc = r.n_mc;
  options.seed = r.seed;
  const auto cf = counterfactual(model, r.factual, r.interventions, options);
  const auto objectives = schema.objectives();
  json delta = json::object();
  std::vector<std::size_t> observed;
  std::vector<double> thresholds;
  for (auto y : objectives) {
    delta[schema[y].name] = std::isnan(r.factual[y]) ? json(nullptr) : json(cf.mean[y] - r.factual[y]);
    if (!std::isnan(r.factual[y])) {
      observed.push_back(y);
      thresholds.push_back(r.factual[y]);
    }
  }
  json p_fix = nullptr;
  if (!observed.empty()) {
    std::size_t fixed = 0;
    for (const auto& w : cf.worlds) fixed += meets_thresholds(schema, w, observed, thresholds) ? 1 : 0;
    p_fix = static_cast<double>(fixed) / static_cast<double>(cf.worlds.size());
  }
  return {{"factual", row_to_json(r.factual, schema)},
          {"interventions", assignment_to_json(r.interventions, schema)},
          {"counterfactual", row_to_json(cf.mean, schema)},
          {"delta", delta},
          {"p_fix", p_fix},
          {"worlds", cf.worlds.size()},
          {"point_identified", cf.point_identified},
          {"interventional_fallback", cf.interventional_fallback},
          {"fallback_vertices", names_json(cf.fallback_vertices, schema)}};
}

// ---------------------------------------------------------------- sessions

namespace {

LoopMode parse_mode(const std::string& text) {
  if (text == "debug" || text == "Debug") return LoopMode::Debug;
  if (text == "optimize" || text == "Optimize") return LoopMode::Optimize;
  throw Error(ErrorCode::InvalidArgument, "mode must be debug or optimize");
}

std::string mode_name(LoopMode mode) { return mode == LoopMode::Debug ? "debug" : "optimize"; }

Schema sut_schema(const json& sut) {
  if (!sut.contains("schema")) throw Error(ErrorCode::InvalidArgument, "replay and exec SUTs need a schema");
  return schema_from_json(sut.at("schema"));
}

}  // namespace

SessionSpec session_spec_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::InvalidArgument, "session spec must be an object");
  SessionSpec s;
  try {
    s.sut = doc.at("sut");
    if (!s.sut.is_object() || !s.sut.contains("type")) throw Error(ErrorCode::InvalidArgument, "sut needs a type");
    s.mode = parse_mode(doc.value("mode", std::string("debug")));
    s.objectives = doc.value("objectives", std::vector<std::string>{});
    if (doc.contains("budget")) {
      const auto& b = doc.at("budget");
      if (b.is_number()) {
        s.budget.max_samples = b.get<std::size_t>();
      } else {
        s.budget.max_samples = b.value("max_samples", s.budget.max_samples);
        s.budget.max_wallclock = std::chrono::duration<double>(b.value("max_wallclock_s", 0.0));
        s.budget.repeat_stop = b.value("repeat_stop", s.budget.repeat_stop);
      }
    }
    if (doc.contains("fault") && !doc.at("fault").is_null()) s.fault = doc.at("fault");
    if (doc.contains("targets") && !doc.at("targets").is_null()) s.targets = doc.at("targets");
    s.initial_samples = doc.value("initial_samples", s.initial_samples);
    s.k = doc.value("k", s.k);
    s.degree = doc.value("degree", s.degree);
    s.alpha = doc.value("alpha", s.alpha);
    s.margin = doc.value("margin", s.margin);
    s.seed = doc.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed session spec: ") + e.what());
  }
  return s;
}

json to_json(const SessionSpec& s) {
  return {{"sut", s.sut},
          {"mode", mode_name(s.mode)},
          {"objectives", s.objectives},
          {"budget",
           {{"max_samples", s.budget.max_samples},
            {"max_wallclock_s", s.budget.max_wallclock.count()},
            {"repeat_stop", s.budget.repeat_stop}}},
          {"fault", s.fault ? *s.fault : json(nullptr)},
          {"targets", s.targets ? *s.targets : json(nullptr)},
          {"initial_samples", s.initial_samples},
          {"k", s.k},
          {"degree", s.degree},
          {"alpha", s.alpha},
          {"margin", s.margin},
          {"seed", s.seed}};
}

json sut_argument(const std::string& text, const std::optional<std::filesystem::path>& schema) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--sut must be simulate:, replay: or exec:");
  const auto kind = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  if (kind == "simulate") return {{"type", "simulate"}, {"world", read_json_file(arg)}};
  if (!schema) throw Error(ErrorCode::InvalidArgument, "--schema is required for " + kind + " SUTs");
  const json schema_doc = to_json(load_schema(*schema));
  if (kind == "replay") return {{"type", "replay"}, {"csv", arg}, {"schema", schema_doc}};
  if (kind == "exec") return {{"type", "exec"}, {"command", arg}, {"schema", schema_doc}};
  throw Error(ErrorCode::InvalidArgument, "unknown SUT kind '" + kind + "'");
}

LoopRun::LoopRun(SessionSpec spec) : spec_(std::move(spec)) {
  const auto type = spec_.sut.at("type").get<std::string>();
  if (type == "simulate") {
    if (!spec_.sut.contains("world")) throw Error(ErrorCode::InvalidArgument, "simulate SUT needs a world");
    world_ = std::make_unique<GroundTruthWorld>(world_from_json(spec_.sut.at("world")));
    sut_ = std::make_unique<SimulatedSut>(*world_, spec_.sut.value("seed", mix_seed(spec_.seed, 0x50)));
  } else if (type == "replay") {
    const Schema schema = sut_schema(spec_.sut);
    sut_ = std::make_unique<ReplaySut>(load_csv(spec_.sut.at("csv").get<std::string>(), schema));
  } else if (type == "exec") {
    sut_ = std::make_unique<CommandSut>(spec_.sut.at("command").get<std::string>(), sut_schema(spec_.sut));
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown SUT type '" + type + "'");
  }
  const auto& schema = sut_->schema();

  std::optional<Row> fault;
  if (spec_.fault) {
    fault = row_from_json(*spec_.fault, schema);
  } else if (spec_.mode == LoopMode::Debug && world_ && world_->fault) {
    fault = world_->fault->row;
  }

  std::vector<std::size_t> objectives;
  if (!spec_.objectives.empty()) {
    objectives = parse_names(spec_.objectives, schema);
  } else if (spec_.mode == LoopMode::Debug && world_ && world_->fault && !spec_.fault) {
    objectives = world_->fault->faulty_objectives;
  } else {
    objectives = schema.objectives();
  }

  LoopParams params;
  params.learn.alpha = spec_.alpha;
  params.learn.seed = spec_.seed;
  params.degree = spec_.degree;
  params.k = spec_.k;
  params.margin = spec_.margin;
  params.initial_samples = spec_.initial_samples;
  params.seed = spec_.seed;
  if (spec_.targets) {
    std::vector<double> t;
    for (auto o : objectives) t.push_back(spec_.targets->at(schema[o].name).get<double>());
    params.targets = t;
  } else if (spec_.mode == LoopMode::Debug && world_ && world_->fault && !spec_.fault) {
    const auto all = world_->objectives();
    std::vector<double> t;
    for (auto o : objectives) {
      const auto pos = static_cast<std::size_t>(std::find(all.begin(), all.end(), o) - all.begin());
      t.push_back(world_->fault->targets[pos]);
    }
    params.targets = t;
  }
  std::optional<MixedCausalGraph> truth;
  if (world_) truth = world_->graph;
  session_ = std::make_unique<LoopSession>(*sut_, spec_.mode, objectives, spec_.budget, params, fault, truth);
}

json LoopRun::outcome() const {
  json out = session_->outcome();
  out["seed"] = spec_.seed;
  if (session_->graph()) out["graph"] = to_json(*session_->graph());
  return out;
}

std::string LoopRun::trace_lines() const {
  std::string out;
  for (const auto& e : session_->trace()) out += to_json(e, sut_->schema()).dump() + "\n";
  return out;
}

// -------------------------------------------------------------------- eval

json evaluate_outcome(const GroundTruthWorld& world, const json& outcome) {
  if (!world.fault) throw Error(ErrorCode::MissingGroundTruth, "world has no injected fault");
  const auto& schema = world.schema;
  const auto& fault = *world.fault;

  std::optional<Assignment> config;
  if (outcome.contains("repair") && outcome["repair"].is_object()) {
    config = assignment_from_json(outcome["repair"], schema);
  } else if (outcome.contains("best") && outcome["best"].is_object() && outcome["best"].contains("assignment")) {
    config = assignment_from_json(outcome["best"]["assignment"], schema);
  } else if (outcome.contains("best_config") && outcome["best_config"].is_object()) {
    config = assignment_from_json(outcome["best_config"], schema);
  }

  std::vector<std::size_t> predicted;
  if (outcome.contains("root_causes")) {
    for (const auto& item : outcome["root_causes"]) {
      const std::string name = item.is_string() ? item.get<std::string>() : item.at("option").get<std::string>();
      predicted.push_back(parse_names({name}, schema).front());
    }
  } else if (config) {
    for (auto o : schema.options()) {
      const auto it = config->find(o);
      if (it != config->end() && it->second != fault.row[o]) predicted.push_back(o);
    }
  }

  Row measured = fault.row;
  if (outcome.contains("measurement") && outcome["measurement"].is_object()) {
    measured = row_from_json(outcome["measurement"], schema);
  } else if (config) {
    Assignment full;
    for (auto o : schema.options()) full[o] = fault.row[o];
    for (const auto& [k, v] : *config) full[k] = v;
    measured = frozen_outcome(world, full);
  }

  std::optional<MixedCausalGraph> learned;
  if (outcome.contains("graph") && outcome["graph"].is_object()) learned = graph_from_json(outcome["graph"]);
  auto report = metrics(predicted, world, measured, learned ? &*learned : nullptr);

  const auto objectives = world.objectives();
  if (objectives.size() == 2 && outcome.contains("pareto_front") && world.enumerable) {
    std::vector<Point> all, front;
    for (const auto& c : all_configurations(schema)) {
      const Row r = expected_row(world, c);
      all.push_back({oriented(schema[objectives[0]], r[objectives[0]]), oriented(schema[objectives[1]], r[objectives[1]])});
    }
    // Judge the configurations found by their true (noise-free) objectives.
    for (const auto& item : outcome["pareto_front"]) {
      const Row r = expected_row(world, options_of(row_from_json(item, schema), schema));
      front.push_back({oriented(schema[objectives[0]], r[objectives[0]]), oriented(schema[objectives[1]], r[objectives[1]])});
    }
    report.hypervolume_error = hypervolume_error(front, oracle_front(world), reference_point(all));
  }

  json out = to_json(report);
  out["faulty_objectives"] = names_json(fault.faulty_objectives, schema);
  out["predicted_root_causes"] = names_json(predicted, schema);
  out["true_root_causes"] = names_json(fault.root_causes, schema);
  return out;
}

}  // namespace causalperf::api
