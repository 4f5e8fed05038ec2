#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "causalperf/api.hpp"
#include "causalperf/graph.hpp"
#include "causalperf/harness.hpp"

namespace fs = std::filesystem;
using namespace causalperf;
using api::json;

namespace {

api::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

struct Common {
  std::uint64_t seed = 0;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void emit(const Common& c, const std::string& name, const std::string& bytes) {
  api::write_file(fs::path(c.out) / name, bytes);
}

StructuralModel load_model(const std::string& path) { return model_from_json(api::read_json_file(path)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpm: causal performance models for configurable systems"};
  app.require_subcommand(1);

  // learn
  Common learn_c;
  std::string learn_data, learn_schema;
  api::LearnRequest learn_req;
  auto* learn = app.add_subcommand("learn", "Learn a causal performance model from measurements");
  add_common(learn, learn_c);
  learn->add_option("--data", learn_data, "CSV measurements")->required();
  learn->add_option("--schema", learn_schema, "Variable schema JSON")->required();
  learn->add_option("--alpha", learn_req.alpha, "Significance level")->capture_default_str();
  learn->add_option("--depth", learn_req.depth, "Maximum conditioning set size (-1: unbounded)")->capture_default_str();
  learn->add_option("--degree", learn_req.degree, "Polynomial degree of the mechanisms")->capture_default_str();
  learn->add_flag("--aggregate", learn_req.aggregate, "Collapse replicates to their median first");

  // diagnose
  Common diag_c;
  std::string diag_model, diag_fault, diag_thresholds;
  std::vector<std::string> diag_objectives;
  api::DiagnoseRequest diag_req;
  auto* diag = app.add_subcommand("diagnose", "Rank root causes and score repairs for a fault");
  add_common(diag, diag_c);
  diag->add_option("--model", diag_model, "Model JSON")->required();
  diag->add_option("--fault", diag_fault, "Fault row (JSON file or inline object)")->required();
  diag->add_option("--objectives", diag_objectives, "Objective names")->delimiter(',');
  diag->add_option("--k", diag_req.k, "Paths kept per objective")->capture_default_str();
  diag->add_option("--ace-mc", diag_req.ace_mc, "Monte-Carlo draws per ACE")->capture_default_str();
  diag->add_option("--ice-mc", diag_req.ice_mc, "Counterfactual worlds per repair")->capture_default_str();
  diag->add_option("--margin", diag_req.margin, "Required relative improvement")->capture_default_str();
  diag->add_option("--thresholds", diag_thresholds, "OBJ=VAL,... (default: the fault values)");

  // whatif
  Common wi_c;
  std::string wi_model, wi_factual, wi_set;
  std::size_t wi_mc = 1000;
  auto* wi = app.add_subcommand("whatif", "Counterfactual outcome of changing options in a measured row");
  add_common(wi, wi_c);
  wi->add_option("--model", wi_model, "Model JSON")->required();
  wi->add_option("--factual", wi_factual, "Factual row (JSON file or inline object)")->required();
  wi->add_option("--set", wi_set, "OPT=VAL[,OPT=VAL...]")->required();
  wi->add_option("--n-mc", wi_mc, "Worlds for unidentified noise")->capture_default_str();

  // debug-loop / optimize
  struct LoopArgs {
    Common c;
    std::string sut, fault, targets, schema;
    std::vector<std::string> objectives;
    std::size_t budget = 250, initial = 0, repeat_stop = 5, k = 5;
    double wallclock = 0.0, margin = 0.0, alpha = 0.05;
    int degree = 2;
  };
  LoopArgs dbg_a, opt_a;
  auto add_loop = [](CLI::App* cmd, LoopArgs& a) {
    add_common(cmd, a.c);
    cmd->add_option("--sut", a.sut, "simulate:<world.json> | replay:<csv> | exec:<cmd>")->required();
    cmd->add_option("--budget", a.budget, "Maximum measurements")->capture_default_str();
    cmd->add_option("--schema", a.schema, "Schema JSON (replay and exec SUTs)");
    cmd->add_option("--objectives", a.objectives, "Objective names")->delimiter(',');
    cmd->add_option("--initial", a.initial, "Initial samples (0: max(25, 10% of budget))")->capture_default_str();
    cmd->add_option("--repeat-stop", a.repeat_stop, "Stop after this many identical selections")->capture_default_str();
    cmd->add_option("--wallclock", a.wallclock, "Wallclock limit in seconds (0: none)")->capture_default_str();
    cmd->add_option("--k", a.k, "Paths kept per objective")->capture_default_str();
    cmd->add_option("--degree", a.degree, "Polynomial degree")->capture_default_str();
    cmd->add_option("--alpha", a.alpha, "Significance level")->capture_default_str();
    cmd->add_option("--margin", a.margin, "Required relative improvement")->capture_default_str();
  };
  auto* dbg = app.add_subcommand("debug-loop", "Active-learning loop that repairs a fault");
  add_loop(dbg, dbg_a);
  dbg->add_option("--fault", dbg_a.fault, "Fault row (default: the world's injected fault)");
  dbg->add_option("--targets", dbg_a.targets, "OBJ=VAL,... QoS targets");
  auto* opt = app.add_subcommand("optimize", "Active-learning loop that searches for the best configuration");
  add_loop(opt, opt_a);

  // eval
  Common eval_c;
  std::string eval_world, eval_outcome;
  auto* ev = app.add_subcommand("eval", "Score an outcome against a ground-truth world");
  add_common(ev, eval_c);
  ev->add_option("--world", eval_world, "World JSON")->required();
  ev->add_option("--outcome", eval_outcome, "Outcome JSON (debug-loop or diagnose output)")->required();

  // gen-world
  Common gen_c;
  WorldSpec gen_spec;
  auto* gen = app.add_subcommand("gen-world", "Generate a synthetic ground-truth world with an injected fault");
  add_common(gen, gen_c);
  gen->add_option("--options", gen_spec.n_options, "Number of options")->capture_default_str();
  gen->add_option("--events", gen_spec.n_events, "Number of system events")->capture_default_str();
  gen->add_option("--objectives", gen_spec.n_objectives, "Number of objectives")->capture_default_str();
  gen->add_option("--density", gen_spec.density, "Edge probability")->capture_default_str();
  gen->add_option("--confounders", gen_spec.hidden_confounders, "Hidden confounders between events")
      ->capture_default_str();
  gen->add_flag("--nonlinear", gen_spec.nonlinear, "Add option interaction terms");

  // serve
  std::string host = "127.0.0.1", data_dir = "cpm-data", ui_dir;
  int port = 8080;
  Common serve_c;
  auto* serve = app.add_subcommand("serve", "Run the HTTP query service");
  add_common(serve, serve_c);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (0: any free port)")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Model and session store")->capture_default_str();
  serve->add_option("--ui-dir", ui_dir, "Static files served under /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << api::error_json(ErrorCode::InvalidArgument, e.what()).dump() << "\n";
    return 2;
  }

  try {
    if (*learn) {
      const Schema schema = load_schema(learn_schema);
      learn_req.seed = learn_c.seed;
      const json model = api::learn_model(load_csv(learn_data, schema), learn_req);
      emit(learn_c, "model.json", api::serialize(model));
      emit(learn_c, "graph.dot", to_dot(graph_from_json(model.at("graph"))));
    } else if (*diag) {
      const auto model = load_model(diag_model);
      const auto& schema = model.schema();
      diag_req.fault = row_from_json(api::json_argument(diag_fault), schema);
      diag_req.objectives = diag_objectives.empty() ? schema.objectives() : api::parse_names(diag_objectives, schema);
      diag_req.seed = diag_c.seed;
      if (!diag_thresholds.empty()) {
        const auto t = api::parse_settings(diag_thresholds, schema);
        std::vector<double> values;
        for (auto o : diag_req.objectives) {
          const auto it = t.find(o);
          values.push_back(it != t.end() ? it->second : diag_req.fault[o]);
        }
        diag_req.thresholds = values;
      }
      const json result = api::diagnose(model, diag_req);
      emit(diag_c, "root-causes.json",
           api::serialize({{"objectives", result["objectives"]},
                           {"root_causes", result["root_causes"]},
                           {"paths", result["paths"]}}));
      emit(diag_c, "repairs.json",
           api::serialize({{"objectives", result["objectives"]},
                           {"thresholds", result["thresholds"]},
                           {"repairs", result["repairs"]},
                           {"best", result["best"]},
                           {"improving", result["improving"]}}));
    } else if (*wi) {
      const auto model = load_model(wi_model);
      api::WhatIfRequest req;
      req.factual = row_from_json(api::json_argument(wi_factual), model.schema(), true);
      req.interventions = api::parse_settings(wi_set, model.schema());
      req.n_mc = wi_mc;
      req.seed = wi_c.seed;
      emit(wi_c, "counterfactual.json", api::serialize(api::whatif(model, req)));
    } else if (*dbg || *opt) {
      const bool debug = dbg->parsed();
      const LoopArgs& a = debug ? dbg_a : opt_a;
      api::SessionSpec spec;
      spec.sut = api::sut_argument(a.sut, a.schema.empty() ? std::nullopt : std::optional<fs::path>(a.schema));
      spec.mode = debug ? LoopMode::Debug : LoopMode::Optimize;
      spec.objectives = a.objectives;
      spec.budget.max_samples = a.budget;
      spec.budget.repeat_stop = a.repeat_stop;
      spec.budget.max_wallclock = std::chrono::duration<double>(a.wallclock);
      spec.initial_samples = a.initial;
      spec.k = a.k;
      spec.degree = a.degree;
      spec.alpha = a.alpha;
      spec.margin = a.margin;
      spec.seed = a.c.seed;
      if (debug && !a.fault.empty()) spec.fault = api::json_argument(a.fault);
      if (debug && !a.targets.empty()) {
        json t = json::object();
        const auto schema = spec.sut.contains("schema") ? schema_from_json(spec.sut["schema"])
                                                        : schema_from_json(spec.sut["world"]["schema"]);
        for (const auto& [k, v] : api::parse_settings(a.targets, schema)) t[schema[k].name] = v;
        spec.targets = t;
      }
      api::LoopRun run(spec);
      while (!run.session().done()) run.session().step();
      emit(a.c, "outcome.json", api::serialize(run.outcome()));
      emit(a.c, "trace.jsonl", run.trace_lines());
    } else if (*ev) {
      const auto world = world_from_json(api::read_json_file(eval_world));
      emit(eval_c, "metrics.json", api::serialize(api::evaluate_outcome(world, api::read_json_file(eval_outcome))));
    } else if (*gen) {
      gen_spec.seed = gen_c.seed;
      emit(gen_c, "world.json", api::serialize(to_json(generate_world(gen_spec))));
    } else if (*serve) {
      api::Service service({fs::path(data_dir)});
      api::HttpServer server(service, ui_dir.empty() ? std::nullopt : std::optional<fs::path>(ui_dir));
      const int bound = server.bind(host, port);
      if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << api::json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;
      server.listen();
    }
  } catch (const std::exception& e) {
    std::cerr << api::error_json(e).dump() << "\n";
    return 1;
  }
  return 0;
}
