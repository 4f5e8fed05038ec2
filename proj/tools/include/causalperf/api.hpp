#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalperf/dataset.hpp"
#include "causalperf/error.hpp"
#include "causalperf/harness.hpp"
#include "causalperf/loop.hpp"
#include "causalperf/scm.hpp"

namespace causalperf::api {

using nlohmann::json;

/// Pretty-printed document plus trailing newline; every artifact and HTTP
/// body goes through this so CLI files and service responses match byte for byte.
std::string serialize(const json& doc);

/// {"error": {"code": ..., "message": ...}}
json error_json(ErrorCode code, const std::string& message);
json error_json(const std::exception& e);

/// FNV-1a 64-bit, lowercase hex.
std::string content_id(const std::string& bytes);

json read_json_file(const std::filesystem::path& path);
/// Inline JSON when the text starts with '{' or '[', otherwise a file path.
json json_argument(const std::string& text);
void write_file(const std::filesystem::path& path, const std::string& bytes);

struct LearnRequest {
  double alpha = 0.05;
  int depth = -1;
  int degree = 2;
  std::uint64_t seed = 0;
  bool aggregate = false;
};

/// learn_cpm + fit. The result is the model JSON with the learning report
/// (PAG, entropic decisions) under "learning".
json learn_model(const PerformanceDataset& ds, const LearnRequest& request);

struct DiagnoseRequest {
  Row fault;
  std::vector<std::size_t> objectives;
  std::size_t k = 5;
  std::size_t ace_mc = 1000;
  std::size_t ice_mc = 1000;
  double margin = 0.0;
  std::optional<std::vector<double>> thresholds;
  std::uint64_t seed = 0;
};

/// {"root_causes", "paths", "repairs", "best", "improving"}
json diagnose(const StructuralModel& model, const DiagnoseRequest& request);
DiagnoseRequest diagnose_request(const StructuralModel& model, const json& body);

json paths(const StructuralModel& model, std::size_t objective, std::size_t k, std::size_t n_mc, std::uint64_t seed);

struct WhatIfRequest {
  Row factual;
  Assignment interventions;
  std::size_t n_mc = 1000;
  std::uint64_t seed = 0;
};

/// Counterfactual summary: mean row, per-objective deltas and the
/// probability that every objective is strictly better than the factual one.
json whatif(const StructuralModel& model, const WhatIfRequest& request);
WhatIfRequest whatif_request(const StructuralModel& model, const json& body);

/// "OPT=VAL,OPT=VAL" -> assignment; values parsed per the variable's domain.
Assignment parse_settings(const std::string& text, const Schema& schema);
std::vector<std::size_t> parse_names(const std::vector<std::string>& names, const Schema& schema);

/// Everything a loop session needs, owned in one place.
struct SessionSpec {
  json sut;  // {"type": "simulate"|"replay"|"exec", ...}
  LoopMode mode = LoopMode::Debug;
  std::vector<std::string> objectives;  // empty: fault objectives (simulate) or all objectives
  Budget budget;
  std::optional<json> fault;            // row JSON
  std::optional<json> targets;          // {objective: value}
  std::size_t initial_samples = 0;
  std::size_t k = 5;
  int degree = 2;
  double alpha = 0.05;
  double margin = 0.0;
  std::uint64_t seed = 0;
};

SessionSpec session_spec_from_json(const json& doc);
json to_json(const SessionSpec& spec);

/// "simulate:<world.json>", "replay:<csv>" (needs a schema), "exec:<cmd>"
/// (needs a schema) -> SUT JSON.
json sut_argument(const std::string& text, const std::optional<std::filesystem::path>& schema);

class LoopRun {
 public:
  explicit LoopRun(SessionSpec spec);
  LoopSession& session() { return *session_; }
  const LoopSession& session() const { return *session_; }
  const SessionSpec& spec() const { return spec_; }
  const GroundTruthWorld* world() const { return world_.get(); }
  json outcome() const;
  /// One JSON object per line.
  std::string trace_lines() const;

 private:
  SessionSpec spec_;
  std::unique_ptr<GroundTruthWorld> world_;
  std::unique_ptr<SystemUnderTest> sut_;
  std::unique_ptr<LoopSession> session_;
};

/// Predicted root causes and measured fix from an outcome (debug-loop or
/// diagnose output) scored against the world's injected fault.
json evaluate_outcome(const GroundTruthWorld& world, const json& outcome);

// ------------------------------------------------------------------ service

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct ServiceOptions {
  std::filesystem::path data_dir;  // empty: in-memory only
};

/// Transport-independent request handlers. Models are immutable once
/// created; sessions are stepped under a per-id exclusive lock.
class Service {
 public:
  explicit Service(ServiceOptions options = {});

  Response create_model(const std::string& body);
  Response model(const std::string& id);
  Response model_graph(const std::string& id);
  Response model_paths(const std::string& id, const std::optional<std::string>& objective,
                       const std::optional<std::string>& k);
  Response diagnose(const std::string& id, const std::string& body);
  Response whatif(const std::string& id, const std::string& body);
  Response create_session(const std::string& body);
  Response session(const std::string& id);
  Response step_session(const std::string& id);
  Response session_trace(const std::string& id);

 private:
  struct ModelEntry {
    json document;
    std::shared_ptr<const StructuralModel> model;
  };
  /// What readers see; replaced wholesale after every step.
  struct SessionSnapshot {
    json status;
    std::string trace;
  };
  struct SessionEntry {
    std::mutex step_mutex;  // exclusive: one step at a time
    std::unique_ptr<LoopRun> run;
    std::size_t steps = 0;
    mutable std::mutex snapshot_mutex;
    std::shared_ptr<const SessionSnapshot> snapshot;
  };

  std::shared_ptr<const ModelEntry> find_model(const std::string& id);
  std::shared_ptr<SessionEntry> find_session(const std::string& id);
  static std::shared_ptr<const SessionSnapshot> snapshot_of(const std::string& id, const SessionEntry& entry);
  static std::shared_ptr<const SessionSnapshot> current(const SessionEntry& entry);
  std::optional<json> load(const std::string& kind, const std::string& id) const;
  void store(const std::string& kind, const std::string& id, const json& doc) const;

  ServiceOptions options_;
  std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const ModelEntry>> models_;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
};

int http_status(ErrorCode code);

/// HTTP binding of a Service, with CORS and static files under /ui.
class HttpServer {
 public:
  HttpServer(Service& service, std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace causalperf::api
