#include <fstream>
#include <sstream>

// Eigen must come before httplib: <resolv.h> defines a _res macro.
#include "causalperf/api.hpp"
#include "causalperf/effects.hpp"

#include <httplib.h>

namespace causalperf::api {

namespace {

Response ok(const json& body, int status = 200) { return {status, serialize(body), "application/json"}; }

Response fail(ErrorCode code, const std::string& message) {
  return {http_status(code), serialize(error_json(code, message)), "application/json"};
}

Response fail(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return fail(err->code(), err->what());
  if (dynamic_cast<const json::exception*>(&e) != nullptr) return fail(ErrorCode::ParseError, e.what());
  return {500, serialize(error_json(ErrorCode::InvalidArgument, e.what())), "application/json"};
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
  }
}

/// Runs a handler, mapping library errors to status codes.
template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return fail(e);
  }
}

PerformanceDataset dataset_from_body(const json& body, const Schema& schema) {
  if (body.contains("csv")) {
    std::istringstream in(body.at("csv").get<std::string>());
    return parse_csv(in, schema);
  }
  if (body.contains("rows")) {
    std::vector<Row> rows;
    for (const auto& r : body.at("rows")) rows.push_back(row_from_json(r, schema));
    return PerformanceDataset(schema, rows);
  }
  throw Error(ErrorCode::InvalidArgument, "body needs csv text or rows");
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::SutFailure:
    case ErrorCode::NonFiniteEntropy:
    case ErrorCode::NonAdditiveVertex:
    case ErrorCode::Io: return 500;
    default: return 400;
  }
}

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  if (!options_.data_dir.empty()) {
    std::filesystem::create_directories(options_.data_dir / "models");
    std::filesystem::create_directories(options_.data_dir / "sessions");
  }
}

std::optional<json> Service::load(const std::string& kind, const std::string& id) const {
  if (options_.data_dir.empty()) return std::nullopt;
  const auto path = options_.data_dir / kind / (id + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  return read_json_file(path);
}

void Service::store(const std::string& kind, const std::string& id, const json& doc) const {
  if (options_.data_dir.empty()) return;
  const auto path = options_.data_dir / kind / (id + ".json");
  const auto tmp = path.string() + ".tmp";
  write_file(tmp, serialize(doc));
  std::filesystem::rename(tmp, path);
}

// ------------------------------------------------------------------ models

std::shared_ptr<const Service::ModelEntry> Service::find_model(const std::string& id) {
  {
    std::lock_guard lock(registry_mutex_);
    if (auto it = models_.find(id); it != models_.end()) return it->second;
  }
  auto stored = load("models", id);
  if (!stored) throw Error(ErrorCode::NotFound, "unknown model " + id);
  auto entry = std::make_shared<ModelEntry>();
  entry->document = stored->at("model");
  entry->model = std::make_shared<const StructuralModel>(model_from_json(entry->document));
  std::lock_guard lock(registry_mutex_);
  return models_.emplace(id, std::move(entry)).first->second;
}

Response Service::create_model(const std::string& body_text) {
  return guarded([&] {
    const json body = parse_body(body_text);
    if (!body.is_object() || !body.contains("schema")) throw Error(ErrorCode::InvalidArgument, "body needs a schema");
    const Schema schema = schema_from_json(body.at("schema"));
    const auto ds = dataset_from_body(body, schema);
    LearnRequest request;
    request.alpha = body.value("alpha", request.alpha);
    request.depth = body.value("depth", request.depth);
    request.degree = body.value("degree", request.degree);
    request.seed = body.value("seed", request.seed);
    request.aggregate = body.value("aggregate", request.aggregate);

    std::ostringstream csv;
    write_csv(csv, ds);
    const json canonical{{"schema", to_json(schema)},
                         {"csv", csv.str()},
                         {"alpha", request.alpha},
                         {"depth", request.depth},
                         {"degree", request.degree},
                         {"seed", request.seed},
                         {"aggregate", request.aggregate}};
    const auto id = content_id(canonical.dump());
    bool existing = true;
    std::shared_ptr<const ModelEntry> entry;
    try {
      entry = find_model(id);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotFound) throw;
      existing = false;
      auto fresh = std::make_shared<ModelEntry>();
      fresh->document = learn_model(ds, request);
      fresh->model = std::make_shared<const StructuralModel>(model_from_json(fresh->document));
      store("models", id, {{"id", id}, {"request", canonical}, {"model", fresh->document}});
      std::lock_guard lock(registry_mutex_);
      entry = models_.emplace(id, std::move(fresh)).first->second;
    }
    return ok({{"id", id},
               {"existing", existing},
               {"rows", entry->document.at("learning").at("rows")},
               {"graph", entry->document.at("graph")},
               {"warnings", entry->document.at("warnings")}},
              existing ? 200 : 201);
  });
}

Response Service::model(const std::string& id) {
  return guarded([&] { return ok(find_model(id)->document); });
}

Response Service::model_graph(const std::string& id) {
  return guarded([&] { return ok(find_model(id)->document.at("graph")); });
}

Response Service::model_paths(const std::string& id, const std::optional<std::string>& objective,
                              const std::optional<std::string>& k) {
  return guarded([&] {
    const auto entry = find_model(id);
    const auto& schema = entry->model->schema();
    if (!objective) throw Error(ErrorCode::InvalidArgument, "objective query parameter is required");
    const auto idx = schema.find(*objective);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "unknown variable '" + *objective + "'");
    std::size_t top = 5;
    if (k) {
      try {
        top = static_cast<std::size_t>(std::stoul(*k));
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "k must be a positive integer");
      }
    }
    const auto seed = entry->document.at("learning").value("seed", std::uint64_t{0});
    return ok(paths(*entry->model, *idx, top, 1000, seed));
  });
}

Response Service::diagnose(const std::string& id, const std::string& body) {
  return guarded([&] {
    const auto entry = find_model(id);
    json doc = parse_body(body);
    if (doc.is_object() && !doc.contains("seed")) doc["seed"] = entry->document.at("learning").value("seed", 0);
    return ok(api::diagnose(*entry->model, diagnose_request(*entry->model, doc)));
  });
}

Response Service::whatif(const std::string& id, const std::string& body) {
  return guarded([&] {
    const auto entry = find_model(id);
    json doc = parse_body(body);
    if (doc.is_object() && !doc.contains("seed")) doc["seed"] = entry->document.at("learning").value("seed", 0);
    return ok(api::whatif(*entry->model, whatif_request(*entry->model, doc)));
  });
}

// ---------------------------------------------------------------- sessions

std::shared_ptr<const Service::SessionSnapshot> Service::snapshot_of(const std::string& id, const SessionEntry& entry) {
  auto snap = std::make_shared<SessionSnapshot>();
  const auto& s = entry.run->session();
  snap->status = {{"id", id},
                  {"spec", to_json(entry.run->spec())},
                  {"steps", entry.steps},
                  {"done", s.done()},
                  {"stop_reason", s.done() ? json(s.stop_reason()) : json(nullptr)},
                  {"outcome", entry.run->outcome()}};
  snap->trace = entry.run->trace_lines();
  return snap;
}

std::shared_ptr<const Service::SessionSnapshot> Service::current(const SessionEntry& entry) {
  std::lock_guard lock(entry.snapshot_mutex);
  return entry.snapshot;
}

std::shared_ptr<Service::SessionEntry> Service::find_session(const std::string& id) {
  {
    std::lock_guard lock(registry_mutex_);
    if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  }
  auto stored = load("sessions", id);
  if (!stored) throw Error(ErrorCode::NotFound, "unknown session " + id);
  // The loop is deterministic, so replaying the recorded steps restores it.
  auto entry = std::make_shared<SessionEntry>();
  entry->run = std::make_unique<LoopRun>(session_spec_from_json(stored->at("spec")));
  const auto steps = stored->at("steps").get<std::size_t>();
  while (entry->steps < steps && !entry->run->session().done()) {
    entry->run->session().step();
    ++entry->steps;
  }
  entry->snapshot = snapshot_of(id, *entry);
  std::lock_guard lock(registry_mutex_);
  return sessions_.emplace(id, std::move(entry)).first->second;
}

Response Service::create_session(const std::string& body) {
  return guarded([&] {
    const auto spec = session_spec_from_json(parse_body(body));
    const json canonical = to_json(spec);
    const auto id = content_id(canonical.dump());
    std::shared_ptr<SessionEntry> entry;
    bool existing = true;
    try {
      entry = find_session(id);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotFound) throw;
      existing = false;
      auto fresh = std::make_shared<SessionEntry>();
      fresh->run = std::make_unique<LoopRun>(spec);
      fresh->snapshot = snapshot_of(id, *fresh);
      store("sessions", id, {{"id", id}, {"spec", canonical}, {"steps", 0}});
      std::lock_guard lock(registry_mutex_);
      entry = sessions_.emplace(id, std::move(fresh)).first->second;
    }
    json out = current(*entry)->status;
    out["existing"] = existing;
    return ok(out, existing ? 200 : 201);
  });
}

Response Service::session(const std::string& id) {
  return guarded([&] { return ok(current(*find_session(id))->status); });
}

Response Service::step_session(const std::string& id) {
  return guarded([&] {
    const auto entry = find_session(id);
    std::lock_guard step_lock(entry->step_mutex);
    auto& loop = entry->run->session();
    if (loop.done()) throw Error(ErrorCode::Conflict, "session already terminated (" + loop.stop_reason() + ")");
    const auto before = loop.trace().size();
    const auto result = loop.step();
    ++entry->steps;
    json added = json::array();
    for (std::size_t i = before; i < loop.trace().size(); ++i) {
      added.push_back(to_json(loop.trace()[i], loop.dataset().schema()));
    }
    store("sessions", id, {{"id", id}, {"spec", to_json(entry->run->spec())}, {"steps", entry->steps}});
    auto snap = snapshot_of(id, *entry);
    {
      std::lock_guard lock(entry->snapshot_mutex);
      entry->snapshot = snap;
    }
    return ok({{"id", id},
               {"iteration", result.iteration},
               {"measured", result.measured},
               {"done", result.done},
               {"stop_reason", result.done ? json(result.stop_reason) : json(nullptr)},
               {"summary", result.summary},
               {"trace", added}});
  });
}

Response Service::session_trace(const std::string& id) {
  return guarded([&] {
    return Response{200, current(*find_session(id))->trace, "application/x-ndjson"};
  });
}

// -------------------------------------------------------------------- HTTP

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  explicit Impl(Service& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

}  // namespace

HttpServer::HttpServer(Service& service, std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  const std::string id = "([0-9a-f]{16})";
  srv.Post("/models", [&](const httplib::Request& req, httplib::Response& res) { reply(res, svc.create_model(req.body)); });
  srv.Get("/models/" + id, [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.model(req.matches[1]));
  });
  srv.Get("/models/" + id + "/graph", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.model_graph(req.matches[1]));
  });
  srv.Get("/models/" + id + "/paths", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.model_paths(req.matches[1], query(req, "objective"), query(req, "k")));
  });
  srv.Post("/models/" + id + "/diagnose", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.diagnose(req.matches[1], req.body));
  });
  srv.Post("/models/" + id + "/whatif", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.whatif(req.matches[1], req.body));
  });
  srv.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.create_session(req.body));
  });
  srv.Get("/sessions/" + id, [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.session(req.matches[1]));
  });
  srv.Post("/sessions/" + id + "/step", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.step_session(req.matches[1]));
  });
  srv.Get("/sessions/" + id + "/trace", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.session_trace(req.matches[1]));
  });

  if (ui_dir) srv.set_mount_point("/ui", ui_dir->string());

  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      res.set_content(serialize(error_json(ErrorCode::NotFound, "no route for " + req.method + " " + req.path)),
                      "application/json");
    }
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(serialize(error_json(ErrorCode::Io, message)), "application/json");
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) return srv.bind_to_any_port(host);
  if (!srv.bind_to_port(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace causalperf::api
