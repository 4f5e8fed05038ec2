#include "causalperf/scm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <nlohmann/json.hpp>

#include "causalperf/error.hpp"

namespace causalperf {

using nlohmann::json;

namespace {

double base_value(const BaseFeature& f, const Row& values) {
  const double x = values[f.parent];
  if (f.level) return std::abs(x - *f.level) < 0.5 ? 1.0 : 0.0;
  return x / f.scale;
}

/// Monomials of total degree <= degree over the base features, skipping
/// powers of indicators and products of two levels of the same parent.
std::vector<std::vector<std::size_t>> polynomial_terms(const std::vector<BaseFeature>& base, int degree) {
  std::vector<std::vector<std::size_t>> terms{{}};
  std::vector<std::size_t> current;
  std::function<void(std::size_t, int)> extend = [&](std::size_t start, int remaining) {
    if (remaining == 0) return;
    for (std::size_t b = start; b < base.size(); ++b) {
      bool ok = true;
      for (auto prev : current) {
        if (base[prev].parent == base[b].parent && (base[prev].level || base[b].level)) ok = false;
      }
      if (!ok) continue;
      current.push_back(b);
      terms.push_back(current);
      extend(b, remaining - 1);
      current.pop_back();
    }
  };
  extend(0, degree);
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return terms;
}

Eigen::MatrixXd design_matrix(const Mechanism& m, const PerformanceDataset& ds) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.rows()), static_cast<Eigen::Index>(m.terms.size()));
  Row row(ds.cols());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < ds.cols(); ++c) row[c] = ds(r, c);
    std::vector<double> b(m.base.size());
    for (std::size_t i = 0; i < m.base.size(); ++i) b[i] = base_value(m.base[i], row);
    for (std::size_t t = 0; t < m.terms.size(); ++t) {
      double v = 1.0;
      for (auto i : m.terms[t]) v *= b[i];
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = v;
    }
  }
  return x;
}

Mechanism make_mechanism(const Schema& schema, const PerformanceDataset& ds, std::vector<std::size_t> parents,
                         int degree) {
  Mechanism m;
  m.parents = std::move(parents);
  m.degree = degree;
  for (auto p : m.parents) {
    const auto& var = schema[p];
    if (var.is_categorical()) {
      const auto levels = var.levels();
      for (std::size_t l = 1; l < levels.size(); ++l) m.base.push_back({p, levels[l], 1.0});
    } else {
      double scale = 0.0;
      for (std::size_t r = 0; r < ds.rows(); ++r) scale = std::max(scale, std::abs(ds(r, p)));
      m.base.push_back({p, std::nullopt, scale > 0.0 ? scale : 1.0});
    }
  }
  m.terms = polynomial_terms(m.base, degree);
  return m;
}

std::string kind_name(const Variable& v) { return std::string(to_string(v.kind)); }

}  // namespace

double Mechanism::evaluate(const Row& values) const {
  std::vector<double> b(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) b[i] = base_value(base[i], values);
  double y = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    double v = coefficients(static_cast<Eigen::Index>(t));
    for (auto i : terms[t]) v *= b[i];
    y += v;
  }
  return y;
}

Eigen::VectorXd Mechanism::raw_coefficients() const {
  Eigen::VectorXd raw = coefficients;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    for (auto i : terms[t]) raw(static_cast<Eigen::Index>(t)) /= base[i].scale;
  }
  return raw;
}

// ------------------------------------------------------------ StructuralModel

void StructuralModel::finalize() {
  order_ = graph_.topological_order();
  const std::size_t p = graph_.size();
  std::vector<std::size_t> parent(p);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    return parent[v] == v ? v : parent[v] = find(parent[v]);
  };
  for (const auto& e : graph_.edges()) {
    if (graph_.is_bidirected(e.u, e.v)) parent[find(e.u)] = find(e.v);
  }
  components_.clear();
  component_of_.assign(p, 0);
  std::vector<long> index_of_root(p, -1);
  for (std::size_t v = 0; v < p; ++v) {
    const auto r = find(v);
    if (index_of_root[r] < 0) {
      index_of_root[r] = static_cast<long>(components_.size());
      components_.emplace_back();
    }
    component_of_[v] = static_cast<std::size_t>(index_of_root[r]);
    components_[component_of_[v]].push_back(v);
  }
}

std::vector<double> StructuralModel::draw_exogenous(Rng& rng) const {
  std::vector<double> exo(vertices_.size(), 0.0);
  std::uniform_int_distribution<std::size_t> pick(0, bank_size_ - 1);
  for (const auto& comp : components_) {
    const auto r = pick(rng);
    for (auto v : comp) exo[v] = vertices_[v].bank[r];
  }
  return exo;
}

void StructuralModel::check_interventions(const Assignment& interventions, bool forced) const {
  for (const auto& [v, value] : interventions) {
    if (v >= schema_.size()) throw Error(ErrorCode::UnknownColumn, "intervention target out of range");
    const auto& var = schema_[v];
    if (!forced && !var.intervenable) {
      throw Error(ErrorCode::NotIntervenable, var.name + " is " + kind_name(var) + " and cannot be intervened on");
    }
    if (!var.contains(value)) {
      throw Error(ErrorCode::DomainViolation, "intervention value outside the domain of " + var.name);
    }
  }
}

Row StructuralModel::propagate(const Assignment& fixed, const std::vector<double>& exogenous, bool forced) const {
  check_interventions(fixed, forced);
  Row row(vertices_.size(), 0.0);
  for (auto v : order_) {
    if (auto it = fixed.find(v); it != fixed.end()) {
      row[v] = it->second;
      continue;
    }
    const auto& vm = vertices_[v];
    const double raw = vm.root ? exogenous[v] : vm.mechanism.evaluate(row) + exogenous[v];
    row[v] = schema_[v].project(raw);
  }
  return row;
}

// ---------------------------------------------------------------------- fit

StructuralModel fit(const MixedCausalGraph& graph, const PerformanceDataset& ds, int degree) {
  if (degree < 1) throw Error(ErrorCode::InvalidArgument, "polynomial degree must be >= 1");
  if (graph.stage() != GraphStage::ADMG) throw Error(ErrorCode::InvalidArgument, "fit expects an ADMG");
  if (ds.empty()) throw Error(ErrorCode::EmptyDataset, "fit needs at least one row");
  std::vector<std::string> names;
  for (const auto& v : ds.schema().variables()) names.push_back(v.name);
  if (names != graph.names()) throw Error(ErrorCode::VertexMismatch, "graph vertices do not match the schema");

  StructuralModel model;
  model.schema_ = ds.schema();
  model.graph_ = graph;
  model.degree_ = degree;
  model.bank_size_ = ds.rows();
  model.vertices_.resize(graph.size());

  for (std::size_t v = 0; v < graph.size(); ++v) {
    auto& vm = model.vertices_[v];
    const auto column = ds.column(v);
    vm.observed_min = *std::min_element(column.begin(), column.end());
    vm.observed_max = *std::max_element(column.begin(), column.end());
    const auto parents = graph.parents(v);
    if (parents.empty()) {
      vm.root = true;
      vm.bank = column;
      continue;
    }
    vm.root = false;
    auto mech = make_mechanism(ds.schema(), ds, parents, degree);
    if (mech.terms.size() > ds.rows() && degree > 1) {
      model.warnings_.push_back("UnderdeterminedFit: " + graph.name(v) + " has " + std::to_string(ds.rows()) +
                                " rows for " + std::to_string(mech.terms.size()) + " terms; using degree 1");
      mech = make_mechanism(ds.schema(), ds, parents, 1);
    }
    if (mech.terms.size() > ds.rows()) {
      throw Error(ErrorCode::UnderdeterminedFit,
                  graph.name(v) + " needs at least " + std::to_string(mech.terms.size()) + " rows");
    }
    const Eigen::MatrixXd x = design_matrix(mech, ds);
    const Eigen::Map<const Eigen::VectorXd> y(column.data(), static_cast<Eigen::Index>(column.size()));
    mech.coefficients = x.completeOrthogonalDecomposition().solve(y);
    const Eigen::VectorXd resid = y - x * mech.coefficients;
    vm.bank.assign(resid.data(), resid.data() + resid.size());
    vm.mechanism = std::move(mech);
  }
  model.finalize();
  return model;
}

// ----------------------------------------------------------------- simulate

PerformanceDataset simulate(const StructuralModel& model, std::size_t n, const Assignment& interventions,
                            std::uint64_t seed) {
  model.check_interventions(interventions, false);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.schema().size()));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = model.propagate(interventions, model.draw_exogenous(rng));
    for (std::size_t c = 0; c < row.size(); ++c) values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
  }
  return PerformanceDataset(model.schema(), std::move(values));
}

// ----------------------------------------------------------- counterfactual

CounterfactualResult counterfactual(const StructuralModel& model, const Row& factual, const Assignment& interventions,
                                    const CounterfactualOptions& options) {
  const auto& schema = model.schema();
  if (factual.size() != schema.size()) throw Error(ErrorCode::InvalidArgument, "factual row has the wrong width");
  model.check_interventions(interventions, options.forced);
  for (auto o : schema.options()) {
    if (std::isnan(factual[o])) throw Error(ErrorCode::InvalidArgument, "factual row must set option " + schema[o].name);
  }
  const std::size_t p = schema.size();

  // Abduction: noise that is point-identified from the factual row.
  std::vector<std::optional<double>> noise(p);
  for (std::size_t v = 0; v < p; ++v) {
    const auto& vm = model.vertex(v);
    if (std::isnan(factual[v])) continue;
    if (vm.root) {
      noise[v] = factual[v];
      continue;
    }
    if (schema[v].is_categorical()) continue;
    const bool parents_known = std::all_of(vm.mechanism.parents.begin(), vm.mechanism.parents.end(),
                                           [&](std::size_t q) { return !std::isnan(factual[q]); });
    if (parents_known) noise[v] = factual[v] - vm.mechanism.evaluate(factual);
  }

  CounterfactualResult out;
  // Prediction is exact for a vertex whose parents keep their factual values,
  // so only vertices that need an unidentified noise term force Monte-Carlo.
  auto needs_draw = [&](std::size_t v, const Row& cf) {
    if (interventions.count(v)) return false;
    const auto& vm = model.vertex(v);
    const bool unchanged = !std::isnan(factual[v]) &&
                           std::all_of(vm.mechanism.parents.begin(), vm.mechanism.parents.end(),
                                       [&](std::size_t q) { return cf[q] == factual[q]; });
    if (unchanged) return false;
    return !noise[v].has_value() || (!vm.root && schema[v].is_categorical());
  };

  auto predict = [&](const std::vector<double>* exo, bool& drew) {
    Row cf(p, 0.0);
    for (auto v : model.order()) {
      if (auto it = interventions.find(v); it != interventions.end()) {
        cf[v] = it->second;
        continue;
      }
      const auto& vm = model.vertex(v);
      const bool unchanged = !std::isnan(factual[v]) &&
                             std::all_of(vm.mechanism.parents.begin(), vm.mechanism.parents.end(),
                                         [&](std::size_t q) { return cf[q] == factual[q]; });
      if (unchanged) {
        cf[v] = factual[v];
        continue;
      }
      if (needs_draw(v, cf)) {
        drew = true;
        if (!vm.root && schema[v].is_categorical() &&
            std::find(out.fallback_vertices.begin(), out.fallback_vertices.end(), v) == out.fallback_vertices.end()) {
          out.fallback_vertices.push_back(v);
        }
        const double e = exo != nullptr ? (*exo)[v] : 0.0;
        cf[v] = schema[v].project(vm.root ? e : vm.mechanism.evaluate(cf) + e);
        continue;
      }
      cf[v] = schema[v].project(vm.root ? *noise[v] : vm.mechanism.evaluate(cf) + *noise[v]);
    }
    return cf;
  };

  bool drew = false;
  Row single = predict(nullptr, drew);
  if (!drew) {
    out.worlds.push_back(single);
    out.mean = single;
    return out;
  }
  out.point_identified = false;
  out.interventional_fallback = !out.fallback_vertices.empty();
  Rng rng(options.seed);
  const std::size_t worlds = std::max<std::size_t>(1, options.n_mc);
  out.worlds.reserve(worlds);
  out.mean.assign(p, 0.0);
  for (std::size_t w = 0; w < worlds; ++w) {
    const auto exo = model.draw_exogenous(rng);
    bool unused = false;
    out.worlds.push_back(predict(&exo, unused));
    for (std::size_t v = 0; v < p; ++v) out.mean[v] += out.worlds.back()[v] / static_cast<double>(worlds);
  }
  std::sort(out.fallback_vertices.begin(), out.fallback_vertices.end());
  return out;
}

// --------------------------------------------------------------------- JSON

json to_json(const StructuralModel& model) {
  const auto& g = model.graph();
  json vertices = json::array();
  for (std::size_t v = 0; v < g.size(); ++v) {
    const auto& vm = model.vertex(v);
    json entry{{"name", g.name(v)},
               {"root", vm.root},
               {"observed_min", vm.observed_min},
               {"observed_max", vm.observed_max},
               {"bank", vm.bank}};
    if (!vm.root) {
      const auto& m = vm.mechanism;
      json parents = json::array();
      for (auto q : m.parents) parents.push_back(g.name(q));
      json base = json::array();
      for (const auto& b : m.base) {
        base.push_back({{"parent", g.name(b.parent)},
                        {"level", b.level ? json(*b.level) : json(nullptr)},
                        {"scale", b.scale}});
      }
      std::vector<double> coef(m.coefficients.data(), m.coefficients.data() + m.coefficients.size());
      entry["mechanism"] = {{"parents", parents},
                            {"degree", m.degree},
                            {"base", base},
                            {"terms", m.terms},
                            {"coefficients", coef}};
    }
    vertices.push_back(std::move(entry));
  }
  return {{"format", "causalperf-model/1"},
          {"schema", to_json(model.schema())},
          {"graph", to_json(g)},
          {"degree", model.degree()},
          {"bank_size", model.bank_size()},
          {"vertices", vertices},
          {"warnings", model.warnings()}};
}

StructuralModel model_from_json(const json& doc) {
  try {
    StructuralModel model;
    model.schema_ = schema_from_json(doc.at("schema"));
    model.graph_ = graph_from_json(doc.at("graph"));
    model.degree_ = doc.at("degree").get<int>();
    model.bank_size_ = doc.at("bank_size").get<std::size_t>();
    model.warnings_ = doc.value("warnings", std::vector<std::string>{});
    const auto& g = model.graph_;
    for (const auto& entry : doc.at("vertices")) {
      VertexModel vm;
      vm.root = entry.at("root").get<bool>();
      vm.observed_min = entry.at("observed_min").get<double>();
      vm.observed_max = entry.at("observed_max").get<double>();
      vm.bank = entry.at("bank").get<std::vector<double>>();
      if (vm.bank.size() != model.bank_size_) throw Error(ErrorCode::ParseError, "bank size mismatch");
      if (!vm.root) {
        const auto& m = entry.at("mechanism");
        for (const auto& name : m.at("parents")) vm.mechanism.parents.push_back(g.index_of(name.get<std::string>()));
        vm.mechanism.degree = m.at("degree").get<int>();
        for (const auto& b : m.at("base")) {
          BaseFeature f;
          f.parent = g.index_of(b.at("parent").get<std::string>());
          if (!b.at("level").is_null()) f.level = b.at("level").get<double>();
          f.scale = b.at("scale").get<double>();
          vm.mechanism.base.push_back(f);
        }
        vm.mechanism.terms = m.at("terms").get<std::vector<std::vector<std::size_t>>>();
        const auto coef = m.at("coefficients").get<std::vector<double>>();
        if (coef.size() != vm.mechanism.terms.size()) throw Error(ErrorCode::ParseError, "coefficient count mismatch");
        vm.mechanism.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
      }
      model.vertices_.push_back(std::move(vm));
    }
    if (model.vertices_.size() != g.size() || g.size() != model.schema_.size()) {
      throw Error(ErrorCode::ParseError, "model vertices do not match the schema");
    }
    model.finalize();
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed model JSON: ") + e.what());
  }
}

}  // namespace causalperf
