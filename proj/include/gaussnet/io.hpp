#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussnet/deviations.hpp"
#include "gaussnet/error.hpp"
#include "gaussnet/kernel.hpp"
#include "gaussnet/montecarlo.hpp"
#include "gaussnet/network.hpp"

namespace gaussnet::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// A parsed network document. Node ids from the file map to dense indices by array order.
struct NetworkDocument {
  Network network;
  MfBmKernel kernel;
  std::vector<long long> ids;

  int index_of(long long id) const {
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (ids[j] == id) return static_cast<int>(j);
    throw Error(ErrorCode::InvalidInput, "unknown node id " + std::to_string(id));
  }
  long long id_of(int index) const { return ids.at(index); }
};

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw Error(ErrorCode::InvalidInput, "unknown field '" + it.key() + "' in " + where);
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::InvalidInput, std::string("missing field '") + key + "' in " + where);
  return *it;
}

inline double number(const json& v, const std::string& what) {
  if (!v.is_number()) throw Error(ErrorCode::InvalidInput, what + " must be a number");
  return v.get<double>();
}

inline long long integer(const json& v, const std::string& what) {
  if (!v.is_number_integer()) throw Error(ErrorCode::InvalidInput, what + " must be an integer");
  return v.get<long long>();
}

inline Eigen::MatrixXd square_matrix(const json& v, int k, const std::string& what) {
  if (!v.is_array() || static_cast<int>(v.size()) != k)
    throw Error(ErrorCode::InvalidInput, what + " must be a " + std::to_string(k) + " x " + std::to_string(k) + " array");
  Eigen::MatrixXd m(k, k);
  for (int i = 0; i < k; ++i) {
    const json& row = v[i];
    if (!row.is_array() || static_cast<int>(row.size()) != k)
      throw Error(ErrorCode::InvalidInput, what + " row " + std::to_string(i) + " has the wrong length");
    for (int j = 0; j < k; ++j) m(i, j) = number(row[j], what + " entry");
  }
  return m;
}

}  // namespace detail

inline NetworkDocument parse_network(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::InvalidInput, "network document must be a JSON object");
  detail::reject_unknown(doc, {"schema", "nodes", "edges", "rho", "eta"}, "document");
  const long long schema = detail::integer(detail::require(doc, "schema", "document"), "schema");
  if (schema != kSchemaVersion)
    throw Error(ErrorCode::InvalidInput, "unsupported schema version " + std::to_string(schema));

  const json& nodes = detail::require(doc, "nodes", "document");
  if (!nodes.is_array() || nodes.empty()) throw Error(ErrorCode::InvalidInput, "nodes must be a non-empty array");
  const int k = static_cast<int>(nodes.size());
  std::vector<long long> ids;
  std::vector<double> mu, lambda, sigma, hurst;
  std::map<long long, int> index;
  for (int j = 0; j < k; ++j) {
    const json& nd = nodes[j];
    const std::string where = "node " + std::to_string(j);
    if (!nd.is_object()) throw Error(ErrorCode::InvalidInput, where + " must be an object");
    detail::reject_unknown(nd, {"id", "mu", "lambda", "sigma", "hurst"}, where);
    const long long id = detail::integer(detail::require(nd, "id", where), where + " id");
    if (!index.emplace(id, j).second) throw Error(ErrorCode::InvalidInput, "duplicate node id " + std::to_string(id));
    ids.push_back(id);
    mu.push_back(detail::number(detail::require(nd, "mu", where), where + " mu"));
    lambda.push_back(detail::number(detail::require(nd, "lambda", where), where + " lambda"));
    sigma.push_back(detail::number(detail::require(nd, "sigma", where), where + " sigma"));
    hurst.push_back(detail::number(detail::require(nd, "hurst", where), where + " hurst"));
  }

  std::vector<Edge> edges;
  if (auto it = doc.find("edges"); it != doc.end()) {
    if (!it->is_array()) throw Error(ErrorCode::InvalidInput, "edges must be an array");
    for (std::size_t e = 0; e < it->size(); ++e) {
      const json& ed = (*it)[e];
      const std::string where = "edge " + std::to_string(e);
      if (!ed.is_object()) throw Error(ErrorCode::InvalidInput, where + " must be an object");
      detail::reject_unknown(ed, {"from", "to", "p"}, where);
      const long long from = detail::integer(detail::require(ed, "from", where), where + " from");
      const long long to = detail::integer(detail::require(ed, "to", where), where + " to");
      if (!index.count(from) || !index.count(to)) throw Error(ErrorCode::InvalidInput, where + " refers to an unknown node");
      edges.push_back({index[from], index[to], detail::number(detail::require(ed, "p", where), where + " p")});
    }
  }

  const Eigen::MatrixXd rho = detail::square_matrix(detail::require(doc, "rho", "document"), k, "rho");
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(k, k);
  if (auto it = doc.find("eta"); it != doc.end()) eta = detail::square_matrix(*it, k, "eta");

  return NetworkDocument{Network(mu, lambda, edges), MfBmKernel(hurst, sigma, rho, eta), ids};
}

inline NetworkDocument load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidInput, path + ": " + e.what());
  }
  return parse_network(doc);
}

inline json to_json(const NetworkDocument& d) {
  json doc;
  doc["schema"] = kSchemaVersion;
  const int k = d.network.size();
  doc["nodes"] = json::array();
  for (int j = 0; j < k; ++j)
    doc["nodes"].push_back({{"id", d.ids[j]},
                            {"mu", d.network.mu(j)},
                            {"lambda", d.network.lambda(j)},
                            {"sigma", d.kernel.sigma(j)},
                            {"hurst", d.kernel.hurst(j)}});
  doc["edges"] = json::array();
  for (int i = 0; i < k; ++i)
    for (int j : d.network.outbound(i))
      doc["edges"].push_back({{"from", d.ids[i]}, {"to", d.ids[j]}, {"p", d.network.routing(i, j)}});
  auto matrix = [k](const Eigen::MatrixXd& m) {
    json a = json::array();
    for (int i = 0; i < k; ++i) {
      json row = json::array();
      for (int j = 0; j < k; ++j) row.push_back(m(i, j));
      a.push_back(row);
    }
    return a;
  };
  doc["rho"] = matrix(d.kernel.rho());
  doc["eta"] = matrix(d.kernel.eta());
  return doc;
}

/// Finite doubles as numbers, anything else as null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json path_labels(const NetworkDocument& d, const PathSet& ps) {
  json out = json::array();
  for (const Path& p : ps.paths) {
    json ids = json::array();
    for (int v : p.nodes) ids.push_back(d.id_of(v));
    out.push_back(ids);
  }
  return out;
}

inline json time_vector(const TimeVector& t) {
  json a = json::array();
  for (double v : t) a.push_back(num(v));
  return a;
}

inline json to_json(const NetworkDocument& d, const RateModel& model, const DecayResult& r) {
  json out;
  out["schema"] = kSchemaVersion;
  out["node"] = d.id_of(r.target);
  out["b"] = r.b;
  out["exponent"] = num(r.exponent);
  out["active_case"] = to_string(r.active_case);
  out["tightness"] = to_string(r.tightness);
  out["paths"] = path_labels(d, model.paths());
  out["optimizer_t"] = time_vector(r.t);
  out["optimizer_s"] = time_vector(r.s);
  out["diagnostics"] = {{"case1_certified", r.diagnostics.case1_certified},
                        {"case1_minimum", num(r.diagnostics.case1_minimum)},
                        {"case1_minimizer", time_vector(r.diagnostics.case1_minimizer)},
                        {"outer_evaluations", r.diagnostics.outer_evaluations},
                        {"runs", r.diagnostics.runs},
                        {"converged_runs", r.diagnostics.converged_runs}};
  return out;
}

inline json to_json(const TightnessReport& t) {
  return {{"verdict", to_string(t.verdict)},
          {"route", t.route},
          {"vacuous", t.vacuous},
          {"max_violation", num(t.max_violation)},
          {"direct_violation", num(t.direct_violation)},
          {"minimizer_violation", num(t.minimizer_violation)},
          {"pointwise_margin", num(t.pointwise_margin)},
          {"witness_s", time_vector(t.witness)}};
}

inline json to_json(const NetworkDocument& d, int target, double b, const ClosedForm& c) {
  return {{"schema", kSchemaVersion},
          {"node", d.id_of(target)},
          {"b", b},
          {"exponent", num(c.exponent)},
          {"hurst", c.hurst},
          {"lambda_bar", num(c.lambda_bar)},
          {"sigma_bar2", num(c.sigma_bar2)},
          {"t_star", num(c.t_star)},
          {"condition_holds", c.condition_holds},
          {"condition_lhs", num(c.condition_lhs)},
          {"condition_rhs", num(c.condition_rhs)}};
}

inline json to_json(const NetworkDocument& d, int target, const OverflowEstimate& e) {
  json scales = json::array();
  for (const auto& s : e.scales)
    scales.push_back({{"n", s.n},
                      {"count", s.count},
                      {"trials", s.trials},
                      {"p_hat", s.p_hat},
                      {"ci_lo", s.ci_lo},
                      {"ci_hi", s.ci_hi}});
  json cfg = {{"scales", e.config.scales},      {"dt", e.config.dt},
              {"horizon", e.config.horizon},    {"burn_in", e.config.burn_in},
              {"replications", e.config.replications}, {"seed", e.config.seed},
              {"b", e.config.b}};
  return {{"schema", kSchemaVersion},
          {"node", d.id_of(target)},
          {"exponent", num(e.exponent)},
          {"intercept", num(e.intercept)},
          {"residuals", e.residuals},
          {"fitted_scales", e.fitted_scales},
          {"scales", scales},
          {"config", cfg},
          {"caveat", e.caveat}};
}

/// Round-trip precision for CSV output.
inline void set_precision(std::ostream& os) { os << std::setprecision(std::numeric_limits<double>::max_digits10); }

inline void write_mean_path_csv(std::ostream& os, const NetworkDocument& d, const MeanPath& mp) {
  set_precision(os);
  os << "time";
  for (std::size_t j = 0; j < d.ids.size(); ++j) os << ",f_" << d.ids[j];
  os << "\n";
  for (std::size_t q = 0; q < mp.times.size(); ++q) {
    os << mp.times[q];
    for (Eigen::Index j = 0; j < mp.values.cols(); ++j) os << "," << mp.values(static_cast<Eigen::Index>(q), j);
    os << "\n";
  }
}

inline void write_overflow_csv(std::ostream& os, const OverflowEstimate& e) {
  set_precision(os);
  os << "n,count,trials,p_hat,ci_lo,ci_hi\n";
  for (const auto& s : e.scales)
    os << s.n << "," << s.count << "," << s.trials << "," << s.p_hat << "," << s.ci_lo << "," << s.ci_hi << "\n";
}

}  // namespace gaussnet::io
