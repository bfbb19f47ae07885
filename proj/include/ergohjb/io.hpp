#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "ergohjb/dual_lp.hpp"
#include "ergohjb/model.hpp"
#include "ergohjb/simulate.hpp"
#include "ergohjb/verify.hpp"

namespace ergohjb {

using Json = nlohmann::ordered_json;

/// Problem files are JSON:
///   { "schema_version": 1, "dimension": 1,
///     "states": [ {"gamma": 2, "a": "identity" | [[...]], "b": [field per component]}, {...} ],
///     "truncation": {"level": n, "c1": C1},                       (optional)
///     "alpha": [field, field], "f": [field, field], "x_ref": [0] }
/// A field is a number (constant) or a list of terms
///   {"type": "constant", "c"} | {"type": "quadratic_form", "c0", "weights"} |
///   {"type": "power_radial", "c", "beta"} | {"type": "trig_modulated_power", "c", "beta1", "beta2"}.
/// Doubles are written with round-trip precision, so load(save(p)) reproduces p exactly.
inline constexpr int kProblemSchemaVersion = 1;

namespace detail {

inline const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParameterError(where + ": missing key \"" + key + "\"");
  return j.at(key);
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ParameterError(where + ": expected a number");
  return j.get<double>();
}

inline Json term_to_json(const terms::Term& t) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, terms::Constant>) return {{"type", "constant"}, {"c", v.c}};
        else if constexpr (std::is_same_v<T, terms::QuadraticForm>)
          return {{"type", "quadratic_form"}, {"c0", v.c0}, {"weights", v.weights}};
        else if constexpr (std::is_same_v<T, terms::PowerRadial>)
          return {{"type", "power_radial"}, {"c", v.c}, {"beta", v.beta}};
        else
          return {{"type", "trig_modulated_power"}, {"c", v.c}, {"beta1", v.beta1}, {"beta2", v.beta2}};
      },
      t);
}

inline terms::Term term_from_json(const Json& j, const std::string& where) {
  const std::string type = require(j, "type", where).get<std::string>();
  if (type == "constant") return terms::Constant{number(require(j, "c", where), where + ".c")};
  if (type == "quadratic_form") {
    terms::QuadraticForm q;
    q.c0 = j.contains("c0") ? number(j.at("c0"), where + ".c0") : 0.0;
    for (const auto& w : require(j, "weights", where)) q.weights.push_back(number(w, where + ".weights"));
    return q;
  }
  if (type == "power_radial")
    return terms::PowerRadial{number(require(j, "c", where), where + ".c"),
                              number(require(j, "beta", where), where + ".beta")};
  if (type == "trig_modulated_power")
    return terms::TrigModulatedPower{number(require(j, "c", where), where + ".c"),
                                     number(require(j, "beta1", where), where + ".beta1"),
                                     number(require(j, "beta2", where), where + ".beta2")};
  throw ParameterError(where + ": unknown term type \"" + type + "\"");
}

}  // namespace detail

inline Json field_to_json(const CoefficientField& f) {
  Json out = Json::array();
  for (const auto& t : f.term_list()) out.push_back(detail::term_to_json(t));
  return out;
}

inline CoefficientField field_from_json(const Json& j, const std::string& where = "field") {
  if (j.is_number()) return CoefficientField::constant(j.get<double>());
  if (!j.is_array()) throw ParameterError(where + ": expected a number or a list of terms");
  std::vector<terms::Term> t;
  for (size_t i = 0; i < j.size(); ++i) t.push_back(detail::term_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  return CoefficientField(std::move(t));
}

inline Json vec_to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Vec vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ParameterError(where + ": expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = detail::number(j[i], where);
  return v;
}

inline Json problem_to_json(const ProblemSpec& p) {
  Json j;
  j["schema_version"] = kProblemSchemaVersion;
  j["dimension"] = p.dimension;
  Json states = Json::array();
  for (const auto& s : p.hamiltonians.states) {
    Json st;
    st["gamma"] = s.gamma;
    if (s.a.is_identity()) {
      st["a"] = "identity";
    } else {
      Json rows = Json::array();
      for (Eigen::Index r = 0; r < s.a.matrix().rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < s.a.matrix().cols(); ++c) row.push_back(s.a.matrix()(r, c));
        rows.push_back(row);
      }
      st["a"] = rows;
    }
    Json b = Json::array();
    for (const auto& c : s.b.components()) b.push_back(field_to_json(c));
    st["b"] = b;
    states.push_back(st);
  }
  j["states"] = states;
  if (p.hamiltonians.truncation)
    j["truncation"] = {{"level", p.hamiltonians.truncation->level}, {"c1", p.hamiltonians.truncation->c1}};
  j["alpha"] = {field_to_json(p.alpha[0]), field_to_json(p.alpha[1])};
  j["f"] = {field_to_json(p.f[0]), field_to_json(p.f[1])};
  j["x_ref"] = vec_to_json(p.x_ref);
  return j;
}

inline ProblemSpec problem_from_json(const Json& j) {
  const std::string w = "problem";
  if (!j.is_object()) throw ParameterError(w + ": expected an object");
  if (j.contains("schema_version") && j.at("schema_version") != kProblemSchemaVersion)
    throw ParameterError(w + ": unsupported schema_version " + j.at("schema_version").dump());
  ProblemSpec p;
  p.dimension = detail::require(j, "dimension", w).get<int>();
  const Json& states = detail::require(j, "states", w);
  if (!states.is_array() || states.size() != 2) throw ParameterError(w + ".states: expected two regimes");
  for (int k = 0; k < 2; ++k) {
    const std::string ws = w + ".states[" + std::to_string(k) + "]";
    const Json& st = states[static_cast<size_t>(k)];
    auto& s = p.hamiltonians.states[k];
    s.gamma = detail::number(detail::require(st, "gamma", ws), ws + ".gamma");
    if (st.contains("a") && !(st.at("a").is_string() && st.at("a") == "identity")) {
      const Json& rows = st.at("a");
      if (!rows.is_array() || rows.empty()) throw ParameterError(ws + ".a: expected \"identity\" or a matrix");
      Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (size_t r = 0; r < rows.size(); ++r) {
        if (!rows[r].is_array() || rows[r].size() != rows.size()) throw ParameterError(ws + ".a: matrix is not square");
        for (size_t c = 0; c < rows.size(); ++c)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = detail::number(rows[r][c], ws + ".a");
      }
      s.a = MatrixField::constant_spd(m);
    }
    if (st.contains("b") && !st.at("b").empty()) {
      std::vector<CoefficientField> comps;
      for (size_t i = 0; i < st.at("b").size(); ++i)
        comps.push_back(field_from_json(st.at("b")[i], ws + ".b[" + std::to_string(i) + "]"));
      if (static_cast<int>(comps.size()) != p.dimension) throw ParameterError(ws + ".b: need one field per dimension");
      s.b = VectorField(std::move(comps));
    }
  }
  if (j.contains("truncation") && !j.at("truncation").is_null()) {
    const Json& t = j.at("truncation");
    p.hamiltonians.truncation = Truncation{detail::number(detail::require(t, "level", w + ".truncation"), "level"),
                                           t.contains("c1") ? detail::number(t.at("c1"), "c1") : 1.0};
  }
  for (const char* key : {"alpha", "f"}) {
    const Json& pair = detail::require(j, key, w);
    if (!pair.is_array() || pair.size() != 2) throw ParameterError(w + "." + key + ": expected two fields");
    auto& dst = std::string(key) == "alpha" ? p.alpha : p.f;
    for (int k = 0; k < 2; ++k)
      dst[k] = field_from_json(pair[static_cast<size_t>(k)], w + "." + key + "[" + std::to_string(k) + "]");
  }
  p.x_ref = j.contains("x_ref") ? vec_from_json(j.at("x_ref"), w + ".x_ref") : Vec(Vec::Zero(p.dimension));
  p.validate();
  return p;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParameterError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline ProblemSpec load_problem(const std::string& path) { return problem_from_json(read_json_file(path)); }

inline void save_problem(const std::string& path, const ProblemSpec& p) { write_json_file(path, problem_to_json(p)); }

inline Json audit_to_json(const AuditReport& r) {
  Json j;
  j["name"] = r.name;
  j["passed"] = r.passed;
  Json c = Json::object();
  for (const auto& [k, v] : r.constants) c[k] = v;
  j["constants"] = c;
  if (r.worst_node >= 0) {
    j["worst_node"] = r.worst_node;
    j["worst_state"] = r.worst_state;
    j["worst_x"] = vec_to_json(r.worst_x);
    j["lhs"] = r.lhs;
    j["rhs"] = r.rhs;
  }
  j["narrative"] = r.narrative;
  return j;
}

inline Json audits_to_json(const std::vector<AuditReport>& reports) {
  Json j;
  j["all_passed"] = all_passed(reports);
  Json list = Json::array();
  for (const auto& r : reports) list.push_back(audit_to_json(r));
  j["audits"] = list;
  return j;
}

inline Json assumptions_to_json(const AssumptionReport& r) {
  Json j{{"upsilon_alpha0", r.upsilon_alpha0}, {"c1", r.c1},
         {"c1_tilde", r.c1_tilde},             {"c2", r.c2},
         {"c3", r.c3},                         {"rates_positive", r.rates_positive},
         {"coercive", r.coercive},             {"trig_condition", r.trig_condition},
         {"passed", r.passed}};
  Json v = Json::array();
  for (const auto& x : r.violations)
    v.push_back({{"check", x.check}, {"state", x.state}, {"node", x.node}, {"lhs", x.lhs}, {"rhs", x.rhs}});
  j["violations"] = v;
  return j;
}

/// LP result with the occupation measure restricted to its support.
inline Json lp_to_json(const LpData& lp, const LpSolution& s) {
  Json j;
  j["lambda_bar"] = s.lambda_bar;
  j["nodes"] = lp.nodes();
  j["controls"] = lp.mesh.size();
  j["columns"] = lp.columns();
  j["ipm_iterations"] = s.ipm_iterations;
  j["pivot_rounds"] = s.pivot_rounds;
  j["primal_residual"] = s.raw.primal_residual;
  j["dual_residual"] = s.raw.dual_residual;
  j["gap"] = s.raw.gap;
  j["mass"] = s.measure.mass;
  j["stationarity_residual"] = s.measure.stationarity_residual;
  Json support = Json::array();
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < lp.nodes(); ++node)
      for (int c = 0; c < lp.mesh.size(); ++c) {
        const double w = s.measure.weight(lp, k, node, c);
        if (w > 0.0)
          support.push_back({{"state", k + 1},
                             {"x", vec_to_json(lp.grid.coordinate(node))},
                             {"xi", vec_to_json(lp.mesh.controls[static_cast<size_t>(c)])},
                             {"weight", w}});
      }
  j["support"] = support;
  return j;
}

inline Json simulation_to_json(const SimulationEstimate& e) {
  return Json{{"lambda_hat", e.lambda_hat},
              {"std_error", e.std_error},
              {"paths", e.paths},
              {"T", e.T},
              {"dt", e.dt},
              {"seed", e.seed},
              {"state1_fraction", e.state1_fraction},
              {"state1_fraction_se", e.state1_fraction_se},
              {"switches", {e.switches[0], e.switches[1]}},
              {"observed_intensity", {e.observed_intensity(0), e.observed_intensity(1)}},
              {"mean_rate", {e.mean_rate(0), e.mean_rate(1)}},
              {"clamp_count", e.clamp_count},
              {"reliable", e.reliable},
              {"pde_unverified", e.pde_unverified},
              {"rate_bound", e.rate_bound}};
}

inline void write_history_csv(std::ostream& os, const std::string& parameter, const std::vector<HistoryEntry>& h) {
  os.precision(17);
  os << parameter << ",lambda\n";
  for (const auto& e : h) os << e.parameter << "," << e.lambda << "\n";
}

inline void write_sample_path_csv(std::ostream& os, const std::vector<PathSample>& path) {
  os.precision(17);
  const int dim = path.empty() ? 1 : static_cast<int>(path.front().x.size());
  os << "t";
  for (int a = 0; a < dim; ++a) os << ",x" << a + 1;
  os << ",state";
  for (int a = 0; a < dim; ++a) os << ",xi" << a + 1;
  os << ",cost\n";
  for (const auto& s : path) {
    os << s.t;
    for (int a = 0; a < dim; ++a) os << "," << s.x[a];
    os << "," << s.state;
    for (int a = 0; a < dim; ++a) os << "," << s.u[a];
    os << "," << s.cost << "\n";
  }
}

}  // namespace ergohjb
