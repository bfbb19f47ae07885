#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ergohjb/assumptions.hpp"
#include "ergohjb/dual_lp.hpp"
#include "ergohjb/io.hpp"
#include "ergohjb/simulate.hpp"
#include "ergohjb/solver.hpp"
#include "ergohjb/verify.hpp"

namespace ergohjb {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kVersion = "1.0.0";

enum class Method { VanishingDiscount, Nested, Ergodic };

/// Control simulated by the Monte Carlo stage.
struct ControlChoice {
  enum class Kind { Extracted, Zero, Linear } kind = Kind::Extracted;
  double coefficient = 0.0;  // xi(x) = coefficient * x for Linear
};

inline ControlChoice parse_control_choice(const std::string& s) {
  if (s == "extracted") return {};
  if (s == "zero") return {ControlChoice::Kind::Zero, 0.0};
  if (s.rfind("linear:", 0) == 0) {
    try {
      size_t used = 0;
      const double c = std::stod(s.substr(7), &used);
      if (used == s.size() - 7) return {ControlChoice::Kind::Linear, c};
    } catch (const std::exception&) {
    }
  }
  throw ParameterError("control must be extracted, zero or linear:<c>, got \"" + s + "\"");
}

inline std::string control_choice_name(const ControlChoice& c) {
  switch (c.kind) {
    case ControlChoice::Kind::Zero: return "zero";
    case ControlChoice::Kind::Linear: {
      std::ostringstream os;
      os.precision(17);
      os << "linear:" << c.coefficient;
      return os.str();
    }
    default: return "extracted";
  }
}

/// Everything needed to reproduce a run. `threads` and `output` do not influence any result.
struct RunConfig {
  std::string name = "run";
  ProblemSpec problem;
  std::string problem_source = "inline";
  Method method = Method::VanishingDiscount;
  std::vector<std::string> stages{"solve", "lp", "simulate", "audit"};
  // Grid and schedules.
  double R = 6.0;
  double h = 0.02;
  std::vector<double> R_schedule;  // nested method; last entry is the final box
  // Solver.
  SolverOptions solver;
  // LP.
  std::optional<double> lp_h;  // default 5 h
  double lp_control_step = 0.25;
  std::optional<double> lp_xi_max;
  int lp_directions = 8;
  double lp_tol_rel = 0.03;
  // Monte Carlo.
  SimulationParams mc;
  ControlChoice control;
  double mc_tol_rel = 0.01;
  // Audits.
  std::vector<std::string> audits{"assumptions", "duality", "m_matrix", "comparison", "gradient_bound",
                                  "coercive_lower_bound", "truncation", "consistency"};
  double comparison_delta = 0.5;
  double comparison_eps = 1.0;
  std::vector<double> gradient_scales{1.0, 4.0, 16.0};
  std::optional<double> gradient_h;  // default h
  double gradient_factor = 5.0;
  double m1_floor = 0.01;
  double duality_tol = 1e-9;
  double truncation_rel_tol = 0.01;
  // Run.
  std::uint64_t seed = 20240521;
  int threads = 1;
  std::string output = "out";

  bool has_stage(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }
};

namespace detail {

inline const std::set<std::string>& known_audits() {
  static const std::set<std::string> s{"assumptions",    "duality",         "m_matrix",
                                       "comparison",     "gradient_bound",  "coercive_lower_bound",
                                       "truncation",     "consistency"};
  return s;
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Nested: return "nested";
    case Method::Ergodic: return "ergodic";
    default: return "vanishing-discount";
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("config key \"") + key + "\": " + e.what());
  }
}

template <class T>
std::optional<T> get_opt(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get_or<T>(j, key, T{});
}

inline Json section(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return Json::object();
  if (!j.at(key).is_object()) throw ParameterError(std::string("config section \"") + key + "\" must be an object");
  return j.at(key);
}

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

/// Parses a RunConfig. Relative problem paths resolve against `base_dir`. All parameter checks,
/// including the penalty exponent bracket, run here so that a bad config fails before any stage.
inline RunConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = ".") {
  using detail::get_opt;
  using detail::get_or;
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  const int version = get_or<int>(j, "schema_version", -1);
  if (version != kConfigSchemaVersion)
    throw ParameterError("config schema_version must be " + std::to_string(kConfigSchemaVersion));
  RunConfig c;
  c.name = get_or<std::string>(j, "name", c.name);

  if (!j.contains("problem")) throw ParameterError("config: missing \"problem\"");
  if (j.at("problem").is_string()) {
    std::filesystem::path p = j.at("problem").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    c.problem = load_problem(p.string());
    c.problem_source = j.at("problem").get<std::string>();
  } else {
    c.problem = problem_from_json(j.at("problem"));
  }

  const std::string method = get_or<std::string>(j, "method", "vanishing-discount");
  if (method == "vanishing-discount") c.method = Method::VanishingDiscount;
  else if (method == "nested") c.method = Method::Nested;
  else if (method == "ergodic") c.method = Method::Ergodic;
  else throw ParameterError("unknown method \"" + method + "\" (vanishing-discount, nested, ergodic)");

  if (j.contains("stages")) {
    c.stages = get_or<std::vector<std::string>>(j, "stages", {});
    for (const auto& s : c.stages)
      if (s != "solve" && s != "lp" && s != "simulate" && s != "audit")
        throw ParameterError("unknown stage \"" + s + "\" (solve, lp, simulate, audit)");
  }

  const Json g = detail::section(j, "grid");
  c.R = get_or<double>(g, "R", c.R);
  c.h = get_or<double>(g, "h", c.h);
  c.R_schedule = get_or<std::vector<double>>(g, "R_schedule", {});
  if (!(c.h > 0.0) || !(c.R > 0.0)) throw ParameterError("grid needs R > 0 and h > 0");
  if (c.method == Method::Nested) {
    if (c.R_schedule.empty()) throw ParameterError("nested method needs grid.R_schedule");
    c.R = c.R_schedule.back();
  }

  const Json s = detail::section(j, "solver");
  const std::string scheme = get_or<std::string>(s, "scheme", "hybrid");
  if (scheme == "hybrid") c.solver.scheme = AdvectionScheme::Hybrid;
  else if (scheme == "upwind") c.solver.scheme = AdvectionScheme::Upwind;
  else throw ParameterError("unknown scheme \"" + scheme + "\" (hybrid, upwind)");
  c.solver.tol_lambda = get_or<double>(s, "tol_lambda", c.solver.tol_lambda);
  c.solver.tol_pde = get_opt<double>(s, "tol_pde");
  c.solver.xi_max = get_opt<double>(s, "xi_max");
  c.solver.eps0 = get_or<double>(g, "eps0", c.solver.eps0);
  c.solver.eps_min = get_or<double>(g, "eps_min", c.solver.eps_min);
  c.solver.max_iters = get_or<int>(s, "max_iters", c.solver.max_iters);
  const Json pen = detail::section(s, "penalty");
  c.solver.penalty.enabled = get_or<bool>(pen, "enabled", true);
  c.solver.penalty.beta = get_or<double>(pen, "beta", 0.0);
  c.solver.penalty.alpha_exp = get_or<double>(pen, "alpha", 0.0);
  c.solver.penalty.cap = get_opt<double>(pen, "cap");
  resolve_penalty(c.problem, c.solver.penalty);
  if (c.method == Method::VanishingDiscount) halving_schedule(c.solver.eps0, c.solver.eps_min);

  const Json lp = detail::section(j, "lp");
  c.lp_h = get_opt<double>(lp, "h");
  c.lp_control_step = get_or<double>(lp, "control_step", c.lp_control_step);
  c.lp_xi_max = get_opt<double>(lp, "xi_max");
  c.lp_directions = get_or<int>(lp, "directions", c.lp_directions);
  c.lp_tol_rel = get_or<double>(lp, "tol_rel", c.lp_tol_rel);

  const Json mc = detail::section(j, "mc");
  c.mc.paths = get_or<int>(mc, "paths", c.mc.paths);
  c.mc.T = get_or<double>(mc, "T", c.mc.T);
  c.mc.dt = get_or<double>(mc, "dt", c.mc.dt);
  c.mc.burn_in = get_or<double>(mc, "burn_in", c.mc.burn_in);
  c.mc.record_path = get_or<int>(mc, "record_path", 0);
  c.mc.record_stride = get_or<int>(mc, "record_stride", c.mc.record_stride);
  const std::string sw = get_or<std::string>(mc, "switching", "thinning");
  if (sw == "thinning") c.mc.switching = SwitchingMode::Thinning;
  else if (sw == "uniformization") c.mc.switching = SwitchingMode::Uniformization;
  else throw ParameterError("unknown switching mode \"" + sw + "\" (thinning, uniformization)");
  c.control = parse_control_choice(get_or<std::string>(mc, "control", "extracted"));
  c.mc_tol_rel = get_or<double>(mc, "tol_rel", c.mc_tol_rel);
  if (c.mc.paths < 1 || !(c.mc.T > 0.0) || !(c.mc.dt > 0.0) || !(c.mc.burn_in >= 0.0 && c.mc.burn_in < 1.0))
    throw ParameterError("mc needs paths >= 1, T > 0, dt > 0 and 0 <= burn_in < 1");

  const Json a = detail::section(j, "audits");
  if (a.contains("list")) c.audits = get_or<std::vector<std::string>>(a, "list", {});
  for (const auto& name : c.audits)
    if (!detail::known_audits().count(name)) throw ParameterError("unknown audit \"" + name + "\"");
  c.comparison_delta = get_or<double>(a, "comparison_delta", c.comparison_delta);
  c.comparison_eps = get_or<double>(a, "comparison_eps", c.comparison_eps);
  c.gradient_scales = get_or<std::vector<double>>(a, "gradient_scales", c.gradient_scales);
  c.gradient_h = get_opt<double>(a, "gradient_h");
  c.gradient_factor = get_or<double>(a, "gradient_factor", c.gradient_factor);
  c.m1_floor = get_or<double>(a, "m1_floor", c.m1_floor);
  c.duality_tol = get_or<double>(a, "duality_tol", c.duality_tol);
  c.truncation_rel_tol = get_or<double>(a, "truncation_rel_tol", c.truncation_rel_tol);

  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.threads = get_or<int>(j, "threads", c.threads);
  if (c.threads < 1) throw ParameterError("threads must be >= 1");
  c.output = get_or<std::string>(j, "output", c.output);

  // Grid spacings must divide every box half-width they are used with.
  Grid(c.problem.dimension, c.R, c.h);
  for (double r : c.R_schedule) Grid(c.problem.dimension, r, c.h);
  Grid(c.problem.dimension, c.R, c.lp_h ? *c.lp_h : 5.0 * c.h);
  if (c.gradient_h) Grid(c.problem.dimension, c.R, *c.gradient_h);
  return c;
}

/// Canonical serialization. Excludes `threads` and `output`, which never change a result.
inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["name"] = c.name;
  j["problem"] = problem_to_json(c.problem);
  j["method"] = detail::method_name(c.method);
  j["stages"] = c.stages;
  j["grid"] = {{"R", c.R}, {"h", c.h}, {"R_schedule", c.R_schedule}, {"eps0", c.solver.eps0},
               {"eps_min", c.solver.eps_min}};
  j["solver"] = {{"scheme", c.solver.scheme == AdvectionScheme::Hybrid ? "hybrid" : "upwind"},
                 {"tol_lambda", c.solver.tol_lambda},
                 {"tol_pde", detail::opt_json(c.solver.tol_pde)},
                 {"xi_max", detail::opt_json(c.solver.xi_max)},
                 {"max_iters", c.solver.max_iters},
                 {"penalty",
                  {{"enabled", c.solver.penalty.enabled},
                   {"beta", c.solver.penalty.beta},
                   {"alpha", c.solver.penalty.alpha_exp},
                   {"cap", detail::opt_json(c.solver.penalty.cap)}}}};
  j["lp"] = {{"h", detail::opt_json(c.lp_h)},
             {"control_step", c.lp_control_step},
             {"xi_max", detail::opt_json(c.lp_xi_max)},
             {"directions", c.lp_directions},
             {"tol_rel", c.lp_tol_rel}};
  j["mc"] = {{"paths", c.mc.paths},
             {"T", c.mc.T},
             {"dt", c.mc.dt},
             {"burn_in", c.mc.burn_in},
             {"record_path", c.mc.record_path},
             {"record_stride", c.mc.record_stride},
             {"switching", c.mc.switching == SwitchingMode::Thinning ? "thinning" : "uniformization"},
             {"control", control_choice_name(c.control)},
             {"tol_rel", c.mc_tol_rel}};
  j["audits"] = {{"list", c.audits},
                 {"comparison_delta", c.comparison_delta},
                 {"comparison_eps", c.comparison_eps},
                 {"gradient_scales", c.gradient_scales},
                 {"gradient_h", detail::opt_json(c.gradient_h)},
                 {"gradient_factor", c.gradient_factor},
                 {"m1_floor", c.m1_floor},
                 {"duality_tol", c.duality_tol},
                 {"truncation_rel_tol", c.truncation_rel_tol}};
  j["seed"] = c.seed;
  return j;
}

/// The bundled benchmark: f = x^2 in both regimes, gamma = 2, alpha = 1, lambda = sqrt(2).
inline const char* builtin_config_text(const std::string& name) {
  if (name == "quadratic-1d")
    return R"({
  "schema_version": 1,
  "name": "quadratic-1d",
  "problem": {
    "schema_version": 1,
    "dimension": 1,
    "states": [{"gamma": 2, "a": "identity", "b": []}, {"gamma": 2, "a": "identity", "b": []}],
    "alpha": [1, 1],
    "f": [[{"type": "quadratic_form", "c0": 0, "weights": [1]}],
          [{"type": "quadratic_form", "c0": 0, "weights": [1]}]],
    "x_ref": [0]
  },
  "method": "vanishing-discount",
  "stages": ["solve", "lp", "simulate", "audit"],
  "grid": {"R": 6, "h": 0.02, "eps0": 1, "eps_min": 1e-5},
  "solver": {"scheme": "hybrid", "tol_lambda": 1e-4, "max_iters": 100},
  "lp": {"h": 0.1, "control_step": 0.25, "tol_rel": 0.03},
  "mc": {"paths": 2000, "T": 50, "dt": 0.001, "burn_in": 0.1, "control": "extracted", "tol_rel": 0.05},
  "audits": {"list": ["assumptions", "duality", "m_matrix", "comparison", "gradient_bound",
                      "coercive_lower_bound", "consistency"]},
  "seed": 20240521
})";
  return nullptr;
}

/// Loads a built-in config by name or a config file by path.
inline RunConfig load_config(const std::string& name_or_path) {
  if (const char* text = builtin_config_text(name_or_path)) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParameterError(std::string("built-in config: ") + e.what());
    }
    return config_from_json(j);
  }
  const std::filesystem::path p(name_or_path);
  return config_from_json(read_json_file(p.string()), p.parent_path().empty() ? "." : p.parent_path());
}

/// Stage failure: carries the stage name for the exit message.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineResult {
  int exit_code = 0;
  Json summary;
  std::vector<AuditReport> audits;
  std::optional<ErgodicSolution> solution;
  std::optional<ExtractedControl> control;
  std::optional<LpSolution> lp;
  std::optional<SimulationEstimate> mc;
};

namespace detail {

class Bundle {
 public:
  explicit Bundle(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::ofstream open(const std::string& name, const std::string& role) {
    std::ofstream os(dir_ / name);
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    manifest_.push_back({{"file", name}, {"role", role}});
    return os;
  }

  void json(const std::string& name, const std::string& role, const Json& j) {
    auto os = open(name, role);
    os << j.dump(2) << "\n";
  }

  const Json& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  Json manifest_ = Json::array();
};

template <class F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

/// Control range of the LP mesh: the a-priori control cap, rounded up to the control step.
inline double lp_control_range(const ProblemSpec& p, const Grid& lp_grid, double step) {
  const double cap = control_cap(p, lp_grid);
  return std::ceil(cap / step) * step;
}

}  // namespace detail

/// Runs the configured stages in order and writes the artifact bundle to `config.output`.
/// Exit code: 0 when every requested audit passes, 1 otherwise. Stage failures throw StageError.
inline PipelineResult run_pipeline(const RunConfig& cfg, std::ostream& log = std::cerr) {
  PipelineResult res;
  detail::Bundle bundle(cfg.output);
  const ProblemSpec& problem = cfg.problem;
  const Grid grid(problem.dimension, cfg.R, cfg.h);
  Json summary;
  summary["version"] = kVersion;
  summary["config"] = config_to_json(cfg);

  // solve
  if (cfg.has_stage("solve") || cfg.has_stage("audit") ||
      (cfg.has_stage("simulate") && cfg.control.kind == ControlChoice::Kind::Extracted)) {
    log << "[solve] " << detail::method_name(cfg.method) << " on R=" << cfg.R << ", h=" << cfg.h << "\n";
    detail::run_stage("solve", [&] {
      std::string parameter = "iteration";
      if (cfg.method == Method::VanishingDiscount) {
        res.solution = vanishing_discount(problem, grid, cfg.solver);
        parameter = "eps";
      } else if (cfg.method == Method::Nested) {
        NestedResult n = nested_domains(problem, cfg.R_schedule, cfg.h, cfg.solver);
        summary["nested"] = {{"radii", n.radii},
                             {"lambdas", n.lambdas},
                             {"minimizer_frozen", n.minimizer_frozen},
                             {"minimizer_interior", n.minimizer_interior}};
        res.solution = std::move(n.solution);
        parameter = "R";
      } else {
        res.solution = solve_ergodic_normalized(problem, grid, cfg.solver);
      }
      const ErgodicSolution& s = *res.solution;
      res.control = extract_control(problem, s);
      {
        auto os = bundle.open("u.csv", "value function u_k on the grid");
        write_field_csv(os, grid, s.u, "u");
      }
      {
        auto os = bundle.open("xi.csv", "extracted feedback control");
        write_control_csv(os, grid, res.control->controls);
      }
      {
        auto os = bundle.open("lambda_history.csv", "lambda versus " + parameter);
        write_history_csv(os, parameter, s.history);
      }
      summary["solve"] = {{"method", detail::method_name(cfg.method)},
                          {"lambda", s.lambda},
                          {"residual", s.residual},
                          {"tol_pde", s.tol_pde},
                          {"iterations", s.iterations},
                          {"xi_max", s.xi_max},
                          {"minimizer", vec_to_json(s.minimizer)},
                          {"minimizer_state", s.min_state},
                          {"minimizer_interior", s.minimizer_interior},
                          {"duality_residual", res.control->duality_residual},
                          {"clamped_nodes", res.control->clamped_nodes}};
      log << "[solve] lambda = " << s.lambda << "\n";
    });
  }

  // lp
  if (cfg.has_stage("lp")) {
    log << "[lp] assembling occupation-measure LP\n";
    detail::run_stage("lp", [&] {
      const double lp_h = cfg.lp_h ? *cfg.lp_h : 5.0 * cfg.h;
      const Grid lg(problem.dimension, cfg.R, lp_h);
      const double xmax = cfg.lp_xi_max ? *cfg.lp_xi_max : detail::lp_control_range(problem, lg, cfg.lp_control_step);
      const ControlMesh mesh =
          build_control_mesh(problem, lg, uniform_magnitudes(xmax, cfg.lp_control_step), cfg.lp_directions);
      const LpData data = assemble_lp(problem, lg, mesh, cfg.solver.scheme);
      res.lp = solve_lp(data);
      bundle.json("lp.json", "LP value and optimal occupation measure support", lp_to_json(data, *res.lp));
      {
        auto os = bundle.open("lp_problem.txt", "LP equality matrix, cost and bounds");
        write_lp(os, data);
      }
      summary["lp"] = {{"lambda_bar", res.lp->lambda_bar}, {"h", lp_h},          {"xi_max", xmax},
                       {"control_step", cfg.lp_control_step}, {"columns", data.columns()},
                       {"primal_residual", res.lp->raw.primal_residual}};
      log << "[lp] lambda_bar = " << res.lp->lambda_bar << "\n";
    });
  }

  // simulate
  if (cfg.has_stage("simulate")) {
    log << "[simulate] " << cfg.mc.paths << " paths, control " << control_choice_name(cfg.control) << "\n";
    detail::run_stage("simulate", [&] {
      SimulationParams prm = cfg.mc;
      prm.seed = cfg.seed;
      prm.threads = cfg.threads;
      prm.box = cfg.R;
      FeedbackControl control = FeedbackControl::zero(problem.dimension);
      if (cfg.control.kind == ControlChoice::Kind::Extracted)
        control = FeedbackControl::sampled(grid, res.control->controls);
      else if (cfg.control.kind == ControlChoice::Kind::Linear)
        control = FeedbackControl::linear(cfg.control.coefficient, problem.dimension);
      res.mc = simulate_paths(problem, control, prm);
      if (!res.mc->sample_path.empty()) {
        auto os = bundle.open("sample_path.csv", "recorded trajectory (t, X, S, xi, running cost)");
        write_sample_path_csv(os, res.mc->sample_path);
      }
      Json m = simulation_to_json(*res.mc);
      m["control"] = control_choice_name(cfg.control);
      summary["simulate"] = m;
      log << "[simulate] Lambda = " << res.mc->lambda_hat << " +- " << res.mc->std_error << "\n";
    });
  }

  // audit
  if (cfg.has_stage("audit")) {
    detail::run_stage("audit", [&] {
      const ErgodicSolution& s = *res.solution;
      auto want = [&](const char* n) { return std::find(cfg.audits.begin(), cfg.audits.end(), n) != cfg.audits.end(); };
      if (want("assumptions")) {
        const AssumptionReport a = validate_assumptions(problem, grid);
        summary["assumptions"] = assumptions_to_json(a);
        AuditReport r;
        r.name = "assumptions";
        r.passed = a.rates_positive && a.coercive && a.trig_condition && a.passed;
        r.constants = {{"upsilon_alpha0", a.upsilon_alpha0}, {"C1", a.c1}, {"C1_tilde", a.c1_tilde},
                       {"C2", a.c2}, {"C3", a.c3}};
        r.narrative = std::string(a.coercive ? "coercive source" : "source is not coercive") +
                      (a.trig_condition ? "" : "; trig exponents inadmissible") +
                      (a.rates_positive ? "" : "; switching rate not positive");
        res.audits.push_back(r);
      }
      if (want("duality")) res.audits.push_back(audit_duality(problem, s, cfg.duality_tol));
      if (want("m_matrix")) res.audits.push_back(audit_m_matrix(problem, s, cfg.solver));
      if (want("comparison"))
        res.audits.push_back(audit_comparison(problem, grid, cfg.comparison_delta, cfg.comparison_eps, cfg.solver));
      if (want("gradient_bound")) {
        const Grid gg(problem.dimension, cfg.R, cfg.gradient_h ? *cfg.gradient_h : cfg.h);
        auto ga = audit_gradient_bound(problem, gg, cfg.solver, cfg.gradient_scales, cfg.gradient_factor);
        res.audits.push_back(ga.gradient);
        res.audits.push_back(ga.coupling);
      }
      if (want("coercive_lower_bound"))
        res.audits.push_back(audit_coercive_lower_bound(problem, s, cfg.solver, cfg.m1_floor));
      const bool truncatable =
          problem.hamiltonians.states[0].gamma > 2.0 || problem.hamiltonians.states[1].gamma > 2.0;
      if (want("truncation") && truncatable)
        res.audits.push_back(audit_truncation(problem, grid, cfg.solver, cfg.truncation_rel_tol));
      if (want("consistency") && (res.lp || res.mc)) {
        ConsistencyInputs in;
        in.lambda_pde = s.lambda;
        const double scale = std::max(std::abs(s.lambda), 1.0);
        if (res.lp) {
          in.lambda_lp = res.lp->lambda_bar;
          in.tol_lp_grid = cfg.lp_tol_rel * scale;
        }
        if (res.mc) {
          in.lambda_mc = res.mc->lambda_hat;
          in.mc_std_error = res.mc->std_error;
          in.tol_dt_h = cfg.mc_tol_rel * scale;
        }
        res.audits.push_back(consistency_report(in));
      }
      bundle.json("audits.json", "audit reports", audits_to_json(res.audits));
      auto os = bundle.open("audits.md", "audit reports (markdown)");
      write_audits_markdown(os, res.audits);
      for (const auto& r : res.audits) log << "[audit] " << r.name << ": " << (r.passed ? "pass" : "FAIL") << "\n";
    });
  }

  res.exit_code = all_passed(res.audits) ? 0 : 1;
  summary["audits_passed"] = res.exit_code == 0;
  Json files = bundle.manifest();
  files.push_back({{"file", "summary.json"}, {"role", "run summary and manifest"}});
  summary["files"] = files;
  {
    std::ofstream os(bundle.dir() / "summary.json");
    if (!os) throw StageError("output", "cannot write summary.json");
    os << summary.dump(2) << "\n";
  }
  res.summary = std::move(summary);
  return res;
}

}  // namespace ergohjb
