#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ergohjb/assumptions.hpp"
#include "ergohjb/generator.hpp"
#include "ergohjb/solver.hpp"

namespace ergohjb {

/// Outcome of one audit. A failure names the violating node and both sides of the inequality.
struct AuditReport {
  std::string name;
  bool passed = true;
  std::map<std::string, double> constants;
  int worst_state = 0;  // 1-based regime, 0 when not node-specific
  int worst_node = -1;
  Vec worst_x;
  double lhs = 0.0;
  double rhs = 0.0;
  std::string narrative;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline std::string fmt_x(const Vec& x) {
  std::ostringstream os;
  os.precision(6);
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

inline bool in_half_box(const Grid& g, int node) {
  return g.coordinate(node).cwiseAbs().maxCoeff() <= 0.5 * g.half_width() + 1e-12 * g.spacing();
}

/// Denominator 1 + sup_{B2} sum (f_i)_+^2 + sup_{B2} sum |grad f_i|^{2g_i/(2g_i-1)} over unpenalized sources.
inline double gradient_rhs(const ProblemSpec& p, const Grid& g, const Eigen::VectorXd& penalty) {
  double fsum = 0.0, gsum = 0.0;
  for (int node = 0; node < g.size(); ++node) {
    if (penalty[node] != 0.0) continue;
    const Vec x = g.coordinate(node);
    double fs = 0.0, gs = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double gam = p.hamiltonians.states[k].gamma;
      fs += std::pow(std::max(0.0, p.f[k].value(x)), 2.0);
      gs += std::pow(p.f[k].gradient(x).norm(), 2.0 * gam / (2.0 * gam - 1.0));
    }
    fsum = std::max(fsum, fs);
    gsum = std::max(gsum, gs);
  }
  return 1.0 + fsum + gsum;
}

inline double spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

struct GradientAudit {
  AuditReport gradient;
  AuditReport coupling;
};

/// Scale-stability of the interior gradient bound and of the coupling bound.
/// For each s the sources are multiplied by s and the ergodic problem is solved on `grid`;
///   rho(s) = sup_{B1} max_i |grad u_i|^{2 g_i} / rhs(s),  c(s) = sup_{B1} |u_1 - u_2|^2 / rhs(s),
/// with B1 the half-box and B2 the box minus the penalty wall. Both pass when max/min <= factor
/// across s; the coupling audit also passes when u_1 - u_2 vanishes to rounding for every s.
inline GradientAudit audit_gradient_bound(const ProblemSpec& problem, const Grid& grid, const SolverOptions& opt = {},
                                          const std::vector<double>& scales = {1.0, 4.0, 16.0},
                                          double factor = 5.0) {
  if (scales.empty()) throw ParameterError("gradient audit needs at least one scaling");
  GradientAudit out;
  out.gradient.name = "gradient_bound";
  out.coupling.name = "coupling_bound";
  std::vector<double> rho, coup;
  bool coupling_zero = true;
  double worst_rho = -1.0;
  for (double s : scales) {
    ProblemSpec p = problem;
    for (int k = 0; k < 2; ++k) p.f[k] = problem.f[k].scaled(s);
    const ErgodicSolution sol = solve_ergodic_normalized(p, grid, opt);
    const Eigen::VectorXd pen = penalty_field(p, grid, opt.penalty);
    const double rhs = detail::gradient_rhs(p, grid, pen);
    double num = 0.0, diff = 0.0, usup = 0.0;
    int arg = -1, karg = 0;
    std::array<Eigen::MatrixXd, 2> grad{gradient_central(grid, sol.u[0]), gradient_central(grid, sol.u[1])};
    for (int node = 0; node < grid.size(); ++node) {
      if (!detail::in_half_box(grid, node)) continue;
      for (int k = 0; k < 2; ++k) {
        const double v = std::pow(grad[k].col(node).norm(), 2.0 * p.hamiltonians.states[k].gamma);
        if (v > num) {
          num = v;
          arg = node;
          karg = k + 1;
        }
        usup = std::max(usup, std::abs(sol.u[k][node]));
      }
      diff = std::max(diff, std::abs(sol.u[0][node] - sol.u[1][node]));
    }
    const double r = num / rhs;
    rho.push_back(r);
    out.gradient.constants["rho_s" + detail::fmt(s)] = r;
    if (r > worst_rho && arg >= 0) {
      worst_rho = r;
      out.gradient.worst_node = arg;
      out.gradient.worst_state = karg;
      out.gradient.worst_x = grid.coordinate(arg);
      out.gradient.lhs = num;
      out.gradient.rhs = rhs;
    }
    const int o = grid.origin();
    out.coupling.constants["origin_gap_sq_s" + detail::fmt(s)] = std::pow(sol.u[0][o] - sol.u[1][o], 2.0);
    const bool zero = diff <= 1e-8 * (1.0 + usup);
    coupling_zero = coupling_zero && zero;
    const double c = diff * diff / rhs;
    coup.push_back(c);
    out.coupling.constants["c_tilde_s" + detail::fmt(s)] = c;
  }

  const bool trivial = *std::max_element(rho.begin(), rho.end()) <= 1e-12;
  const double rs = trivial ? 1.0 : detail::spread(rho);
  out.gradient.constants["spread"] = rs;
  out.gradient.passed = rs <= factor;
  out.gradient.narrative = trivial ? "interior gradient vanishes for every scaling (trivially bounded)"
                                   : "rho(s) max/min = " + detail::fmt(rs) + (out.gradient.passed ? " <= " : " > ") +
                                         detail::fmt(factor);

  const double cs = coupling_zero ? 1.0 : detail::spread(coup);
  out.coupling.constants["spread"] = cs;
  out.coupling.passed = coupling_zero || cs <= factor;
  out.coupling.narrative = coupling_zero ? "u_1 - u_2 vanishes to rounding on B1 for every scaling"
                                         : "C~(s) max/min = " + detail::fmt(cs) +
                                               (out.coupling.passed ? " <= " : " > ") + detail::fmt(factor);
  return out;
}

/// Fits the largest M1 such that u_i - min u >= M1 (f_i)_+^{1/g_i} - M2 holds outside the wall layer
/// for some M2 <= M2_cap = 1 + sup_{B1} (f_i)_+^{1/g_i}. Passes when M1 >= m1_floor. When f_1 and
/// f_2 are comparable, also reports M3 = sup |grad u_i|^2 / (u_i (f_i)_+^{1/g_i}) outside the
/// quarter-box, excluding a unit buffer next to the wall where the boundary layer dominates.
inline AuditReport audit_coercive_lower_bound(const ProblemSpec& problem, const ErgodicSolution& s,
                                              const SolverOptions& opt = {}, double m1_floor = 0.01) {
  AuditReport rep;
  rep.name = "coercive_lower_bound";
  const Grid& g = s.grid;
  const Eigen::VectorXd pen = penalty_field(problem, g, opt.penalty);
  const double umin = std::min(s.u[0].minCoeff(), s.u[1].minCoeff());
  std::array<Eigen::VectorXd, 2> v{s.u[0].array() - umin, s.u[1].array() - umin};
  std::array<Eigen::VectorXd, 2> root;
  double cap = 1.0;
  for (int k = 0; k < 2; ++k) {
    root[k].resize(g.size());
    const double gam = problem.hamiltonians.states[k].gamma;
    for (int node = 0; node < g.size(); ++node) {
      root[k][node] = std::pow(std::max(0.0, problem.f[k].value(g.coordinate(node))), 1.0 / gam);
      if (detail::in_half_box(g, node)) cap = std::max(cap, 1.0 + root[k][node]);
    }
  }
  auto needed_m2 = [&](double m1, int* arg, int* karg) {
    double m2 = 0.0;
    for (int k = 0; k < 2; ++k)
      for (int node = 0; node < g.size(); ++node) {
        if (pen[node] != 0.0) continue;
        const double d = m1 * root[k][node] - v[k][node];
        if (d > m2) {
          m2 = d;
          if (arg) *arg = node;
          if (karg) *karg = k + 1;
        }
      }
    return m2;
  };
  double lo = 0.0, hi = 1.0;
  while (needed_m2(hi, nullptr, nullptr) <= cap && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (needed_m2(mid, nullptr, nullptr) <= cap ? lo : hi) = mid;
  }
  const double m1 = lo;
  rep.constants["M1"] = m1;
  rep.constants["M2"] = needed_m2(m1, nullptr, nullptr);
  rep.constants["M2_cap"] = cap;
  rep.passed = m1 >= m1_floor;
  if (!rep.passed) {
    int arg = -1, karg = 0;
    const double m2 = needed_m2(m1_floor, &arg, &karg);
    rep.worst_node = arg;
    rep.worst_state = karg;
    if (arg >= 0) {
      rep.worst_x = g.coordinate(arg);
      rep.lhs = v[karg - 1][arg];
      rep.rhs = m1_floor * root[karg - 1][arg] - cap;
    }
    rep.constants["M2_needed_at_floor"] = m2;
  }

  // Gradient quotient when f_1 and f_2 are comparable outside the quarter-box.
  double wall = 0.0;
  for (int node = 0; node < g.size(); ++node)
    if (pen[node] != 0.0) wall = std::max(wall, g.half_width() - g.coordinate(node).cwiseAbs().maxCoeff());
  bool comparable = true;
  double m3 = 0.0;
  std::array<Eigen::MatrixXd, 2> grad{gradient_central(g, v[0]), gradient_central(g, v[1])};
  for (int node = 0; node < g.size() && comparable; ++node) {
    const double r = g.coordinate(node).cwiseAbs().maxCoeff();
    if (pen[node] != 0.0 || r <= 0.25 * g.half_width() || r > g.half_width() - 1.0 - wall) continue;
    const Vec x = g.coordinate(node);
    const double f1 = problem.f[0].value(x), f2 = problem.f[1].value(x);
    if (!(f1 > 0.0 && f2 > 0.0) || std::max(f1 / f2, f2 / f1) > 100.0) {
      comparable = false;
      break;
    }
    for (int k = 0; k < 2; ++k)
      if (v[k][node] > 0.0 && root[k][node] > 0.0 && g.is_interior(node))
        m3 = std::max(m3, grad[k].col(node).squaredNorm() / (v[k][node] * root[k][node]));
  }
  if (comparable) {
    rep.constants["M3"] = m3;
    if (!std::isfinite(m3)) rep.passed = false;
  }
  rep.narrative = "largest M1 = " + detail::fmt(m1) + " with M2 <= " + detail::fmt(cap) +
                  (rep.passed ? " (>= " : " (< ") + detail::fmt(m1_floor) + ")" +
                  (comparable ? "; gradient quotient M3 = " + detail::fmt(m3) : "; sources not comparable, M3 skipped");
  if (!rep.passed && rep.worst_node >= 0)
    rep.narrative += "; at node " + std::to_string(rep.worst_node) + " x=" + detail::fmt_x(rep.worst_x) + " state " +
                     std::to_string(rep.worst_state) + ": u=" + detail::fmt(rep.lhs) +
                     " < M1 f^(1/g) - M2_cap=" + detail::fmt(rep.rhs);
  return rep;
}

/// Discrete comparison: discounted solutions for sources `lower` <= `upper` with identical wall,
/// control cap and closure must satisfy w_lower <= w_upper nodewise. When `shift` is given
/// (upper = lower + shift), w_upper - w_lower <= shift/eps is checked as well.
inline AuditReport audit_comparison(const ProblemSpec& lower, const ProblemSpec& upper, const Grid& grid, double eps,
                                    SolverOptions opt = {}, std::optional<double> shift = std::nullopt) {
  AuditReport rep;
  rep.name = "comparison";
  if (!(eps > 0.0)) throw ParameterError("comparison audit needs eps > 0");
  if (!opt.penalty.cap)
    opt.penalty.cap = 1e6 * (1.0 + std::max(max_abs_source(lower, grid), max_abs_source(upper, grid)));
  if (!opt.xi_max) opt.xi_max = std::max(control_cap(lower, grid), control_cap(upper, grid));
  const DiscountedSolution a = solve_discounted(lower, grid, eps, opt);
  const DiscountedSolution b = solve_discounted(upper, grid, eps, opt);
  double wmax = 0.0;
  for (int k = 0; k < 2; ++k) wmax = std::max({wmax, a.w[k].cwiseAbs().maxCoeff(), b.w[k].cwiseAbs().maxCoeff()});
  // Both solves stop at linear-solve rounding; the floor covers it and nothing else.
  const double floor = 1e-10 * (1.0 + wmax);
  double worst = -std::numeric_limits<double>::infinity(), gap_max = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node) {
      const double d = a.w[k][node] - b.w[k][node];
      gap_max = std::max(gap_max, -d);
      if (d > worst) {
        worst = d;
        rep.worst_state = k + 1;
        rep.worst_node = node;
        rep.lhs = a.w[k][node];
        rep.rhs = b.w[k][node];
      }
    }
  rep.worst_x = grid.coordinate(rep.worst_node);
  rep.constants["max_violation"] = std::max(0.0, worst);
  rep.constants["max_gap"] = gap_max;
  rep.constants["rounding_floor"] = floor;
  rep.passed = worst <= floor;
  std::string extra;
  if (shift) {
    rep.constants["shift_over_eps"] = *shift / eps;
    if (gap_max > *shift / eps + floor) {
      rep.passed = false;
      extra = "; gap " + detail::fmt(gap_max) + " exceeds delta/eps=" + detail::fmt(*shift / eps);
    }
  }
  if (worst > floor)
    rep.narrative = "ordering violated at node " + std::to_string(rep.worst_node) + " x=" + detail::fmt_x(rep.worst_x) +
                    " state " + std::to_string(rep.worst_state) + ": w_lower=" + detail::fmt(rep.lhs) +
                    " > w_upper=" + detail::fmt(rep.rhs) + " (loss of the M-matrix property)" + extra;
  else
    rep.narrative = "w_lower <= w_upper at every node; max gap " + detail::fmt(gap_max) + extra;
  return rep;
}

/// Comparison for f versus f + delta in both regimes.
inline AuditReport audit_comparison(const ProblemSpec& problem, const Grid& grid, double delta, double eps,
                                    const SolverOptions& opt = {}) {
  if (!(delta > 0.0)) throw ParameterError("comparison audit needs delta > 0");
  ProblemSpec up = problem;
  for (int k = 0; k < 2; ++k) up.f[k] = problem.f[k].shifted(delta);
  return audit_comparison(problem, up, grid, eps, opt, delta);
}

/// Legendre duality of the extracted feedback: max relative |H - (p.xi - l)| over unclamped nodes.
inline AuditReport audit_duality(const ProblemSpec& problem, const ErgodicSolution& s, double tol = 1e-9) {
  AuditReport rep;
  rep.name = "duality";
  const ExtractedControl ec = extract_control(problem, s);
  rep.constants["duality_residual"] = ec.duality_residual;
  rep.constants["clamped_nodes"] = ec.clamped_nodes;
  rep.passed = ec.duality_residual <= tol;
  rep.lhs = ec.duality_residual;
  rep.rhs = tol;
  rep.narrative = "relative duality gap " + detail::fmt(ec.duality_residual) + (rep.passed ? " <= " : " > ") +
                  detail::fmt(tol) + " (" + std::to_string(ec.clamped_nodes) + " clamped wall nodes excluded)";
  return rep;
}

/// M-matrix structure of the operator frozen at the optimal policy of `s`.
inline AuditReport audit_m_matrix(const ProblemSpec& problem, const ErgodicSolution& s, const SolverOptions& opt = {}) {
  AuditReport rep;
  rep.name = "m_matrix";
  const auto imp = improve_policy(s.grid, problem, s.u, opt.scheme, s.xi_max);
  const auto m = check_m_matrix(assemble_policy(s.grid, problem, imp.policy, 0.0));
  rep.passed = m.ok;
  rep.constants["max_off_diagonal"] = m.max_off_diagonal;
  rep.constants["min_diagonal"] = m.min_diagonal;
  rep.constants["min_dominance_margin"] = m.min_dominance_margin;
  if (!m.ok) {
    rep.worst_state = m.worst_row / s.grid.size() + 1;
    rep.worst_node = m.worst_row % s.grid.size();
    rep.worst_x = s.grid.coordinate(rep.worst_node);
  }
  rep.narrative = m.ok ? "off-diagonals <= 0 and rows diagonally dominant"
                       : "M-matrix structure violated at node " + std::to_string(rep.worst_node);
  return rep;
}

/// psi_n truncation with n above the observed sup of H outside the wall layer must reproduce the
/// untruncated lambda within rel_tol. Inside the wall layer H exceeds n, so psi_n is active there.
inline AuditReport audit_truncation(const ProblemSpec& problem, const Grid& grid, const SolverOptions& opt = {},
                                    double rel_tol = 0.01) {
  AuditReport rep;
  rep.name = "truncation";
  ProblemSpec plain = problem;
  plain.hamiltonians.truncation.reset();
  const ErgodicSolution a = solve_ergodic_normalized(plain, grid, opt);
  const auto imp = improve_policy(grid, plain, a.u, opt.scheme, a.xi_max);
  const Eigen::VectorXd pen = penalty_field(plain, grid, opt.penalty);
  double sup_h = -std::numeric_limits<double>::infinity(), sup_all = sup_h;
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node) {
      sup_all = std::max(sup_all, imp.raw_hamiltonian[k][node]);
      if (pen[node] == 0.0) sup_h = std::max(sup_h, imp.raw_hamiltonian[k][node]);
    }
  const double level = std::max(1.0, 1.5 * sup_h + 1.0);
  const double c1 = validate_assumptions(plain, grid).c1;
  ProblemSpec trunc = plain;
  trunc.hamiltonians = truncate_hamiltonian(plain.hamiltonians, level, c1);
  const ErgodicSolution b = solve_ergodic_normalized(trunc, grid, opt, a.controls);
  const double rel = std::abs(b.lambda - a.lambda) / std::max(std::abs(a.lambda), 1e-300);
  rep.constants["sup_H"] = sup_h;
  rep.constants["sup_H_with_wall"] = sup_all;
  rep.constants["n"] = level;
  rep.constants["lambda_untruncated"] = a.lambda;
  rep.constants["lambda_truncated"] = b.lambda;
  rep.constants["relative_difference"] = rel;
  rep.lhs = rel;
  rep.rhs = rel_tol;
  rep.passed = rel <= rel_tol;
  rep.narrative = "lambda " + detail::fmt(b.lambda) + " (psi_n, n=" + detail::fmt(level) + ") vs " +
                  detail::fmt(a.lambda) + " untruncated: relative difference " + detail::fmt(rel);
  return rep;
}

struct ConsistencyInputs {
  double lambda_pde = 0.0;
  std::optional<double> lambda_lp;
  std::optional<double> lambda_mc;
  double mc_std_error = 0.0;
  double tol_lp_grid = 0.0;  // allowance for the coarser LP grid and control mesh
  double tol_dt_h = 0.0;     // allowance for time step and spatial discretization of the MC leg
};

/// |lambda_pde - lambda_lp| <= tol_lp_grid and |lambda_pde - Lambda_mc| <= 3 sigma + tol_dt_h.
inline AuditReport consistency_report(const ConsistencyInputs& in) {
  AuditReport rep;
  rep.name = "consistency";
  rep.constants["lambda_pde"] = in.lambda_pde;
  std::string text = "lambda_pde=" + detail::fmt(in.lambda_pde);
  if (in.lambda_lp) {
    const double gap = std::abs(in.lambda_pde - *in.lambda_lp);
    rep.constants["lambda_lp"] = *in.lambda_lp;
    rep.constants["gap_lp"] = gap;
    rep.constants["tol_lp_grid"] = in.tol_lp_grid;
    const bool ok = gap <= in.tol_lp_grid;
    rep.passed = rep.passed && ok;
    if (!ok) {
      rep.lhs = gap;
      rep.rhs = in.tol_lp_grid;
    }
    text += "; |pde-lp|=" + detail::fmt(gap) + (ok ? " <= " : " > ") + detail::fmt(in.tol_lp_grid);
  }
  if (in.lambda_mc) {
    const double gap = std::abs(in.lambda_pde - *in.lambda_mc);
    const double bound = 3.0 * in.mc_std_error + in.tol_dt_h;
    rep.constants["lambda_mc"] = *in.lambda_mc;
    rep.constants["mc_std_error"] = in.mc_std_error;
    rep.constants["gap_mc"] = gap;
    rep.constants["gap_mc_bound"] = bound;
    const bool ok = gap <= bound;
    rep.passed = rep.passed && ok;
    if (!ok) {
      rep.lhs = gap;
      rep.rhs = bound;
    }
    text += "; |pde-mc|=" + detail::fmt(gap) + (ok ? " <= " : " > ") + "3 sigma + tol = " + detail::fmt(bound);
    if (!ok && *in.lambda_mc > in.lambda_pde) text += " (Monte Carlo cost above lambda: control is suboptimal)";
  }
  rep.narrative = text;
  return rep;
}

inline bool all_passed(const std::vector<AuditReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const AuditReport& r) { return r.passed; });
}

inline void write_audits_markdown(std::ostream& os, const std::vector<AuditReport>& reports) {
  os << "# Audits\n\n| audit | result | summary |\n|---|---|---|\n";
  for (const auto& r : reports) os << "| " << r.name << " | " << (r.passed ? "pass" : "FAIL") << " | " << r.narrative << " |\n";
  for (const auto& r : reports) {
    os << "\n## " << r.name << "\n\n";
    for (const auto& [k, v] : r.constants) os << "- " << k << ": " << detail::fmt(v) << "\n";
    if (r.worst_node >= 0)
      os << "- worst node: " << r.worst_node << " (state " << r.worst_state << ", x=" << detail::fmt_x(r.worst_x)
         << "), lhs " << detail::fmt(r.lhs) << ", rhs " << detail::fmt(r.rhs) << "\n";
  }
}

}  // namespace ergohjb
