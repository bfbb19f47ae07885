#pragma once

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ergohjb/control_step.hpp"
#include "ergohjb/generator.hpp"
#include "ergohjb/grid.hpp"
#include "ergohjb/model.hpp"
#include "ergohjb/penalty.hpp"

namespace ergohjb {

struct SolverOptions {
  AdvectionScheme scheme = AdvectionScheme::Hybrid;
  PenaltyParams penalty;
  std::optional<double> xi_max;   // default: control_cap(problem, grid)
  std::optional<double> tol_pde;  // default: 1e-9 (1 + |f|_inf)
  double tol_lambda = 1e-4;
  double eps0 = 1.0;
  double eps_min = 1e-5;
  int max_iters = 100;
};

/// (parameter, lambda estimate): parameter is eps, R or the iteration index depending on the route.
struct HistoryEntry {
  double parameter = 0.0;
  double lambda = 0.0;
};

struct DiscountedSolution {
  Grid grid{1, 1.0, 1.0};
  GridFieldPair w;
  double epsilon = 0.0;
  int iterations = 0;
  double residual = 0.0;
  double tol_pde = 0.0;
  std::vector<double> residual_history;
  ControlFieldPair controls;
};

struct ErgodicSolution {
  Grid grid{1, 1.0, 1.0};
  GridFieldPair u;  // u_1(x_ref) = 0
  double lambda = 0.0;
  double residual = 0.0;  // sup_i |R_i| / (1 + |f_alpha,i|) of the ergodic equation
  double tol_pde = 0.0;
  std::vector<HistoryEntry> history;
  std::vector<double> residual_history;
  int iterations = 0;
  ControlFieldPair controls;  // last policy
  GridFieldPair source;       // f_alpha on the grid
  double xi_max = 0.0;
  int min_state = 1;
  int min_node = 0;
  Vec minimizer;
  bool minimizer_interior = false;  // strictly inside the box and outside the wall layer
};

// ---------------------------------------------------------------------------
// Linear algebra.

namespace detail {

inline double norm1(const SparseMatrix& a) {
  double m = 0.0;
  for (int col = 0; col < a.outerSize(); ++col) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(a, col); it; ++it) s += std::abs(it.value());
    m = std::max(m, s);
  }
  return m;
}

/// Sparse LU with up to three steps of iterative refinement; normwise backward error
/// |Ax - b| / (|A| |x| + |b|) <= 1e-12 in the 1-norm.
inline Eigen::VectorXd sparse_solve(const SparseMatrix& a, const Eigen::VectorXd& b) {
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success)
    throw SolverError("sparse LU factorization failed (singular matrix, |A|_1=" + std::to_string(norm1(a)) +
                      "): " + lu.lastErrorMessage());
  const double an = norm1(a);
  Eigen::VectorXd x = lu.solve(b);
  auto backward = [&] {
    const double den = an * x.lpNorm<1>() + b.lpNorm<1>();
    return (a * x - b).lpNorm<1>() / std::max(den, std::numeric_limits<double>::min());
  };
  double err = backward();
  for (int it = 0; it < 3 && err > 1e-15; ++it) {
    x += lu.solve(Eigen::VectorXd(b - a * x));
    err = backward();
  }
  if (!x.allFinite() || err > 1e-12) {
    const double cond = an * x.lpNorm<1>() / std::max(b.lpNorm<1>(), std::numeric_limits<double>::min());
    std::ostringstream os;
    os << "linear solve failed: backward error " << err << ", condition estimate >= " << cond;
    throw SolverError(os.str());
  }
  return x;
}

inline Eigen::VectorXd stack(const GridFieldPair& g) {
  Eigen::VectorXd s(2 * g.size());
  s << g[0], g[1];
  return s;
}

inline GridFieldPair unstack(const Eigen::VectorXd& s) {
  const int n = static_cast<int>(s.size() / 2);
  GridFieldPair g(n);
  g[0] = s.head(n);
  g[1] = s.tail(n);
  return g;
}

}  // namespace detail

/// Solves matrix * u = rhs.
inline GridFieldPair policy_evaluation(const GeneratorMatrix& matrix, const GridFieldPair& rhs) {
  if (2 * rhs.size() != matrix.rows()) throw ParameterError("right-hand side does not match matrix size");
  return detail::unstack(detail::sparse_solve(matrix.matrix, detail::stack(rhs)));
}

// ---------------------------------------------------------------------------
// Residual of the discretized equation
//   -Lap_h u_k + H_h,k(u_k) + alpha_k (u_k - u_j) + eps u_k - f_alpha,k + lambda.

struct ResidualReport {
  Eigen::VectorXd signed_residual;  // stacked, unnormalized
  double normalized = 0.0;          // sup_i |R_i| / (1 + |f_i|)
  bool converged = false;           // every node below max(tol, roundoff floor)
};

namespace detail {

struct Context {
  const Grid& grid;
  const ProblemSpec& problem;
  GridFieldPair source;
  Eigen::VectorXd source_stacked;
  double xi_max;
  double tol;
  AdvectionScheme scheme;
};

inline Context make_context(const ProblemSpec& problem, const Grid& grid, const SolverOptions& opt) {
  problem.validate();
  if (problem.dimension != grid.dimension()) throw ParameterError("problem and grid dimensions differ");
  Context c{grid, problem, penalty_source(problem, grid, opt.penalty), {}, 0.0, 0.0, opt.scheme};
  c.source_stacked = stack(c.source);
  c.xi_max = opt.xi_max ? *opt.xi_max : control_cap(problem, grid);
  if (!(c.xi_max > 0.0)) throw ParameterError("control cap must be positive");
  double finf = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node)
      finf = std::max(finf, std::abs(problem.f[k].value(grid.coordinate(node))));
  c.tol = opt.tol_pde ? *opt.tol_pde : 1e-9 * (1.0 + finf);
  return c;
}

inline ResidualReport residual(const Context& c, const GridFieldPair& u, double lambda, double eps,
                               const ImprovementResult& imp) {
  const Policy zero(c.grid.dimension(), c.grid.size());
  const SparseMatrix a0 = assemble_policy(c.grid, c.problem, zero, eps).matrix;
  const Eigen::VectorXd us = stack(u);
  Eigen::VectorXd hs(us.size());
  hs << imp.hamiltonian[0], imp.hamiltonian[1];
  ResidualReport r;
  r.signed_residual = a0 * us + hs - c.source_stacked + Eigen::VectorXd::Constant(us.size(), lambda);
  const Eigen::VectorXd mag = SparseMatrix(a0.cwiseAbs()) * us.cwiseAbs() + hs.cwiseAbs() +
                              c.source_stacked.cwiseAbs() + Eigen::VectorXd::Constant(us.size(), std::abs(lambda));
  constexpr double kFloor = 64.0 * std::numeric_limits<double>::epsilon();
  r.converged = true;
  for (Eigen::Index i = 0; i < us.size(); ++i) {
    const double scale = 1.0 + std::abs(c.source_stacked[i]);
    const double v = std::abs(r.signed_residual[i]) / scale;
    r.normalized = std::max(r.normalized, v);
    if (!(v <= std::max(c.tol, kFloor * mag[i] / scale))) r.converged = false;
  }
  return r;
}

/// Right-hand-side offset of the linearization at the improved policy: l(x, xi) for untruncated
/// regimes, -psi(H0) + psi'(H0) (H0 + l) for psi_n-truncated ones (Newton step).
inline GridFieldPair policy_offset(const Context& c, const ImprovementResult& imp) {
  GridFieldPair off(c.grid.size());
  const auto& spec = c.problem.hamiltonians;
  for (int k = 0; k < 2; ++k) {
    const StateIndex st(k + 1);
    const bool trunc = spec.truncates(st);
    for (int node = 0; node < c.grid.size(); ++node) {
      const Vec x = c.grid.coordinate(node);
      const double l = lagrangian_eval(spec, st, x, imp.policy.controls.at(k, node));
      if (trunc) {
        const double h0 = imp.raw_hamiltonian[k][node];
        off[k][node] = -imp.hamiltonian[k][node] + imp.policy.scale[k][node] * (h0 + l);
      } else {
        off[k][node] = l;
      }
    }
  }
  return off;
}

/// Initial policy from a control field (zero if absent), evaluated in Howard form.
inline std::pair<Policy, GridFieldPair> initial_policy(const Context& c, const std::optional<ControlFieldPair>& warm) {
  ControlFieldPair ctrl = warm ? *warm : ControlFieldPair(c.grid.dimension(), c.grid.size());
  if (ctrl.nodes() != c.grid.size() || ctrl.dimension() != c.grid.dimension())
    throw ParameterError("warm-start control field does not match grid");
  for (int k = 0; k < 2; ++k) ctrl.xi[k] = ctrl.xi[k].cwiseMax(-c.xi_max).cwiseMin(c.xi_max);
  Policy p = Policy::from_controls(c.grid, ctrl, c.scheme);
  GridFieldPair off(c.grid.size());
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < c.grid.size(); ++node)
      off[k][node] = lagrangian_eval(c.problem.hamiltonians, StateIndex(k + 1), c.grid.coordinate(node), ctrl.at(k, node));
  return {std::move(p), std::move(off)};
}

inline int reference_node(const Context& c) {
  const int node = c.grid.nearest_node(c.problem.x_ref);
  if ((c.grid.coordinate(node) - c.problem.x_ref).cwiseAbs().maxCoeff() > 1e-9 * c.grid.spacing())
    throw ParameterError("x_ref is not a grid node");
  return node;
}

/// Bordered system: the column of u_1(x_ref) is replaced by the lambda unknown.
inline SparseMatrix bordered_matrix(const Context& c, const Policy& policy, int ref) {
  std::vector<Triplet> trips;
  emit_generator_rows(c.grid, c.problem, policy, 0.0, trips);
  std::vector<Triplet> out;
  out.reserve(trips.size() + 2 * c.grid.size());
  for (const auto& t : trips)
    if (t.col() != ref) out.push_back(t);
  for (int row = 0; row < 2 * c.grid.size(); ++row) out.emplace_back(row, ref, 1.0);
  SparseMatrix m(2 * c.grid.size(), 2 * c.grid.size());
  m.setFromTriplets(out.begin(), out.end());
  m.makeCompressed();
  return m;
}

struct HowardResult {
  GridFieldPair u;
  double lambda = 0.0;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_history;
  std::vector<HistoryEntry> lambda_history;
  ControlFieldPair controls;
};

/// Howard policy iteration. eps > 0: discounted (lambda = 0); eps = 0: ergodic with u_1(x_ref) = 0.
inline HowardResult howard(const Context& c, double eps, const std::optional<ControlFieldPair>& warm, int max_iters) {
  const bool ergodic = eps == 0.0;
  const int ref = ergodic ? reference_node(c) : -1;
  auto [policy, offset] = initial_policy(c, warm);
  HowardResult out;
  for (int m = 1; m <= max_iters; ++m) {
    const Eigen::VectorXd rhs = c.source_stacked + stack(offset);
    Eigen::VectorXd z;
    double lambda = 0.0;
    if (ergodic) {
      z = sparse_solve(bordered_matrix(c, policy, ref), rhs);
      lambda = z[ref];
      z[ref] = 0.0;
    } else {
      z = sparse_solve(assemble_policy(c.grid, c.problem, policy, eps).matrix, rhs);
    }
    GridFieldPair u = unstack(z);
    ImprovementResult imp = improve_policy(c.grid, c.problem, u, c.scheme, c.xi_max);
    const ResidualReport rep = residual(c, u, lambda, eps, imp);
    out.residual_history.push_back(rep.normalized);
    out.lambda_history.push_back({static_cast<double>(m), lambda});
    if (rep.converged) {
      out.u = std::move(u);
      out.lambda = lambda;
      out.iterations = m;
      out.residual = rep.normalized;
      out.controls = policy.controls;
      return out;
    }
    offset = policy_offset(c, imp);
    policy = std::move(imp.policy);
  }
  std::ostringstream os;
  os << "policy iteration did not converge in " << max_iters << " iterations (residual "
     << out.residual_history.back() << ", tol " << c.tol << ")";
  throw SolverError(os.str(), out.residual_history);
}

inline void locate_minimizer(ErgodicSolution& s, const Eigen::VectorXd& penalty) {
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < s.grid.size(); ++node)
      if (s.u[k][node] < best) {
        best = s.u[k][node];
        s.min_state = k + 1;
        s.min_node = node;
      }
  s.minimizer = s.grid.coordinate(s.min_node);
  s.minimizer_interior = s.grid.is_interior(s.min_node) && penalty[s.min_node] == 0.0;
}

}  // namespace detail

/// Nonlinear residual of (u, lambda) at discount eps, unnormalized, stacked k * nodes + node.
inline Eigen::VectorXd nonlinear_residual(const ProblemSpec& problem, const Grid& grid, const GridFieldPair& u,
                                          double lambda, double eps, const SolverOptions& opt = {}) {
  const auto c = detail::make_context(problem, grid, opt);
  const auto imp = improve_policy(grid, problem, u, c.scheme, c.xi_max);
  return detail::residual(c, u, lambda, eps, imp).signed_residual;
}

inline DiscountedSolution solve_discounted(const ProblemSpec& problem, const Grid& grid, double eps,
                                           const SolverOptions& opt = {},
                                           const std::optional<ControlFieldPair>& warm = std::nullopt) {
  if (!(eps > 0.0)) throw ParameterError("discount eps must be > 0");
  const auto c = detail::make_context(problem, grid, opt);
  auto r = detail::howard(c, eps, warm, opt.max_iters);
  DiscountedSolution s;
  s.grid = grid;
  s.w = std::move(r.u);
  s.epsilon = eps;
  s.iterations = r.iterations;
  s.residual = r.residual;
  s.tol_pde = c.tol;
  s.residual_history = std::move(r.residual_history);
  s.controls = std::move(r.controls);
  return s;
}

inline ErgodicSolution solve_ergodic_normalized(const ProblemSpec& problem, const Grid& grid,
                                                const SolverOptions& opt = {},
                                                const std::optional<ControlFieldPair>& warm = std::nullopt) {
  const auto c = detail::make_context(problem, grid, opt);
  auto r = detail::howard(c, 0.0, warm, opt.max_iters);
  ErgodicSolution s;
  s.grid = grid;
  s.u = std::move(r.u);
  s.lambda = r.lambda;
  s.residual = r.residual;
  s.tol_pde = c.tol;
  s.history = std::move(r.lambda_history);
  s.residual_history = std::move(r.residual_history);
  s.iterations = r.iterations;
  s.controls = std::move(r.controls);
  s.source = c.source;
  s.xi_max = c.xi_max;
  detail::locate_minimizer(s, penalty_field(problem, grid, opt.penalty));
  return s;
}

/// eps_j = 2^{-j} eps0 down to eps_min.
inline std::vector<double> halving_schedule(double eps0, double eps_min) {
  if (!(eps0 > 0.0) || !(eps_min > 0.0) || eps_min > eps0) throw ParameterError("need 0 < eps_min <= eps0");
  std::vector<double> s;
  for (double e = eps0; e >= eps_min * (1.0 - 1e-12); e *= 0.5) s.push_back(e);
  return s;
}

/// lambda_eps = eps w_1(x_ref), u = w - w_1(x_ref); stops when consecutive lambda_eps differ by <= tol_lambda.
/// The reported residual is that of the ergodic equation at (u, lambda_eps).
inline ErgodicSolution vanishing_discount(const ProblemSpec& problem, const Grid& grid,
                                          const std::vector<double>& schedule, const SolverOptions& opt = {}) {
  if (schedule.empty()) throw ParameterError("discount schedule is empty");
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0.0)) throw ParameterError("discount schedule must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw ParameterError("discount schedule must decrease");
  }
  const auto c = detail::make_context(problem, grid, opt);
  const int ref = detail::reference_node(c);
  std::optional<ControlFieldPair> warm;
  std::vector<HistoryEntry> history;
  std::vector<double> lambdas;
  std::vector<double> residuals;
  for (double eps : schedule) {
    auto r = detail::howard(c, eps, warm, opt.max_iters);
    const double shift = r.u[0][ref];
    const double lambda = eps * shift;
    history.push_back({eps, lambda});
    lambdas.push_back(lambda);
    residuals.insert(residuals.end(), r.residual_history.begin(), r.residual_history.end());
    warm = r.controls;
    if (history.size() >= 2 && std::abs(lambda - history[history.size() - 2].lambda) <= opt.tol_lambda) {
      ErgodicSolution s;
      s.grid = grid;
      s.u = r.u;
      for (int k = 0; k < 2; ++k) s.u[k].array() -= shift;
      s.lambda = lambda;
      const auto imp = improve_policy(grid, problem, s.u, c.scheme, c.xi_max);
      s.residual = detail::residual(c, s.u, lambda, 0.0, imp).normalized;
      s.tol_pde = c.tol;
      s.history = std::move(history);
      s.residual_history = std::move(residuals);
      s.iterations = static_cast<int>(s.history.size());
      s.controls = std::move(r.controls);
      s.source = c.source;
      s.xi_max = c.xi_max;
      detail::locate_minimizer(s, penalty_field(problem, grid, opt.penalty));
      return s;
    }
  }
  std::ostringstream os;
  os << "discount schedule exhausted before |delta lambda| <= " << opt.tol_lambda << "; lambda history:";
  for (const auto& h : history) os << " (" << h.parameter << ", " << h.lambda << ")";
  throw SolverError(os.str(), lambdas);
}

inline ErgodicSolution vanishing_discount(const ProblemSpec& problem, const Grid& grid, const SolverOptions& opt = {}) {
  return vanishing_discount(problem, grid, halving_schedule(opt.eps0, opt.eps_min), opt);
}

struct NestedResult {
  ErgodicSolution solution;  // on the largest box
  std::vector<double> radii;
  std::vector<double> lambdas;
  std::vector<Vec> minimizers;
  std::vector<bool> minimizer_interior;
  bool minimizer_frozen = false;  // same minimizer location on the last two boxes
};

/// Copies controls on the nodes shared by two grids with equal spacing; zero elsewhere.
inline ControlFieldPair transfer_controls(const Grid& from, const ControlFieldPair& c, const Grid& to) {
  ControlFieldPair out(to.dimension(), to.size());
  const double h = to.spacing();
  for (int node = 0; node < to.size(); ++node) {
    const Vec x = to.coordinate(node);
    if (x.cwiseAbs().maxCoeff() > from.half_width() + 1e-9 * h) continue;
    const int src = from.nearest_node(x);
    for (int k = 0; k < 2; ++k) out.xi[k].col(node) = c.xi[k].col(src);
  }
  return out;
}

/// Ergodic solves on [-R, R]^N for increasing R with warm starts. Throws MonotonicityViolation when
/// lambda_R increases by more than 10 tol_lambda.
inline NestedResult nested_domains(const ProblemSpec& problem, const std::vector<double>& radii, double h,
                                   const SolverOptions& opt = {}) {
  if (radii.empty()) throw ParameterError("R schedule is empty");
  for (size_t i = 1; i < radii.size(); ++i)
    if (!(radii[i] > radii[i - 1])) throw ParameterError("R schedule must increase");
  const double tol_mono = 10.0 * opt.tol_lambda;
  NestedResult out;
  std::optional<ControlFieldPair> warm;
  std::optional<Grid> prev;
  for (double R : radii) {
    const Grid grid(problem.dimension, R, h);
    if (prev && warm) warm = transfer_controls(*prev, *warm, grid);
    ErgodicSolution s = solve_ergodic_normalized(problem, grid, opt, warm);
    out.radii.push_back(R);
    out.lambdas.push_back(s.lambda);
    out.minimizers.push_back(s.minimizer);
    out.minimizer_interior.push_back(s.minimizer_interior);
    if (out.lambdas.size() >= 2 && s.lambda > out.lambdas[out.lambdas.size() - 2] + tol_mono) {
      std::ostringstream os;
      os.precision(10);
      os << "lambda increased from " << out.lambdas[out.lambdas.size() - 2] << " to " << s.lambda << " at R=" << R;
      throw MonotonicityViolation(os.str(), out.lambdas);
    }
    warm = s.controls;
    prev = grid;
    out.solution = std::move(s);
  }
  out.solution.history.clear();
  for (size_t i = 0; i < radii.size(); ++i) out.solution.history.push_back({radii[i], out.lambdas[i]});
  const size_t n = out.minimizers.size();
  out.minimizer_frozen = n >= 2 && (out.minimizers[n - 1] - out.minimizers[n - 2]).norm() <= 1e-9 * h;
  return out;
}

struct ExtractedControl {
  ControlFieldPair controls;
  double duality_residual = 0.0;  // max relative, over unclamped nodes
  int clamped_nodes = 0;
};

/// xi_k = grad_p H_k(x, central grad u_k), clamped componentwise to xi_max.
inline ExtractedControl extract_control(const ProblemSpec& problem, const ErgodicSolution& s,
                                        std::optional<double> xi_max = std::nullopt) {
  const double cap = xi_max ? *xi_max : (s.xi_max > 0.0 ? s.xi_max : control_cap(problem, s.grid));
  const auto& spec = problem.hamiltonians;
  ExtractedControl out;
  out.controls = ControlFieldPair(s.grid.dimension(), s.grid.size());
  for (int k = 0; k < 2; ++k) {
    const StateIndex st(k + 1);
    const Eigen::MatrixXd grad = gradient_central(s.grid, s.u[k]);
    for (int node = 0; node < s.grid.size(); ++node) {
      const Vec x = s.grid.coordinate(node);
      const Vec p = grad.col(node);
      Vec xi = hamiltonian_grad_p(spec, st, x, p);
      if (xi.cwiseAbs().maxCoeff() > cap) {
        xi = xi.cwiseMax(-cap).cwiseMin(cap);
        ++out.clamped_nodes;
      } else {
        const double h = detail::untruncated_h(spec[st], x, p);
        out.duality_residual =
            std::max(out.duality_residual, std::abs(duality_gap(spec, st, x, p)) / (1.0 + std::abs(h)));
      }
      out.controls.xi[k].col(node) = xi;
    }
  }
  return out;
}

}  // namespace ergohjb
