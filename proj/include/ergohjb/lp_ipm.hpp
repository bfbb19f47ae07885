#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ergohjb/errors.hpp"

namespace ergohjb {

struct LpOptions {
  double feasibility_tol = 1e-8;  // relative primal and dual residuals
  double gap_tol = 1e-9;          // relative duality gap
  int max_iters = 200;
  /// Return the best iterate instead of throwing when the tolerances are not reached
  /// (used ahead of a crossover step).
  bool allow_inexact = false;
};

struct LpResult {
  double value = 0.0;  // c.x
  Eigen::VectorXd x;   // primal
  Eigen::VectorXd y;   // equality duals
  Eigen::VectorXd s;   // reduced costs
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
  bool optimal = false;  // tolerances met
};

namespace detail {

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

/// Factorization of A D A^T with a small diagonal shift for rank-deficient steps.
class NormalEquations {
 public:
  explicit NormalEquations(const Eigen::SparseMatrix<double>& a) : a_(a), at_(a.transpose()) {}

  void factor(const Eigen::VectorXd& d) {
    m_ = a_ * d.asDiagonal() * at_;
    Eigen::SparseMatrix<double> m = m_;
    double dmax = 0.0;
    for (int i = 0; i < m.rows(); ++i) dmax = std::max(dmax, m.coeff(i, i));
    const double shift = 1e-15 * std::max(dmax, 1.0);
    for (int i = 0; i < m.rows(); ++i) m.coeffRef(i, i) += shift;
    if (!analyzed_) {
      ldlt_.analyzePattern(m);
      analyzed_ = true;
    }
    ldlt_.factorize(m);
    if (ldlt_.info() != Eigen::Success) throw LpError("normal-equation factorization failed");
  }

  /// Solve with iterative refinement against the unshifted matrix.
  Eigen::VectorXd solve(const Eigen::VectorXd& r) const {
    Eigen::VectorXd y = ldlt_.solve(r);
    const double rn = r.norm();
    for (int it = 0; it < 8; ++it) {
      const Eigen::VectorXd res = r - m_ * y;
      if (res.norm() <= 1e-15 * rn) break;
      y += ldlt_.solve(res);
    }
    return y;
  }

 private:
  const Eigen::SparseMatrix<double>& a_;
  Eigen::SparseMatrix<double> at_;
  Eigen::SparseMatrix<double> m_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool analyzed_ = false;
};

}  // namespace detail

/// Mehrotra predictor-corrector primal-dual interior point method for
///   min c.x  s.t.  A x = b,  x >= 0.
/// A must have full row rank.
inline LpResult solve_standard_lp(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b,
                                  const Eigen::VectorXd& c, const LpOptions& opt = {}) {
  const Eigen::Index m = a.rows(), n = a.cols();
  if (b.size() != m || c.size() != n) throw LpError("LP dimensions are inconsistent");
  const Eigen::SparseMatrix<double> at = a.transpose();
  detail::NormalEquations ne(a);

  // Mehrotra starting point.
  ne.factor(Eigen::VectorXd::Ones(n));
  Eigen::VectorXd x = at * ne.solve(b);
  Eigen::VectorXd y = ne.solve(a * c);
  Eigen::VectorXd s = c - at * y;
  x.array() += std::max(-1.5 * x.minCoeff(), 0.0);
  s.array() += std::max(-1.5 * s.minCoeff(), 0.0);
  {
    const double xs = x.dot(s);
    const double dx = 0.5 * xs / std::max(s.sum(), 1e-300);
    const double ds = 0.5 * xs / std::max(x.sum(), 1e-300);
    x.array() += dx;
    s.array() += ds;
    if (!(x.minCoeff() > 0.0)) x.array() += 1.0;
    if (!(s.minCoeff() > 0.0)) s.array() += 1.0;
  }

  const double bnorm = 1.0 + b.lpNorm<Eigen::Infinity>();
  const double cnorm = 1.0 + c.lpNorm<Eigen::Infinity>();
  LpResult r, best;
  double best_merit = std::numeric_limits<double>::infinity();
  auto finish_inexact = [&](const char* why) {
    if (opt.allow_inexact && best.x.size() == n) return best;
    std::ostringstream os;
    os << "interior point method " << why << " (primal " << r.primal_residual << ", dual " << r.dual_residual
       << ", gap " << r.gap << "); the LP may be infeasible - enlarge the control mesh or box";
    throw LpError(os.str());
  };
  for (int it = 1; it <= opt.max_iters; ++it) {
    const Eigen::VectorXd rp = b - a * x;
    const Eigen::VectorXd rd = c - at * y - s;
    const double pval = c.dot(x), dval = b.dot(y);
    r.primal_residual = rp.lpNorm<Eigen::Infinity>() / bnorm;
    r.dual_residual = rd.lpNorm<Eigen::Infinity>() / cnorm;
    r.gap = std::abs(pval - dval) / (1.0 + std::abs(pval));
    r.iterations = it - 1;
    r.value = pval;
    const double merit = std::max({r.primal_residual, r.dual_residual, r.gap});
    if (merit < best_merit) {
      best_merit = merit;
      best = r;
      best.x = x;
      best.y = y;
      best.s = s;
    }
    if (r.primal_residual <= opt.feasibility_tol && r.dual_residual <= opt.feasibility_tol && r.gap <= opt.gap_tol) {
      best.optimal = true;
      return best;
    }
    // Complementarity exhausted without feasibility: further steps only amplify rounding.
    if (x.dot(s) / static_cast<double>(n) < 1e-15 * (1.0 + std::abs(pval))) return finish_inexact("stalled");
    if (x.lpNorm<Eigen::Infinity>() > 1e14)
      throw LpError("LP appears unbounded (primal iterates diverge): check cost coercivity");
    if (y.lpNorm<Eigen::Infinity>() > 1e14 * cnorm)
      throw LpError("LP appears infeasible (dual iterates diverge): enlarge the control mesh or the box");

    const Eigen::VectorXd d = x.cwiseQuotient(s);
    ne.factor(d);
    const double mu = x.dot(s) / static_cast<double>(n);

    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& ds) {
      const Eigen::VectorXd sinv_rc = rc.cwiseQuotient(s);
      const Eigen::VectorXd rhs = rp - a * sinv_rc + a * d.cwiseProduct(rd);
      dy = ne.solve(rhs);
      ds = rd - at * dy;
      dx = sinv_rc - d.cwiseProduct(ds);
    };

    Eigen::VectorXd dxa, dya, dsa;
    direction(-x.cwiseProduct(s), dxa, dya, dsa);
    const double ap_aff = detail::max_step(x, dxa), ad_aff = detail::max_step(s, dsa);
    const double mu_aff = (x + ap_aff * dxa).dot(s + ad_aff * dsa) / static_cast<double>(n);
    const double sigma = std::pow(mu_aff / mu, 3.0);

    Eigen::VectorXd dx, dy, ds;
    const Eigen::VectorXd rc =
        (-x.cwiseProduct(s) - dxa.cwiseProduct(dsa)).array() + sigma * mu;
    direction(rc, dx, dy, ds);
    const double ap = std::min(1.0, 0.995 * detail::max_step(x, dx));
    const double ad = std::min(1.0, 0.995 * detail::max_step(s, ds));
    x += ap * dx;
    y += ad * dy;
    s += ad * ds;
    if (!x.allFinite() || !y.allFinite() || !s.allFinite()) throw LpError("interior point iterates became non-finite");
  }
  return finish_inexact("did not converge");
}

}  // namespace ergohjb
