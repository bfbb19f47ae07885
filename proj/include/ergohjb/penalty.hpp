#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "ergohjb/grid.hpp"
#include "ergohjb/model.hpp"

namespace ergohjb {

/// Wall source that confines the minimizer: f_k + min(cap, rho(R^2 - |x|_inf^2)^alpha_exp).
/// Zero exponents select defaults from the admissible bracket; an absent cap selects
/// 1e6 * (1 + max |f| over the box).
struct PenaltyParams {
  bool enabled = true;
  double beta = 0.0;
  double alpha_exp = 0.0;
  std::optional<double> cap;
};

/// rho(t) = 1/t on (0, 1/2), a C^1 Hermite bridge decreasing to 0 on [1/2, 1], 0 beyond.
inline double penalty_rho(double t) {
  if (t <= 0.0) return std::numeric_limits<double>::infinity();
  if (t < 0.5) return 1.0 / t;
  if (t >= 1.0) return 0.0;
  // Matches value 2 and slope -4 at t = 1/2, value and slope 0 at t = 1.
  const double s = (t - 0.5) / 0.5;
  return 2.0 * (s - 1.0) * (s - 1.0) * (s + 1.0);
}

inline double min_gamma_wedge2(const ProblemSpec& p) {
  return std::min({p.hamiltonians.states[0].gamma, p.hamiltonians.states[1].gamma, 2.0});
}

/// Throws unless beta > max(2, g1, g2), (beta+1)(g_i ^ 2) > beta + 2 and beta < alpha < (beta+1)(g_i ^ 2).
inline void validate_penalty_exponents(const ProblemSpec& p, double beta, double alpha_exp) {
  const double g1 = p.hamiltonians.states[0].gamma, g2 = p.hamiltonians.states[1].gamma;
  const double gw = min_gamma_wedge2(p);
  const double upper = (beta + 1.0) * gw;
  std::ostringstream os;
  if (!(beta > std::max({2.0, g1, g2}))) {
    os << "penalty exponent beta=" << beta << " must exceed max(2, gamma_1, gamma_2)="
       << std::max({2.0, g1, g2});
    throw ParameterError(os.str());
  }
  if (!(upper > beta + 2.0)) {
    os << "penalty exponent beta=" << beta << " must satisfy (beta+1)(gamma^2) > beta+2";
    throw ParameterError(os.str());
  }
  if (!(alpha_exp > beta && alpha_exp < upper)) {
    os << "penalty exponent alpha=" << alpha_exp << " outside the admissible bracket β<α<(β+1)(γ∧2) = (" << beta
       << ", " << upper << ")";
    throw ParameterError(os.str());
  }
}

/// Fills defaulted exponents: beta = max(2, g1, g2, (2-g)/(g-1)) + 1 with g = min(g1, g2, 2),
/// alpha at the midpoint of the admissible bracket.
inline PenaltyParams resolve_penalty(const ProblemSpec& p, PenaltyParams params) {
  if (!params.enabled) return params;
  const double gw = min_gamma_wedge2(p);
  if (params.beta == 0.0) {
    const double g1 = p.hamiltonians.states[0].gamma, g2 = p.hamiltonians.states[1].gamma;
    params.beta = std::max({2.0, g1, g2, (2.0 - gw) / (gw - 1.0)}) + 1.0;
  }
  if (params.alpha_exp == 0.0) params.alpha_exp = 0.5 * (params.beta + (params.beta + 1.0) * gw);
  validate_penalty_exponents(p, params.beta, params.alpha_exp);
  if (params.cap && !(*params.cap > 0.0)) throw ParameterError("penalty cap must be positive");
  return params;
}

inline double max_abs_source(const ProblemSpec& p, const Grid& grid) {
  double m = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node)
      m = std::max(m, std::abs(p.f[k].value(grid.coordinate(node))));
  return m;
}

/// Penalty term alone (identical for both regimes).
inline Eigen::VectorXd penalty_field(const ProblemSpec& p, const Grid& grid, const PenaltyParams& raw) {
  Eigen::VectorXd pen = Eigen::VectorXd::Zero(grid.size());
  if (!raw.enabled) return pen;
  const PenaltyParams params = resolve_penalty(p, raw);
  const double cap = params.cap ? *params.cap : 1e6 * (1.0 + max_abs_source(p, grid));
  const double R = grid.half_width();
  for (int node = 0; node < grid.size(); ++node) {
    const double xinf = grid.coordinate(node).cwiseAbs().maxCoeff();
    const double t = R * R - xinf * xinf;
    const double rho = penalty_rho(t);
    pen[node] = rho == 0.0 ? 0.0 : std::min(cap, std::pow(rho, params.alpha_exp));
  }
  return pen;
}

/// f_{k,alpha} on the grid.
inline GridFieldPair penalty_source(const ProblemSpec& p, const Grid& grid, const PenaltyParams& params) {
  const Eigen::VectorXd pen = penalty_field(p, grid, params);
  GridFieldPair out(grid.size());
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node) out[k][node] = p.f[k].value(grid.coordinate(node)) + pen[node];
  return out;
}

/// Gradient bound G_k = (1 + sum_i sup f_i+^2 + sum_i sup |grad f_i|^{2g/(2g-1)})^{1/(2 g_k)} from the
/// unpenalized sources, and xi_max = 2 max_{k,x} sup_{|p| = G_k} |grad_p H_k(x, p)|.
inline double control_cap(const ProblemSpec& p, const Grid& grid) {
  double sum = 1.0;
  for (int k = 0; k < 2; ++k) {
    const double g = p.hamiltonians.states[k].gamma;
    double fplus = 0.0, grad = 0.0;
    for (int node = 0; node < grid.size(); ++node) {
      const Vec x = grid.coordinate(node);
      fplus = std::max(fplus, std::max(0.0, p.f[k].value(x)));
      grad = std::max(grad, p.f[k].gradient(x).norm());
    }
    sum += fplus * fplus + std::pow(grad, 2.0 * g / (2.0 * g - 1.0));
  }
  double cap = 0.0;
  for (int k = 0; k < 2; ++k) {
    const auto& s = p.hamiltonians.states[k];
    const double G = std::pow(sum, 1.0 / (2.0 * s.gamma));
    const double lmax = s.a.is_identity() ? 1.0 : s.a.max_eigenvalue();
    const double lmin = s.a.is_identity() ? 1.0 : s.a.min_eigenvalue();
    // |q^{g/2-1} a p| <= (l |p|^2)^{g/2-1} lmax |p| with l = lmax for g >= 2, lmin otherwise.
    const double l = s.gamma >= 2.0 ? lmax : lmin;
    const double power = std::pow(l * G * G, 0.5 * s.gamma - 1.0) * lmax * G;
    double drift = 0.0;
    if (!s.b.is_zero())
      for (int node = 0; node < grid.size(); ++node) drift = std::max(drift, s.b.value(grid.coordinate(node)).norm());
    cap = std::max(cap, power + drift);
  }
  return 2.0 * cap;
}

}  // namespace ergohjb
