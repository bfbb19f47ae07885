#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "ergohjb/coefficient.hpp"
#include "ergohjb/errors.hpp"

namespace ergohjb {

/// Regime label k in {1,2}.
class StateIndex {
 public:
  constexpr explicit StateIndex(int k) : k_(k) {
    if (k != 1 && k != 2) throw ParameterError("state index must be 1 or 2, got " + std::to_string(k));
  }
  constexpr int value() const { return k_; }
  constexpr int index() const { return k_ - 1; }
  constexpr StateIndex other() const { return StateIndex(3 - k_); }
  friend constexpr bool operator==(StateIndex, StateIndex) = default;

 private:
  int k_;
};

/// Power-law Hamiltonian of one regime:
///   H(x,p) = (1/g) <p, a(x) p>^{g/2} + b(x).p
///   l(x,xi) = (1/g') <xi - b, a^{-1}(xi - b)>^{g'/2},  1/g + 1/g' = 1.
struct StateHamiltonian {
  double gamma = 2.0;
  MatrixField a = MatrixField::identity();
  VectorField b = VectorField::zero();

  double conjugate_gamma() const { return gamma / (gamma - 1.0); }
};

/// psi_n truncation of H, applied to regimes with gamma > 2 only.
struct Truncation {
  double level = 0.0;  // n
  double c1 = 1.0;     // lower bound: psi_n is defined on [-C1, inf)
};

struct HamiltonianSpec {
  std::array<StateHamiltonian, 2> states;
  std::optional<Truncation> truncation;

  const StateHamiltonian& operator[](StateIndex k) const { return states[k.index()]; }
  bool truncates(StateIndex k) const { return truncation.has_value() && (*this)[k].gamma > 2.0; }
};

/// Full system data: dimension, Hamiltonians, switching rates, sources, reference point.
struct ProblemSpec {
  int dimension = 1;
  HamiltonianSpec hamiltonians;
  std::array<CoefficientField, 2> alpha{CoefficientField::constant(1.0), CoefficientField::constant(1.0)};
  std::array<CoefficientField, 2> f{CoefficientField::constant(0.0), CoefficientField::constant(0.0)};
  Vec x_ref = Vec::Zero(1);

  const CoefficientField& rate(StateIndex k) const { return alpha[k.index()]; }
  const CoefficientField& source(StateIndex k) const { return f[k.index()]; }

  void validate() const {
    if (dimension != 1 && dimension != 2) throw ParameterError("dimension must be 1 or 2");
    if (x_ref.size() != dimension) throw ParameterError("x_ref dimension mismatch");
    for (const auto& s : hamiltonians.states) {
      if (!(s.gamma > 1.0) || !std::isfinite(s.gamma)) throw ParameterError("gamma must be > 1");
      if (!s.a.is_identity() && s.a.matrix().rows() != dimension)
        throw CoefficientError("metric dimension does not match problem dimension");
      if (!s.b.is_zero() && static_cast<int>(s.b.components().size()) != dimension)
        throw CoefficientError("drift dimension does not match problem dimension");
    }
    if (hamiltonians.truncation && !(hamiltonians.truncation->level > 0.0))
      throw ParameterError("truncation level must be positive");
  }
};

// ---------------------------------------------------------------------------
// Truncation psi_n (C^{1,1}, increasing, psi_n(x) <= x).

inline double truncation_psi(double n, double gamma, double x) {
  if (x <= n) return x;
  return n - 0.5 * gamma + 0.5 * gamma * std::pow(x - n + 1.0, 2.0 / gamma);
}

inline double truncation_psi_prime(double n, double gamma, double x) {
  if (x <= n) return 1.0;
  return std::pow(x - n + 1.0, 2.0 / gamma - 1.0);
}

/// Constants (eta1, eta2) with psi_n(x) >= eta1 |x|^{2/gamma} - eta2 on [-C1, inf), independent of n >= 1.
inline std::pair<double, double> truncation_sandwich_constants(double gamma, double c1) {
  const double e2 = std::max(1.0 + std::pow(c1, 2.0 / gamma) + c1, 0.5 * gamma);
  return {1.0, e2};
}

// ---------------------------------------------------------------------------
// Hamiltonian / Lagrangian evaluation.

namespace detail {

inline double untruncated_h(const StateHamiltonian& s, const Vec& x, const Vec& p) {
  const double q = s.a.quad(p);
  if (!(q >= 0.0)) throw CoefficientError("metric is not positive semidefinite at evaluation point");
  const double power = q == 0.0 ? 0.0 : std::pow(q, 0.5 * s.gamma) / s.gamma;
  return s.b.is_zero() ? power : power + s.b.value(x).dot(p);
}

inline Vec untruncated_grad(const StateHamiltonian& s, const Vec& x, const Vec& p) {
  const double q = s.a.quad(p);
  Vec g = Vec::Zero(p.size());
  // q^{g/2-1} a p -> 0 as p -> 0 for every g > 1.
  if (q > 0.0) g = std::pow(q, 0.5 * s.gamma - 1.0) * s.a.apply(p);
  if (!s.b.is_zero()) g += s.b.value(x);
  return g;
}

}  // namespace detail

inline double hamiltonian_eval(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& p) {
  const double h = detail::untruncated_h(spec[k], x, p);
  if (spec.truncates(k)) return truncation_psi(spec.truncation->level, spec[k].gamma, h);
  return h;
}

/// grad_p H. For truncated regimes the chain rule psi_n'(H) grad_p H is returned.
inline Vec hamiltonian_grad_p(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& p) {
  Vec g = detail::untruncated_grad(spec[k], x, p);
  if (spec.truncates(k)) {
    const double h = detail::untruncated_h(spec[k], x, p);
    g *= truncation_psi_prime(spec.truncation->level, spec[k].gamma, h);
  }
  return g;
}

inline double lagrangian_eval(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& xi) {
  const auto& s = spec[k];
  const Vec d = s.b.is_zero() ? xi : Vec(xi - s.b.value(x));
  const double q = s.a.inv_quad(d);
  if (q <= 0.0) return 0.0;
  const double gp = s.conjugate_gamma();
  return std::pow(q, 0.5 * gp) / gp;
}

/// grad_xi l(x, xi); zero at xi = b(x).
inline Vec lagrangian_grad(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& xi) {
  const auto& s = spec[k];
  const Vec d = s.b.is_zero() ? xi : Vec(xi - s.b.value(x));
  const double q = s.a.inv_quad(d);
  if (q <= 0.0) return Vec::Zero(xi.size());
  return std::pow(q, 0.5 * s.conjugate_gamma() - 1.0) * s.a.inv_apply(d);
}

/// H(x,p) - (p.xi* - l(x,xi*)) at xi* = grad_p H(x,p), using the untruncated Hamiltonian.
inline double duality_gap(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& p) {
  const auto& s = spec[k];
  const Vec xi = detail::untruncated_grad(s, x, p);
  const double h = detail::untruncated_h(s, x, p);
  return h - (p.dot(xi) - lagrangian_eval(spec, k, x, xi));
}

inline HamiltonianSpec truncate_hamiltonian(const HamiltonianSpec& spec, double n, double c1) {
  if (!(n > 0.0)) throw ParameterError("truncation level n must be positive");
  if (!(c1 > 0.0)) throw ParameterError("truncation lower bound C1 must be positive");
  HamiltonianSpec out = spec;
  const bool any = spec.states[0].gamma > 2.0 || spec.states[1].gamma > 2.0;
  if (any) out.truncation = Truncation{n, c1};
  else out.truncation.reset();
  return out;
}

}  // namespace ergohjb
