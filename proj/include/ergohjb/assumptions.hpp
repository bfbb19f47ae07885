#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ergohjb/grid.hpp"
#include "ergohjb/model.hpp"

namespace ergohjb {

/// Optional user-declared bounds; a measured constant above its bound is a violation.
struct AssumptionBounds {
  std::optional<double> upsilon_alpha0;
  std::optional<double> c1;
  std::optional<double> c2;
  std::optional<double> c3;
};

struct AssumptionViolation {
  std::string check;
  int state = 1;
  int node = -1;
  Vec x;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Constants measured on the grid nodes.
///  upsilon_alpha0: smallest v >= 1 with 1/v <= alpha_k <= v and |grad alpha_k| <= v.
///  c1:       smallest C with C^-1 |p|^g - C <= H <= C (|p|^g + 1) on sampled (x, p).
///  c1_tilde: smallest C with |grad_p H| <= C (1 + |p|^{g-1}) on the same samples.
///  c2:       smallest C with |grad f| <= C (1 + |f|^{2 - 1/g}).
///  c3:       sup_x sup_{B_1(x)} |f| / (|f(x)| + 1).
struct AssumptionReport {
  double upsilon_alpha0 = 1.0;
  double c1 = 1.0;
  double c1_tilde = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  bool rates_positive = true;
  bool coercive = true;        // min of f_k over the outer shell exceeds its min over the inner box
  bool trig_condition = true;  // (b1 + 2 b2 - 1) g / (2g - 1) <= b1 for every trig-modulated term
  bool passed = true;
  std::vector<AssumptionViolation> violations;
};

namespace detail {

inline std::vector<Vec> sample_directions(int dim) {
  std::vector<Vec> d;
  if (dim == 1) {
    d.push_back(Vec::Constant(1, 1.0));
    d.push_back(Vec::Constant(1, -1.0));
  } else {
    for (int i = 0; i < 32; ++i) {
      Vec v(2);
      v << std::cos(i * std::numbers::pi / 16.0), std::sin(i * std::numbers::pi / 16.0);
      d.push_back(v);
    }
  }
  return d;
}

}  // namespace detail

inline AssumptionReport validate_assumptions(const ProblemSpec& problem, const Grid& box,
                                             const AssumptionBounds& bounds = {}) {
  problem.validate();
  if (problem.dimension != box.dimension()) throw ParameterError("problem and grid dimensions differ");
  AssumptionReport rep;
  const int n = box.size();
  const auto& spec = problem.hamiltonians;

  // Switching rates.
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < n; ++node) {
      const Vec x = box.coordinate(node);
      const double a = problem.alpha[k].value(x);
      if (!(a > 0.0)) {
        rep.rates_positive = false;
        rep.violations.push_back({"alpha_positive", k + 1, node, x, a, 0.0});
        continue;
      }
      rep.upsilon_alpha0 = std::max({rep.upsilon_alpha0, a, 1.0 / a, problem.alpha[k].gradient(x).norm()});
    }

  // Growth constants of H on sampled momenta |p| in {0, 1/8, ..., 16} (every node in 1D, a strided
  // subset in 2D).
  const auto dirs = detail::sample_directions(box.dimension());
  std::vector<double> mags;
  for (int i = 0; i <= 128; ++i) mags.push_back(0.125 * i);
  const int stride = box.dimension() == 1 ? 1 : std::max(1, box.nodes_per_axis() / 20);
  for (int k = 0; k < 2; ++k) {
    const StateIndex st(k + 1);
    const double g = spec[st].gamma;
    for (int node = 0; node < n; ++node) {
      bool take = true;
      for (int a = 0; a < box.dimension(); ++a) take = take && box.axis_index(node, a) % stride == 0;
      if (!take) continue;
      const Vec x = box.coordinate(node);
      for (const auto& e : dirs)
        for (const double m : mags) {
          const Vec p = m * e;
          const double h = hamiltonian_eval(spec, st, x, p);
          const double pg = std::pow(m, g);
          rep.c1 = std::max(rep.c1, h / (pg + 1.0));
          rep.c1 = std::max(rep.c1, 0.5 * (-h + std::sqrt(h * h + 4.0 * pg)));
          rep.c1_tilde =
              std::max(rep.c1_tilde, hamiltonian_grad_p(spec, st, x, p).norm() / (1.0 + std::pow(m, g - 1.0)));
        }
    }
  }

  // Source constants.
  const double h = box.spacing();
  const int reach = static_cast<int>(std::floor(1.0 / h + 1e-9));
  for (int k = 0; k < 2; ++k) {
    const double g = spec.states[k].gamma;
    Eigen::VectorXd fv(n);
    for (int node = 0; node < n; ++node) fv[node] = problem.f[k].value(box.coordinate(node));
    for (int node = 0; node < n; ++node) {
      const Vec x = box.coordinate(node);
      const double af = std::abs(fv[node]);
      const double c2 = problem.f[k].gradient(x).norm() / (1.0 + std::pow(af, 2.0 - 1.0 / g));
      rep.c2 = std::max(rep.c2, c2);
      if (bounds.c2 && c2 > *bounds.c2)
        rep.violations.push_back({"F1", k + 1, node, x, problem.f[k].gradient(x).norm(),
                                  *bounds.c2 * (1.0 + std::pow(af, 2.0 - 1.0 / g))});
      double sup = 0.0;
      const int i0 = box.axis_index(node, 0);
      const int i1 = box.dimension() == 2 ? box.axis_index(node, 1) : 0;
      for (int d1 = box.dimension() == 2 ? -reach : 0; d1 <= (box.dimension() == 2 ? reach : 0); ++d1)
        for (int d0 = -reach; d0 <= reach; ++d0) {
          if (d0 * d0 + d1 * d1 > reach * reach) continue;
          const int j0 = i0 + d0, j1 = i1 + d1;
          if (j0 < 0 || j0 >= box.nodes_per_axis() || j1 < 0 || j1 >= box.nodes_per_axis()) continue;
          sup = std::max(sup, std::abs(fv[box.node_of(j0, j1)]));
        }
      const double c3 = sup / (af + 1.0);
      rep.c3 = std::max(rep.c3, c3);
      if (bounds.c3 && c3 > *bounds.c3) rep.violations.push_back({"F2", k + 1, node, x, sup, *bounds.c3 * (af + 1.0)});
    }

    // Coercivity: outer shell |x|_inf >= 3R/4 against the inner box |x|_inf <= R/4.
    double inner = std::numeric_limits<double>::infinity(), outer = inner;
    for (int node = 0; node < n; ++node) {
      const double r = box.coordinate(node).cwiseAbs().maxCoeff();
      if (r <= 0.25 * box.half_width() + 1e-12) inner = std::min(inner, fv[node]);
      if (r >= 0.75 * box.half_width() - 1e-12) outer = std::min(outer, fv[node]);
    }
    if (!(outer > inner)) rep.coercive = false;

    for (const auto& t : problem.f[k].term_list())
      if (const auto* tm = std::get_if<terms::TrigModulatedPower>(&t)) {
        const double lhs = (tm->beta1 + 2.0 * tm->beta2 - 1.0) * g / (2.0 * g - 1.0);
        if (!(lhs <= tm->beta1 + 1e-12)) {
          rep.trig_condition = false;
          rep.violations.push_back({"trig_exponents", k + 1, -1, Vec::Zero(box.dimension()), lhs, tm->beta1});
        }
      }
  }

  if (bounds.upsilon_alpha0 && rep.upsilon_alpha0 > *bounds.upsilon_alpha0)
    rep.violations.push_back({"EA1.1", 0, -1, Vec::Zero(box.dimension()), rep.upsilon_alpha0, *bounds.upsilon_alpha0});
  if (bounds.c1 && rep.c1 > *bounds.c1)
    rep.violations.push_back({"H1", 0, -1, Vec::Zero(box.dimension()), rep.c1, *bounds.c1});
  rep.passed = rep.violations.empty();
  return rep;
}

}  // namespace ergohjb
