#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "ergohjb/generator.hpp"
#include "ergohjb/model.hpp"

namespace ergohjb {

/// One-sided and central differences of u along one axis at one node.
struct AxisDifferences {
  bool boundary = false;  // a neighbor is missing; advection is dropped on this axis
  double minus = 0.0;
  double central = 0.0;
  double plus = 0.0;
};

inline AxisDifferences axis_differences(const Grid& grid, const Eigen::VectorXd& u, int node, int axis) {
  AxisDifferences d;
  const int up = grid.neighbor(node, axis, +1);
  const int dn = grid.neighbor(node, axis, -1);
  if (up < 0 || dn < 0) {
    d.boundary = true;
    return d;
  }
  const double h = grid.spacing();
  d.minus = (u[node] - u[dn]) / h;
  d.plus = (u[up] - u[node]) / h;
  d.central = (u[up] - u[dn]) / (2.0 * h);
  return d;
}

/// Maximizer of the discrete Hamiltonian  max_xi [ sum_j xi_j D^{s(xi_j)}_j u - l(x, xi) ]
/// over the capped box |xi_j| <= xi_max, where s(xi_j) is the stencil the assembler uses.
struct DiscreteHamiltonian {
  Vec xi;
  std::array<Stencil, 2> stencil{Stencil::None, Stencil::None};
  double value = 0.0;
};

namespace detail {

struct StencilRegion {
  double lo;
  double hi;
  double slope;
  Stencil stencil;
};

inline int stencil_regions(const AxisDifferences& d, AdvectionScheme scheme, double h, double xi_max,
                           StencilRegion* out) {
  if (d.boundary) {
    out[0] = {-xi_max, xi_max, 0.0, Stencil::None};
    return 1;
  }
  if (scheme == AdvectionScheme::Hybrid) {
    const double peclet = 2.0 / h;
    if (xi_max <= peclet) {
      out[0] = {-xi_max, xi_max, d.central, Stencil::Central};
      return 1;
    }
    out[0] = {-peclet, peclet, d.central, Stencil::Central};
    out[1] = {peclet, xi_max, d.minus, Stencil::Backward};
    out[2] = {-xi_max, -peclet, d.plus, Stencil::Forward};
    return 3;
  }
  out[0] = {0.0, xi_max, d.minus, Stencil::Backward};
  out[1] = {-xi_max, 0.0, d.plus, Stencil::Forward};
  return 2;
}

/// max over the box [lo, hi] of p.xi - l(x, xi); concave, so coordinate ascent from the
/// clamped unconstrained maximizer converges to the box maximizer.
inline Vec maximize_on_box(const HamiltonianSpec& spec, StateIndex k, const Vec& x, const Vec& p, const Vec& lo,
                           const Vec& hi) {
  Vec xi = detail::untruncated_grad(spec[k], x, p);
  bool inside = true;
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    if (xi[j] < lo[j] || xi[j] > hi[j]) inside = false;
    xi[j] = std::clamp(xi[j], lo[j], hi[j]);
  }
  if (inside || xi.size() == 1) return xi;

  for (int sweep = 0; sweep < 200; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index j = 0; j < xi.size(); ++j) {
      auto slope = [&](double t) {
        Vec trial = xi;
        trial[j] = t;
        return p[j] - lagrangian_grad(spec, k, x, trial)[j];
      };
      double t;
      if (slope(lo[j]) <= 0.0) {
        t = lo[j];
      } else if (slope(hi[j]) >= 0.0) {
        t = hi[j];
      } else {
        double a = lo[j], b = hi[j];
        for (int it = 0; it < 100 && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
          const double m = 0.5 * (a + b);
          (slope(m) > 0.0 ? a : b) = m;
        }
        t = 0.5 * (a + b);
      }
      moved = std::max(moved, std::abs(t - xi[j]));
      xi[j] = t;
    }
    if (moved <= 1e-14 * (1.0 + xi.cwiseAbs().maxCoeff())) break;
  }
  return xi;
}

}  // namespace detail

inline DiscreteHamiltonian maximize_discrete_hamiltonian(const HamiltonianSpec& spec, StateIndex k, const Vec& x,
                                                         const AxisDifferences* diffs, int dim,
                                                         AdvectionScheme scheme, double h, double xi_max) {
  detail::StencilRegion regions[2][3];
  int count[2] = {1, 1};
  for (int a = 0; a < dim; ++a) count[a] = detail::stencil_regions(diffs[a], scheme, h, xi_max, regions[a]);

  DiscreteHamiltonian best;
  best.value = -std::numeric_limits<double>::infinity();
  Vec p(dim), lo(dim), hi(dim);
  for (int r0 = 0; r0 < count[0]; ++r0) {
    for (int r1 = 0; r1 < (dim == 2 ? count[1] : 1); ++r1) {
      const int pick[2] = {r0, r1};
      for (int a = 0; a < dim; ++a) {
        const auto& reg = regions[a][pick[a]];
        p[a] = reg.slope;
        lo[a] = reg.lo;
        hi[a] = reg.hi;
      }
      const Vec xi = detail::maximize_on_box(spec, k, x, p, lo, hi);
      const double v = p.dot(xi) - lagrangian_eval(spec, k, x, xi);
      if (v > best.value) {
        best.value = v;
        best.xi = xi;
        for (int a = 0; a < dim; ++a) best.stencil[a] = regions[a][pick[a]].stencil;
      }
    }
  }
  return best;
}

/// Discrete Hamiltonians over all nodes of one regime field.
struct ImprovementResult {
  Policy policy;
  std::array<Eigen::VectorXd, 2> hamiltonian;  // psi_n(H_h) when truncated
  std::array<Eigen::VectorXd, 2> raw_hamiltonian;
};

inline ImprovementResult improve_policy(const Grid& grid, const ProblemSpec& problem, const GridFieldPair& u,
                                        AdvectionScheme scheme, double xi_max) {
  const int n = grid.size();
  const int dim = grid.dimension();
  ImprovementResult out;
  out.policy = Policy(dim, n);
  const auto& spec = problem.hamiltonians;
  for (int k = 0; k < 2; ++k) {
    const StateIndex st(k + 1);
    out.hamiltonian[k].resize(n);
    out.raw_hamiltonian[k].resize(n);
    const bool trunc = spec.truncates(st);
    if (trunc) out.policy.scale[k].resize(n);
    for (int node = 0; node < n; ++node) {
      AxisDifferences d[2];
      for (int a = 0; a < dim; ++a) d[a] = axis_differences(grid, u[k], node, a);
      const Vec x = grid.coordinate(node);
      const auto best = maximize_discrete_hamiltonian(spec, st, x, d, dim, scheme, grid.spacing(), xi_max);
      out.policy.controls.xi[k].col(node) = best.xi;
      for (int a = 0; a < dim; ++a) out.policy.stencil[k][node * dim + a] = best.stencil[a];
      out.raw_hamiltonian[k][node] = best.value;
      if (trunc) {
        const double nlev = spec.truncation->level;
        out.hamiltonian[k][node] = truncation_psi(nlev, spec[st].gamma, best.value);
        out.policy.scale[k][node] = truncation_psi_prime(nlev, spec[st].gamma, best.value);
      } else {
        out.hamiltonian[k][node] = best.value;
      }
    }
  }
  return out;
}

}  // namespace ergohjb
