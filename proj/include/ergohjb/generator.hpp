#pragma once

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include "ergohjb/grid.hpp"
#include "ergohjb/model.hpp"

namespace ergohjb {

/// How the advection term xi.grad u is differenced.
///  - Hybrid: central on axis j while |xi_j| <= 2/h (cell Peclet <= 1), upwind beyond.
///  - Upwind: backward difference for xi_j >= 0, forward for xi_j < 0.
/// Both keep every off-diagonal entry <= 0.
enum class AdvectionScheme { Hybrid, Upwind };

enum class Stencil : std::uint8_t { None, Central, Backward, Forward };

inline Stencil select_stencil(AdvectionScheme scheme, double xi, double h) {
  if (scheme == AdvectionScheme::Hybrid && std::abs(xi) <= 2.0 / h) return Stencil::Central;
  return xi < 0.0 ? Stencil::Forward : Stencil::Backward;
}

/// A frozen control field together with the stencil used for each component and an
/// optional per-node multiplier on the advection coefficient (used by the Newton
/// linearization of truncated Hamiltonians; empty means 1).
struct Policy {
  ControlFieldPair controls;
  std::array<std::vector<Stencil>, 2> stencil;  // [node * N + axis]
  std::array<Eigen::VectorXd, 2> scale;

  Policy() = default;
  Policy(int dimension, int nodes) : controls(dimension, nodes) {
    for (auto& s : stencil) s.assign(static_cast<size_t>(dimension) * nodes, Stencil::Central);
  }

  static Policy from_controls(const Grid& grid, const ControlFieldPair& c, AdvectionScheme scheme) {
    Policy p(grid.dimension(), grid.size());
    p.controls = c;
    for (int k = 0; k < 2; ++k)
      for (int node = 0; node < grid.size(); ++node)
        for (int a = 0; a < grid.dimension(); ++a)
          p.stencil[k][node * grid.dimension() + a] = select_stencil(scheme, c.xi[k](a, node), grid.spacing());
    return p;
  }
};

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Sparse operator on stacked unknowns index = k * nodes + node:
///   -Lap_h u_k + xi_k . D u_k + alpha_k (u_k - u_j) + eps u_k
struct GeneratorMatrix {
  SparseMatrix matrix;
  double epsilon = 0.0;
  int nodes = 0;

  int rows() const { return static_cast<int>(matrix.rows()); }
};

struct MMatrixReport {
  bool ok = true;
  double max_off_diagonal = -std::numeric_limits<double>::infinity();
  double min_diagonal = std::numeric_limits<double>::infinity();
  double min_dominance_margin = std::numeric_limits<double>::infinity();  // diag - sum|off|
  int worst_row = -1;
};

namespace detail {

/// Emits one row (regime k, node) of the assembled operator for control xi with per-axis
/// stencils and advection multiplier `scale`. Reflecting closure on the box edge: the
/// Laplacian uses the mirrored ghost node, and advection along an axis whose neighbor is
/// missing is dropped (zero normal flux). `emit(col, value)` receives every entry; the
/// diagonal is emitted last.
template <class Emit>
void emit_generator_row(const Grid& grid, const ProblemSpec& problem, int k, int node, const Vec& xi,
                        const Stencil* stencil, double scale, double eps, Emit&& emit) {
  const int n = grid.size();
  const int dim = grid.dimension();
  const double h = grid.spacing();
  const double ih2 = 1.0 / (h * h);
  double diag = eps;
  for (int a = 0; a < dim; ++a) {
    const int up = grid.neighbor(node, a, +1);
    const int dn = grid.neighbor(node, a, -1);
    if (up >= 0 && dn >= 0) {
      diag += 2.0 * ih2;
      emit(k * n + up, -ih2);
      emit(k * n + dn, -ih2);
      const double c = xi[a] * scale;
      if (c == 0.0) continue;
      switch (stencil[a]) {
        case Stencil::Central:
          emit(k * n + up, c / (2.0 * h));
          emit(k * n + dn, -c / (2.0 * h));
          break;
        case Stencil::Backward:
          diag += c / h;
          emit(k * n + dn, -c / h);
          break;
        case Stencil::Forward:
          diag -= c / h;
          emit(k * n + up, c / h);
          break;
        case Stencil::None:
          break;
      }
    } else {
      const int nb = up >= 0 ? up : dn;
      diag += 2.0 * ih2;
      emit(k * n + nb, -2.0 * ih2);
    }
  }
  const double rate = problem.rate(StateIndex(k + 1)).value(grid.coordinate(node));
  diag += rate;
  emit((1 - k) * n + node, -rate);
  emit(k * n + node, diag);
}

inline void emit_generator_rows(const Grid& grid, const ProblemSpec& problem, const Policy& policy, double eps,
                                std::vector<Triplet>& out) {
  const int n = grid.size();
  const int dim = grid.dimension();
  out.reserve(out.size() + static_cast<size_t>(2 * n * (2 + 4 * dim)));
  for (int k = 0; k < 2; ++k) {
    const bool scaled = policy.scale[k].size() == n;
    for (int node = 0; node < n; ++node) {
      const int row = k * n + node;
      emit_generator_row(grid, problem, k, node, policy.controls.at(k, node), &policy.stencil[k][node * dim],
                         scaled ? policy.scale[k][node] : 1.0, eps,
                         [&](int col, double v) { out.emplace_back(row, col, v); });
    }
  }
}

}  // namespace detail

inline GeneratorMatrix assemble_policy(const Grid& grid, const ProblemSpec& problem, const Policy& policy,
                                       double eps) {
  if (!(eps >= 0.0)) throw ParameterError("discount must be >= 0");
  std::vector<Triplet> trips;
  detail::emit_generator_rows(grid, problem, policy, eps, trips);
  GeneratorMatrix g;
  g.nodes = grid.size();
  g.epsilon = eps;
  g.matrix.resize(2 * grid.size(), 2 * grid.size());
  g.matrix.setFromTriplets(trips.begin(), trips.end());
  g.matrix.makeCompressed();
  return g;
}

inline GeneratorMatrix assemble_generator(const Grid& grid, const ProblemSpec& problem,
                                          const ControlFieldPair& controls, double eps,
                                          AdvectionScheme scheme = AdvectionScheme::Hybrid) {
  if (controls.nodes() != grid.size() || controls.dimension() != grid.dimension())
    throw ParameterError("control field shape does not match grid");
  if (!controls.xi[0].allFinite() || !controls.xi[1].allFinite())
    throw ParameterError("control field has non-finite entries");
  return assemble_policy(grid, problem, Policy::from_controls(grid, controls, scheme), eps);
}

/// Off-diagonals <= 0, diagonal > 0, diag >= sum |off| (up to rounding).
inline MMatrixReport check_m_matrix(const GeneratorMatrix& g, double rel_tol = 1e-12) {
  MMatrixReport r;
  const auto rows = static_cast<size_t>(g.matrix.rows());
  std::vector<double> diag(rows, 0.0), off_abs(rows, 0.0), scale(rows, 0.0);
  std::vector<double> off_max(rows, -std::numeric_limits<double>::infinity());
  for (int col = 0; col < g.matrix.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(g.matrix, col); it; ++it) {
      const auto row = static_cast<size_t>(it.row());
      scale[row] = std::max(scale[row], std::abs(it.value()));
      if (it.row() == col) {
        diag[row] += it.value();
      } else {
        off_abs[row] += std::abs(it.value());
        off_max[row] = std::max(off_max[row], it.value());
      }
    }
  for (size_t row = 0; row < rows; ++row) {
    r.max_off_diagonal = std::max(r.max_off_diagonal, off_max[row]);
    r.min_diagonal = std::min(r.min_diagonal, diag[row]);
    const double margin = diag[row] - off_abs[row];
    r.min_dominance_margin = std::min(r.min_dominance_margin, margin);
    const bool bad = off_max[row] > rel_tol * scale[row] || !(diag[row] > 0.0) || margin < -rel_tol * scale[row];
    if (bad && r.ok) {
      r.ok = false;
      r.worst_row = static_cast<int>(row);
    }
  }
  return r;
}

/// Coordinate text format: "row col value" per line, 0-based.
inline void write_triplets(std::ostream& os, const SparseMatrix& m) {
  os.precision(17);
  os << "% " << m.rows() << " " << m.cols() << " " << m.nonZeros() << "\n";
  for (int col = 0; col < m.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(m, col); it; ++it) os << it.row() << " " << it.col() << " " << it.value() << "\n";
}

}  // namespace ergohjb
