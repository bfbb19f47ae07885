#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

#include "ergohjb/generator.hpp"
#include "ergohjb/grid.hpp"
#include "ergohjb/lp_ipm.hpp"
#include "ergohjb/model.hpp"

namespace ergohjb {

/// Control set shared by all nodes: signed magnitudes in 1D, zero plus magnitude x direction in 2D.
struct ControlMesh {
  int dimension = 1;
  std::vector<Vec> controls;

  int size() const { return static_cast<int>(controls.size()); }

  /// Index of the mesh control closest to xi.
  int nearest(const Vec& xi) const {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < size(); ++i) {
      const double d = (controls[i] - xi).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  }
};

/// 0, step, 2 step, ... below xi_max, then xi_max.
inline std::vector<double> uniform_magnitudes(double xi_max, double step) {
  if (!(xi_max > 0.0) || !(step > 0.0)) throw ParameterError("need xi_max > 0 and step > 0");
  std::vector<double> m;
  for (int i = 0;; ++i) {
    const double v = i * step;
    if (v >= xi_max * (1.0 - 1e-12)) break;
    m.push_back(v);
  }
  m.push_back(xi_max);
  return m;
}

inline ControlMesh build_control_mesh(int dimension, const std::vector<double>& magnitudes, int directions = 8) {
  if (dimension != 1 && dimension != 2) throw ParameterError("control mesh dimension must be 1 or 2");
  if (magnitudes.empty()) throw ParameterError("control mesh needs at least one magnitude");
  std::vector<double> mags = magnitudes;
  for (double v : mags)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("control magnitudes must be finite and >= 0");
  std::sort(mags.begin(), mags.end());
  mags.erase(std::unique(mags.begin(), mags.end()), mags.end());
  ControlMesh mesh;
  mesh.dimension = dimension;
  if (dimension == 1) {
    std::vector<double> values{0.0};
    for (double v : mags)
      if (v > 0.0) {
        values.push_back(-v);
        values.push_back(v);
      }
    std::sort(values.begin(), values.end());
    for (double v : values) mesh.controls.push_back(Vec::Constant(1, v));
  } else {
    mesh.controls.push_back(Vec::Zero(dimension));
    if (directions < 1) throw ParameterError("control mesh needs at least one direction");
    for (double v : mags) {
      if (v == 0.0) continue;
      for (int d = 0; d < directions; ++d) {
        const double th = 2.0 * std::numbers::pi * d / directions;
        Vec u(2);
        u << v * std::cos(th), v * std::sin(th);
        mesh.controls.push_back(u);
      }
    }
  }
  return mesh;
}

inline ControlMesh build_control_mesh(const ProblemSpec& problem, const Grid& grid,
                                      const std::vector<double>& magnitudes, int directions = 8) {
  if (problem.dimension != grid.dimension()) throw ParameterError("problem and grid dimensions differ");
  return build_control_mesh(grid.dimension(), magnitudes, directions);
}

/// Occupation-measure LP on grid x mesh x regime. Column index (k * nodes + node) * controls + c.
/// equality holds one row per (regime, node): entry = row (k, node) of the discrete operator
/// -A_h (reflecting closure, no penalty) under control c, evaluated at the test indicator.
struct LpData {
  Grid grid{1, 1.0, 1.0};
  ControlMesh mesh;
  Eigen::SparseMatrix<double> equality;  // 2 nodes x columns
  Eigen::VectorXd cost;                  // f_k(x) + l_k(x, xi)

  int nodes() const { return grid.size(); }
  int columns() const { return static_cast<int>(cost.size()); }
  int column(int k, int node, int c) const { return (k * nodes() + node) * mesh.size() + c; }
};

inline LpData assemble_lp(const ProblemSpec& problem, const Grid& grid, const ControlMesh& mesh,
                          AdvectionScheme scheme = AdvectionScheme::Hybrid) {
  problem.validate();
  if (mesh.size() == 0) throw ParameterError("control mesh is empty");
  if (mesh.dimension != grid.dimension()) throw ParameterError("control mesh dimension differs from grid");
  LpData lp;
  lp.grid = grid;
  lp.mesh = mesh;
  const int n = grid.size(), nc = mesh.size(), dim = grid.dimension();
  lp.cost.resize(2 * n * nc);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<size_t>(2 * n * nc) * (2 + 3 * dim));
  Stencil st[2];
  for (int k = 0; k < 2; ++k) {
    const StateIndex sk(k + 1);
    for (int node = 0; node < n; ++node) {
      const Vec x = grid.coordinate(node);
      const double f = problem.f[k].value(x);
      for (int c = 0; c < nc; ++c) {
        const int col = lp.column(k, node, c);
        const Vec& xi = mesh.controls[c];
        lp.cost[col] = f + lagrangian_eval(problem.hamiltonians, sk, x, xi);
        for (int a = 0; a < dim; ++a) st[a] = select_stencil(scheme, xi[a], grid.spacing());
        detail::emit_generator_row(grid, problem, k, node, xi, st, 1.0, 0.0,
                                   [&](int row, double v) { trips.emplace_back(row, col, v); });
      }
    }
  }
  lp.equality.resize(2 * n, 2 * n * nc);
  lp.equality.setFromTriplets(trips.begin(), trips.end());
  lp.equality.makeCompressed();
  return lp;
}

struct OccupationMeasure {
  Grid grid{1, 1.0, 1.0};
  ControlMesh mesh;
  Eigen::VectorXd weights;  // LpData column order
  double mass = 0.0;
  Eigen::VectorXd stationarity;  // equality * weights
  double stationarity_residual = 0.0;

  double weight(const LpData& lp, int k, int node, int c) const { return weights[lp.column(k, node, c)]; }
};

inline OccupationMeasure make_occupation_measure(const LpData& lp, Eigen::VectorXd weights) {
  OccupationMeasure m;
  m.grid = lp.grid;
  m.mesh = lp.mesh;
  m.weights = std::move(weights);
  m.mass = m.weights.sum();
  m.stationarity = lp.equality * m.weights;
  m.stationarity_residual = m.stationarity.lpNorm<Eigen::Infinity>();
  return m;
}

inline double measure_cost(const LpData& lp, const OccupationMeasure& m) { return lp.cost.dot(m.weights); }

struct LpSolution {
  double lambda_bar = 0.0;
  OccupationMeasure measure;
  LpResult raw;            // final (vertex) primal/dual data, x in measure units
  int ipm_iterations = 0;
  int pivot_rounds = 0;    // block pivots after crossover
};

namespace detail {

/// Equality rows with the last (redundant) test row replaced by the unit-mass row.
inline Eigen::SparseMatrix<double> lp_constraint_matrix(const LpData& lp) {
  const int rows = static_cast<int>(lp.equality.rows());
  std::vector<Triplet> trips;
  trips.reserve(static_cast<size_t>(lp.equality.nonZeros() + lp.columns()));
  for (int col = 0; col < lp.equality.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(lp.equality, col); it; ++it)
      if (it.row() != rows - 1) trips.emplace_back(static_cast<int>(it.row()), col, it.value());
    trips.emplace_back(rows - 1, col, 1.0);
  }
  Eigen::SparseMatrix<double> a(rows, lp.columns());
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  return a;
}

}  // namespace detail

/// Occupation-measure LP value and optimizer. A primal-dual interior point phase is followed by a
/// crossover to a vertex: the basis holds one column per (regime, node) - the heaviest one in the
/// interior point solution - and block simplex pivots (every (regime, node) whose best column has
/// negative reduced cost enters at once) run to optimality with sparse LU basis solves. The vertex
/// phase is what attains the 1e-8 feasibility target: the normal equations of the interior point
/// phase lose accuracy once the optimal measure spans many orders of magnitude.
inline LpSolution solve_lp(const LpData& lp, const LpOptions& opt = {}) {
  const Eigen::SparseMatrix<double> a = detail::lp_constraint_matrix(lp);
  const int rows = static_cast<int>(a.rows());
  const int nc = lp.mesh.size();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
  // Interior point phase on nu = columns * mu so that the iterates are O(1).
  const double scale = static_cast<double>(lp.columns());
  b[rows - 1] = scale;
  LpOptions ipm_opt = opt;
  ipm_opt.allow_inexact = true;
  const LpResult ipm = solve_standard_lp(a, b, lp.cost, ipm_opt);
  b[rows - 1] = 1.0;

  LpSolution sol;
  sol.ipm_iterations = ipm.iterations;
  std::vector<int> basis(static_cast<size_t>(rows));
  for (int block = 0; block < rows; ++block) {
    int bestc = 0;
    for (int c = 1; c < nc; ++c)
      if (ipm.x[block * nc + c] > ipm.x[block * nc + bestc]) bestc = c;
    basis[block] = block * nc + bestc;
  }

  const double cnorm = 1.0 + lp.cost.lpNorm<Eigen::Infinity>();
  const Eigen::SparseMatrix<double> at = a.transpose();
  for (int round = 0; round <= 10 * rows; ++round) {
    std::vector<Triplet> trips;
    for (int j = 0; j < rows; ++j)
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, basis[j]); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), j, it.value());
    SparseMatrix bm(rows, rows);
    bm.setFromTriplets(trips.begin(), trips.end());
    bm.makeCompressed();
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(bm);
    if (lu.info() != Eigen::Success)
      throw LpError("singular basis during crossover (the selected policy is not irreducible); enlarge the control mesh");
    Eigen::VectorXd cb(rows);
    for (int j = 0; j < rows; ++j) cb[j] = lp.cost[basis[j]];
    const Eigen::VectorXd xb = lu.solve(b);
    const Eigen::VectorXd y = lu.transpose().solve(cb);
    const Eigen::VectorXd red = lp.cost - at * y;

    bool changed = false;
    double worst = 0.0;
    for (int block = 0; block < rows; ++block) {
      int bestc = -1;
      double bestr = -opt.feasibility_tol * cnorm;
      for (int c = 0; c < nc; ++c)
        if (red[block * nc + c] < bestr) {
          bestr = red[block * nc + c];
          bestc = c;
        }
      worst = std::min(worst, red.segment(block * nc, nc).minCoeff());
      if (bestc >= 0) {
        basis[block] = block * nc + bestc;
        changed = true;
      }
    }
    if (!changed) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(lp.columns());
      for (int j = 0; j < rows; ++j) x[basis[j]] = xb[j];
      if (xb.minCoeff() < -opt.feasibility_tol)
        throw LpError("crossover produced a negative basic weight; the LP may be infeasible");
      sol.raw.x = x;
      sol.raw.y = y;
      sol.raw.s = red;
      sol.raw.value = lp.cost.dot(x);
      sol.raw.primal_residual = (a * x - b).lpNorm<Eigen::Infinity>() / 2.0;
      sol.raw.dual_residual = -worst / cnorm;
      sol.raw.gap = std::abs(sol.raw.value - b.dot(y)) / (1.0 + std::abs(sol.raw.value));
      sol.raw.iterations = ipm.iterations + round;
      sol.raw.optimal = sol.raw.primal_residual <= opt.feasibility_tol && sol.raw.gap <= opt.gap_tol;
      if (!sol.raw.optimal) throw LpError("crossover did not reach the feasibility tolerance");
      sol.pivot_rounds = round;
      sol.lambda_bar = sol.raw.value;
      sol.measure = make_occupation_measure(lp, x.cwiseMax(0.0));
      return sol;
    }
  }
  throw LpError("crossover pivoting did not terminate");
}

/// Text export: header, equality triplets (0-based), cost vector, bounds.
inline void write_lp(std::ostream& os, const LpData& lp) {
  os.precision(17);
  os << "# occupation-measure LP: minimize cost.mu s.t. equality mu = 0 (one row redundant), sum mu = 1, mu >= 0\n";
  os << "# rows " << lp.equality.rows() << " columns " << lp.columns() << " nonzeros " << lp.equality.nonZeros()
     << "\n";
  os << "[equality]\n";
  for (int col = 0; col < lp.equality.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(lp.equality, col); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "[cost]\n";
  for (int i = 0; i < lp.columns(); ++i) os << lp.cost[i] << "\n";
  os << "[bounds]\nlower 0\nupper inf\n";
}

}  // namespace ergohjb
