#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>

#include "ergohjb/coefficient.hpp"
#include "ergohjb/errors.hpp"

namespace ergohjb {

/// Uniform tensor grid on [-R, R]^N with the origin as a node.
/// Nodes are flattened with axis 0 fastest.
class Grid {
 public:
  Grid(int dimension, double half_width, double spacing) : dim_(dimension), R_(half_width), h_(spacing) {
    if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
    if (!(half_width > 0.0) || !(spacing > 0.0)) throw ParameterError("grid needs R > 0 and h > 0");
    const double ratio = half_width / spacing;
    half_ = static_cast<int>(std::llround(ratio));
    if (half_ < 1 || std::abs(ratio - half_) > 1e-9 * std::max(1.0, ratio))
      throw ParameterError("grid spacing h=" + std::to_string(spacing) + " does not divide R=" +
                           std::to_string(half_width));
    per_axis_ = 2 * half_ + 1;
    size_ = dim_ == 1 ? per_axis_ : per_axis_ * per_axis_;
  }

  int dimension() const { return dim_; }
  double half_width() const { return R_; }
  double spacing() const { return h_; }
  int nodes_per_axis() const { return per_axis_; }
  int size() const { return size_; }

  /// Axis index of the origin.
  int center_index() const { return half_; }

  int axis_index(int node, int axis) const { return axis == 0 ? node % per_axis_ : node / per_axis_; }

  int node_of(int i0, int i1 = 0) const { return dim_ == 1 ? i0 : i0 + per_axis_ * i1; }

  int origin() const { return dim_ == 1 ? half_ : node_of(half_, half_); }

  double axis_coordinate(int i) const { return static_cast<double>(i - half_) * h_; }

  Vec coordinate(int node) const {
    Vec x(dim_);
    for (int a = 0; a < dim_; ++a) x[a] = axis_coordinate(axis_index(node, a));
    return x;
  }

  /// Neighbor along `axis` in direction +1/-1, or -1 when outside the box.
  int neighbor(int node, int axis, int dir) const {
    const int i = axis_index(node, axis) + dir;
    if (i < 0 || i >= per_axis_) return -1;
    return axis == 0 ? node + dir : node + dir * per_axis_;
  }

  bool is_interior(int node) const {
    for (int a = 0; a < dim_; ++a) {
      const int i = axis_index(node, a);
      if (i == 0 || i == per_axis_ - 1) return false;
    }
    return true;
  }

  /// Nearest node to x (coordinates clamped to the box).
  int nearest_node(const Vec& x) const {
    int idx[2] = {0, 0};
    for (int a = 0; a < dim_; ++a) {
      const long i = std::lround(x[a] / h_) + half_;
      idx[a] = static_cast<int>(std::clamp<long>(i, 0, per_axis_ - 1));
    }
    return node_of(idx[0], idx[1]);
  }

  /// sup-norm distance of node to the box boundary.
  double distance_to_boundary(int node) const {
    double d = R_;
    for (int a = 0; a < dim_; ++a) d = std::min(d, R_ - std::abs(axis_coordinate(axis_index(node, a))));
    return d;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dim_ == b.dim_ && a.half_ == b.half_ && a.h_ == b.h_;
  }

 private:
  int dim_;
  double R_;
  double h_;
  int half_ = 0;
  int per_axis_ = 0;
  int size_ = 0;
};

inline Grid build_grid(int dimension, double half_width, double spacing) {
  return Grid(dimension, half_width, spacing);
}

/// One scalar array per regime, indexed by node.
struct GridFieldPair {
  std::array<Eigen::VectorXd, 2> v;

  GridFieldPair() = default;
  explicit GridFieldPair(int nodes) : v{Eigen::VectorXd::Zero(nodes), Eigen::VectorXd::Zero(nodes)} {}

  Eigen::VectorXd& operator[](int k) { return v[k]; }
  const Eigen::VectorXd& operator[](int k) const { return v[k]; }
  int size() const { return static_cast<int>(v[0].size()); }

  bool all_finite() const { return v[0].allFinite() && v[1].allFinite(); }
};

/// Feedback vector fields xi_k(node); xi[k] has shape (N, nodes).
struct ControlFieldPair {
  std::array<Eigen::MatrixXd, 2> xi;

  ControlFieldPair() = default;
  ControlFieldPair(int dimension, int nodes)
      : xi{Eigen::MatrixXd::Zero(dimension, nodes), Eigen::MatrixXd::Zero(dimension, nodes)} {}

  Vec at(int k, int node) const { return xi[k].col(node); }
  int nodes() const { return static_cast<int>(xi[0].cols()); }
  int dimension() const { return static_cast<int>(xi[0].rows()); }
  double max_abs() const { return std::max(xi[0].cwiseAbs().maxCoeff(), xi[1].cwiseAbs().maxCoeff()); }
};

/// Central differences in the interior, second-order one-sided differences on the boundary.
/// Returns shape (N, nodes).
inline Eigen::MatrixXd gradient_central(const Grid& grid, const Eigen::VectorXd& field) {
  const int n = grid.size();
  const double h = grid.spacing();
  Eigen::MatrixXd g(grid.dimension(), n);
  for (int node = 0; node < n; ++node) {
    for (int a = 0; a < grid.dimension(); ++a) {
      const int up = grid.neighbor(node, a, +1);
      const int dn = grid.neighbor(node, a, -1);
      if (up >= 0 && dn >= 0) {
        g(a, node) = (field[up] - field[dn]) / (2.0 * h);
      } else if (up >= 0) {
        const int up2 = grid.neighbor(up, a, +1);
        g(a, node) = (-3.0 * field[node] + 4.0 * field[up] - field[up2]) / (2.0 * h);
      } else {
        const int dn2 = grid.neighbor(dn, a, -1);
        g(a, node) = (3.0 * field[node] - 4.0 * field[dn] + field[dn2]) / (2.0 * h);
      }
    }
  }
  return g;
}

/// CSV: coordinates, state, value (one row per node and state).
inline void write_field_csv(std::ostream& os, const Grid& grid, const GridFieldPair& field,
                            const std::string& value_name = "value") {
  os.precision(17);
  os << (grid.dimension() == 1 ? "x" : "x,y") << ",state," << value_name << "\n";
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node) {
      const Vec x = grid.coordinate(node);
      for (int a = 0; a < grid.dimension(); ++a) os << x[a] << ",";
      os << (k + 1) << "," << field[k][node] << "\n";
    }
}

inline void write_control_csv(std::ostream& os, const Grid& grid, const ControlFieldPair& c) {
  os.precision(17);
  os << (grid.dimension() == 1 ? "x,state,xi0" : "x,y,state,xi0,xi1") << "\n";
  for (int k = 0; k < 2; ++k)
    for (int node = 0; node < grid.size(); ++node) {
      const Vec x = grid.coordinate(node);
      for (int a = 0; a < grid.dimension(); ++a) os << x[a] << ",";
      os << (k + 1);
      for (int a = 0; a < grid.dimension(); ++a) os << "," << c.xi[k](a, node);
      os << "\n";
    }
}

}  // namespace ergohjb
