#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "ergohjb/errors.hpp"

namespace ergohjb {

/// Points and vectors in R^N with N <= 2; stack allocated.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 2, 2>;

inline Vec zero_vec(int n) { return Vec::Zero(n); }

namespace terms {

struct Constant {
  double c = 0.0;
};

/// c0 + sum_i w_i x_i^2
struct QuadraticForm {
  double c0 = 0.0;
  std::vector<double> weights;
};

/// c |x|^beta
struct PowerRadial {
  double c = 1.0;
  double beta = 2.0;
};

/// c |x|^beta1 (2 + sin((1+|x|^2)^beta2))
struct TrigModulatedPower {
  double c = 1.0;
  double beta1 = 2.0;
  double beta2 = 0.5;
};

using Term = std::variant<Constant, QuadraticForm, PowerRadial, TrigModulatedPower>;

inline double value(const Constant& t, const Vec&) { return t.c; }

inline double value(const QuadraticForm& t, const Vec& x) {
  double s = t.c0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double w = i < static_cast<Eigen::Index>(t.weights.size()) ? t.weights[i] : 0.0;
    s += w * x[i] * x[i];
  }
  return s;
}

inline double value(const PowerRadial& t, const Vec& x) {
  const double r = x.norm();
  if (r == 0.0) return t.beta == 0.0 ? t.c : 0.0;
  return t.c * std::pow(r, t.beta);
}

inline double value(const TrigModulatedPower& t, const Vec& x) {
  const double r2 = x.squaredNorm();
  const double r = std::sqrt(r2);
  const double radial = r == 0.0 ? (t.beta1 == 0.0 ? 1.0 : 0.0) : std::pow(r, t.beta1);
  return t.c * radial * (2.0 + std::sin(std::pow(1.0 + r2, t.beta2)));
}

inline Vec gradient(const Constant&, const Vec& x) { return Vec::Zero(x.size()); }

inline Vec gradient(const QuadraticForm& t, const Vec& x) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double w = i < static_cast<Eigen::Index>(t.weights.size()) ? t.weights[i] : 0.0;
    g[i] = 2.0 * w * x[i];
  }
  return g;
}

// The radial terms are not differentiable at the origin when beta <= 1; 0 is returned there.
inline Vec gradient(const PowerRadial& t, const Vec& x) {
  const double r = x.norm();
  if (r == 0.0) return Vec::Zero(x.size());
  return (t.c * t.beta * std::pow(r, t.beta - 2.0)) * x;
}

inline Vec gradient(const TrigModulatedPower& t, const Vec& x) {
  const double r2 = x.squaredNorm();
  const double r = std::sqrt(r2);
  if (r == 0.0) return Vec::Zero(x.size());
  const double g = std::pow(1.0 + r2, t.beta2);
  const double radial = std::pow(r, t.beta1);
  const double d_radial = t.beta1 * std::pow(r, t.beta1 - 2.0);       // times x
  const double d_g = 2.0 * t.beta2 * std::pow(1.0 + r2, t.beta2 - 1.0);  // times x
  return (t.c * (d_radial * (2.0 + std::sin(g)) + radial * std::cos(g) * d_g)) * x;
}

inline Term scaled(const Term& term, double s) {
  return std::visit(
      [s](const auto& t) -> Term {
        using T = std::decay_t<decltype(t)>;
        T out = t;
        if constexpr (std::is_same_v<T, Constant>) {
          out.c *= s;
        } else if constexpr (std::is_same_v<T, QuadraticForm>) {
          out.c0 *= s;
          for (double& w : out.weights) w *= s;
        } else {
          out.c *= s;
        }
        return out;
      },
      term);
}

}  // namespace terms

/// Scalar coefficient built from a closed family of presets with exact gradients.
/// A field is a finite sum of preset terms, so shifts, scalings and convex
/// combinations stay inside the family.
class CoefficientField {
 public:
  CoefficientField() = default;
  explicit CoefficientField(std::vector<terms::Term> t) : terms_(std::move(t)) {}

  static CoefficientField constant(double c) { return CoefficientField({terms::Constant{c}}); }
  static CoefficientField quadratic_form(double c0, std::vector<double> weights) {
    return CoefficientField({terms::QuadraticForm{c0, std::move(weights)}});
  }
  static CoefficientField power_radial(double c, double beta) {
    return CoefficientField({terms::PowerRadial{c, beta}});
  }
  static CoefficientField trig_modulated_power(double c, double beta1, double beta2) {
    return CoefficientField({terms::TrigModulatedPower{c, beta1, beta2}});
  }

  double value(const Vec& x) const {
    double s = 0.0;
    for (const auto& t : terms_) s += std::visit([&](const auto& v) { return terms::value(v, x); }, t);
    return s;
  }

  Vec gradient(const Vec& x) const {
    Vec g = Vec::Zero(x.size());
    for (const auto& t : terms_) g += std::visit([&](const auto& v) { return terms::gradient(v, x); }, t);
    return g;
  }

  CoefficientField scaled(double s) const {
    std::vector<terms::Term> out;
    out.reserve(terms_.size());
    for (const auto& t : terms_) out.push_back(terms::scaled(t, s));
    return CoefficientField(std::move(out));
  }

  CoefficientField shifted(double c) const {
    auto out = terms_;
    out.push_back(terms::Constant{c});
    return CoefficientField(std::move(out));
  }

  friend CoefficientField operator+(const CoefficientField& a, const CoefficientField& b) {
    auto out = a.terms_;
    out.insert(out.end(), b.terms_.begin(), b.terms_.end());
    return CoefficientField(std::move(out));
  }

  /// t*a + (1-t)*b
  static CoefficientField mix(const CoefficientField& a, const CoefficientField& b, double t) {
    return a.scaled(t) + b.scaled(1.0 - t);
  }

  bool is_constant() const {
    return std::all_of(terms_.begin(), terms_.end(),
                       [](const auto& t) { return std::holds_alternative<terms::Constant>(t); });
  }

  const std::vector<terms::Term>& term_list() const { return terms_; }

 private:
  std::vector<terms::Term> terms_;
};

/// Vector-valued field, one scalar preset per component. An empty field is identically zero.
class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(std::vector<CoefficientField> components) : components_(std::move(components)) {}

  static VectorField zero() { return VectorField(); }
  static VectorField constant(const Vec& v) {
    std::vector<CoefficientField> c;
    for (Eigen::Index i = 0; i < v.size(); ++i) c.push_back(CoefficientField::constant(v[i]));
    return VectorField(std::move(c));
  }

  Vec value(const Vec& x) const {
    Vec out = Vec::Zero(x.size());
    for (Eigen::Index i = 0; i < x.size() && i < static_cast<Eigen::Index>(components_.size()); ++i)
      out[i] = components_[i].value(x);
    return out;
  }

  bool is_zero() const { return components_.empty(); }
  const std::vector<CoefficientField>& components() const { return components_; }

 private:
  std::vector<CoefficientField> components_;
};

/// Symmetric positive-definite metric a(x). Presets: identity, constant SPD matrix.
class MatrixField {
 public:
  static MatrixField identity() { return MatrixField(); }

  static MatrixField constant_spd(const Mat& m) {
    if (m.rows() != m.cols() || m.rows() < 1 || m.rows() > 2)
      throw CoefficientError("metric matrix must be square with dimension 1 or 2");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()))
      throw CoefficientError("metric matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw CoefficientError("metric matrix is not positive definite (min eigenvalue " +
                             std::to_string(es.eigenvalues().minCoeff()) + ")");
    MatrixField f;
    f.identity_ = false;
    f.m_ = m;
    f.inv_ = m.inverse();
    f.eig_min_ = es.eigenvalues().minCoeff();
    f.eig_max_ = es.eigenvalues().maxCoeff();
    return f;
  }

  bool is_identity() const { return identity_; }
  const Mat& matrix() const { return m_; }

  Mat value(int n) const { return identity_ ? Mat(Mat::Identity(n, n)) : m_; }

  /// <p, a p>
  double quad(const Vec& p) const { return identity_ ? p.squaredNorm() : p.dot(m_ * p); }
  Vec apply(const Vec& p) const { return identity_ ? p : Vec(m_ * p); }
  double inv_quad(const Vec& q) const { return identity_ ? q.squaredNorm() : q.dot(inv_ * q); }
  Vec inv_apply(const Vec& q) const { return identity_ ? q : Vec(inv_ * q); }

  double min_eigenvalue() const { return eig_min_; }
  double max_eigenvalue() const { return eig_max_; }

 private:
  bool identity_ = true;
  Mat m_;
  Mat inv_;
  double eig_min_ = 1.0;
  double eig_max_ = 1.0;
};

}  // namespace ergohjb
