#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ergohjb/assumptions.hpp"
#include "ergohjb/io.hpp"
#include "ergohjb/model.hpp"

using namespace ergohjb;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

HamiltonianSpec plain(double gamma, int dim, Vec b = Vec()) {
  HamiltonianSpec s;
  for (auto& st : s.states) {
    st.gamma = gamma;
    if (b.size() == dim) st.b = VectorField::constant(b);
  }
  return s;
}

const StateIndex k1(1);

// Central difference of a scalar function at x, step 1e-5.
template <class F>
Vec fd_gradient(F&& f, const Vec& x, double step = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += step;
    b[i] -= step;
    g[i] = (f(a) - f(b)) / (2.0 * step);
  }
  return g;
}

void expect_rel(const Vec& got, const Vec& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  EXPECT_LE((got - want).norm(), tol * (1.0 + want.norm())) << "got " << got.transpose() << " want " << want.transpose();
}

}  // namespace

TEST(StateIndex, AcceptsOneAndTwo) {
  EXPECT_EQ(StateIndex(1).other().value(), 2);
  EXPECT_EQ(StateIndex(2).other().value(), 1);
  EXPECT_EQ(StateIndex(2).index(), 1);
  EXPECT_THROW(StateIndex(0), ParameterError);
  EXPECT_THROW(StateIndex(3), ParameterError);
}

TEST(CoefficientField, PresetValues) {
  EXPECT_DOUBLE_EQ(CoefficientField::constant(2.5).value(v2(1, 2)), 2.5);
  EXPECT_DOUBLE_EQ(CoefficientField::quadratic_form(1.0, {2.0, 3.0}).value(v2(1, 2)), 1.0 + 2.0 + 12.0);
  EXPECT_NEAR(CoefficientField::power_radial(2.0, 3.0).value(v2(3, 4)), 250.0, 1e-12);
  const double r2 = 25.0;
  EXPECT_NEAR(CoefficientField::trig_modulated_power(1.0, 2.0, 0.5).value(v2(3, 4)),
              r2 * (2.0 + std::sin(std::sqrt(1.0 + r2))), 1e-12);
}

TEST(CoefficientField, GradientsMatchCentralDifferences) {
  const std::vector<CoefficientField> fields{
      CoefficientField::constant(3.0), CoefficientField::quadratic_form(0.5, {1.0, 2.0}),
      CoefficientField::power_radial(1.5, 2.5), CoefficientField::power_radial(1.0, 1.5),
      CoefficientField::trig_modulated_power(1.0, 2.0, 0.5), CoefficientField::trig_modulated_power(0.5, 3.0, 0.25)};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (const auto& f : fields)
    for (int t = 0; t < 20; ++t) {
      const Vec x = v2(u(rng), u(rng));
      expect_rel(f.gradient(x), fd_gradient([&](const Vec& y) { return f.value(y); }, x), 1e-6);
    }
}

TEST(CoefficientField, ShiftScaleAndMixStayInFamily) {
  const auto f = CoefficientField::quadratic_form(0.0, {1.0});
  EXPECT_DOUBLE_EQ(f.shifted(3.0).value(v1(2.0)), 7.0);
  EXPECT_DOUBLE_EQ(f.scaled(4.0).value(v1(2.0)), 16.0);
  EXPECT_DOUBLE_EQ(CoefficientField::mix(f, CoefficientField::constant(1.0), 0.25).value(v1(2.0)), 1.0 + 0.75);
}

TEST(Hamiltonian, ExamplesFromClosedForms) {
  EXPECT_NEAR(hamiltonian_eval(plain(2, 2), k1, v2(0, 0), v2(3, 4)), 12.5, 1e-14);
  EXPECT_NEAR(hamiltonian_eval(plain(2, 2, v2(1, 0)), k1, v2(0, 0), v2(2, 0)), 4.0, 1e-14);
  EXPECT_NEAR(hamiltonian_eval(plain(4, 1), k1, v1(0), v1(2)), 4.0, 1e-14);
}

TEST(Hamiltonian, GradientExamples) {
  expect_rel(hamiltonian_grad_p(plain(2, 2), k1, v2(0, 0), v2(3, 4)), v2(3, 4), 1e-14);
  expect_rel(hamiltonian_grad_p(plain(4, 1), k1, v1(0), v1(2)), v1(8), 1e-14);
}

TEST(Hamiltonian, GradientAtZeroMomentumIsDriftForSubquadratic) {
  const auto s = plain(1.5, 2, v2(0.3, -0.2));
  const Vec g = hamiltonian_grad_p(s, k1, v2(1, 1), v2(0, 0));
  EXPECT_TRUE(g.allFinite());
  expect_rel(g, v2(0.3, -0.2), 1e-15);
}

TEST(Hamiltonian, GradientMatchesFiniteDifferencesOnRandomSpecs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0), g(1.3, 4.0);
  for (int t = 0; t < 200; ++t) {
    HamiltonianSpec s = plain(g(rng), 2, v2(u(rng), u(rng)));
    Mat a(2, 2);
    const double off = 0.3 * u(rng);
    a << 1.5 + 0.2 * u(rng), off, off, 1.0 + 0.2 * u(rng);
    s.states[0].a = MatrixField::constant_spd(a);
    const Vec x = v2(u(rng), u(rng));
    Vec p = v2(u(rng), u(rng));
    if (p.norm() < 0.1) p *= 10.0;
    const Vec fd = fd_gradient([&](const Vec& q) { return hamiltonian_eval(s, k1, x, q); }, p);
    expect_rel(hamiltonian_grad_p(s, k1, x, p), fd, 1e-6);
  }
}

TEST(Hamiltonian, RejectsNonPositiveDefiniteMetric) {
  Mat a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(MatrixField::constant_spd(a), CoefficientError);
}

TEST(Lagrangian, Examples) {
  EXPECT_NEAR(lagrangian_eval(plain(2, 2), k1, v2(0, 0), v2(3, 4)), 12.5, 1e-14);
  EXPECT_NEAR(lagrangian_eval(plain(4, 1), k1, v1(0), v1(1)), 0.75, 1e-14);
  EXPECT_EQ(lagrangian_eval(plain(2, 2, v2(1, 0)), k1, v2(0, 0), v2(1, 0)), 0.0);
}

TEST(Lagrangian, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (double gamma : {1.5, 2.0, 3.0, 4.0}) {
    const auto s = plain(gamma, 2, v2(0.2, -0.1));
    for (int t = 0; t < 20; ++t) {
      const Vec x = v2(u(rng), u(rng)), xi = v2(u(rng), u(rng));
      const Vec fd = fd_gradient([&](const Vec& q) { return lagrangian_eval(s, k1, x, q); }, xi);
      expect_rel(lagrangian_grad(s, k1, x, xi), fd, 1e-6);
    }
  }
}

TEST(Duality, QuadraticGapIsZero) {
  for (double p : {-3.0, 0.0, 0.5, 7.0}) EXPECT_NEAR(duality_gap(plain(2, 1), k1, v1(0), v1(p)), 0.0, 1e-14);
}

TEST(Duality, QuarticAtTwo) {
  // xi* = p^3 = 8 and l = (3/4) 8^{4/3} = 12, so p xi* - l = 16 - 12 = 4 = H.
  EXPECT_NEAR(duality_gap(plain(4, 1), k1, v1(0), v1(2)), 0.0, 1e-12);
  EXPECT_NEAR(lagrangian_eval(plain(4, 1), k1, v1(0), v1(8)), 12.0, 1e-12);
}

TEST(Duality, RandomSweepAndFenchelYoung) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3.0, 3.0), g(1.2, 5.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    HamiltonianSpec s = plain(g(rng), 2, v2(u(rng), u(rng)));
    Mat a(2, 2);
    const double off = 0.2 * u(rng);
    a << 1.0 + 0.3 * std::abs(u(rng)), off, off, 1.0 + 0.3 * std::abs(u(rng));
    s.states[0].a = MatrixField::constant_spd(a);
    const Vec x = v2(u(rng), u(rng)), p = v2(u(rng), u(rng));
    const double h = hamiltonian_eval(s, k1, x, p);
    worst = std::max(worst, std::abs(duality_gap(s, k1, x, p)) / (1.0 + std::abs(h)));
    const Vec xi = v2(u(rng), u(rng));
    EXPECT_GE(lagrangian_eval(s, k1, x, xi), p.dot(xi) - h - 1e-9 * (1.0 + std::abs(h)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Truncation, IdentityBelowLevel) { EXPECT_EQ(truncation_psi(10.0, 4.0, 5.0), 5.0); }

TEST(Truncation, FormulaAboveLevel) {
  // n - g/2 + (g/2)(x - n + 1)^{2/g} with g = 4, n = 1, x = 17: -1 + 2 sqrt(17).
  EXPECT_NEAR(truncation_psi(1.0, 4.0, 17.0), 7.246211251235321, 1e-12);
}

TEST(Truncation, MonotoneBelowIdentityAndSandwiched) {
  const double c1 = 2.0;
  for (double gamma : {3.0, 4.0, 6.0})
    for (double n : {1.0, 5.0, 50.0}) {
      const auto [e1, e2] = truncation_sandwich_constants(gamma, c1);
      double prev = -std::numeric_limits<double>::infinity();
      for (double x = -c1; x <= 100.0; x += 0.01) {
        const double y = truncation_psi(n, gamma, x);
        EXPECT_GE(y, prev);
        EXPECT_LE(y, x + 1e-12);
        const double d = truncation_psi_prime(n, gamma, x);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_GE(y, e1 * std::pow(std::abs(x), 2.0 / gamma) - e2);
        prev = y;
      }
    }
}

TEST(Truncation, SpecAppliesPsiToSuperquadraticRegimesOnly) {
  HamiltonianSpec s = plain(4, 1);
  s.states[1].gamma = 2.0;
  const auto t = truncate_hamiltonian(s, 1.0, 1.0);
  ASSERT_TRUE(t.truncation.has_value());
  EXPECT_NEAR(hamiltonian_eval(t, StateIndex(1), v1(0), v1(std::pow(68.0, 0.25))),
              truncation_psi(1.0, 4.0, 17.0), 1e-12);
  EXPECT_NEAR(hamiltonian_eval(t, StateIndex(2), v1(0), v1(10.0)), 50.0, 1e-12);
  EXPECT_FALSE(truncate_hamiltonian(plain(2, 1), 1.0, 1.0).truncation.has_value());
  EXPECT_THROW(truncate_hamiltonian(s, 0.0, 1.0), ParameterError);
}

TEST(Truncation, GradientIsChainRule) {
  const auto t = truncate_hamiltonian(plain(4, 1), 2.0, 1.0);
  for (double p : {0.5, 1.5, 2.5, 4.0}) {
    const Vec fd = fd_gradient([&](const Vec& q) { return hamiltonian_eval(t, k1, v1(0), q); }, v1(p));
    expect_rel(hamiltonian_grad_p(t, k1, v1(0), v1(p)), fd, 1e-6);
  }
}

TEST(ProblemSpec, ValidateRejectsBadExponent) {
  ProblemSpec p;
  p.hamiltonians.states[0].gamma = 1.0;
  EXPECT_THROW(p.validate(), ParameterError);
}

TEST(Assumptions, ConstantRatesGiveUnitUpsilon) {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(0, {1.0}), CoefficientField::quadratic_form(0, {1.0})};
  const auto r = validate_assumptions(p, Grid(1, 6.0, 0.05));
  EXPECT_DOUBLE_EQ(r.upsilon_alpha0, 1.0);
  EXPECT_TRUE(r.rates_positive);
  EXPECT_TRUE(r.coercive);
  EXPECT_TRUE(r.passed);
}

TEST(Assumptions, QuadraticSourceConstants) {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(0, {1.0}), CoefficientField::quadratic_form(0, {1.0})};
  const Grid g(1, 6.0, 0.05);
  const auto r = validate_assumptions(p, g);
  // F1 with g = 2: |2x| / (1 + |x|^3), maximized over the nodes.
  double c2 = 0.0, c3 = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const double x = -6.0 + 0.05 * i;
    c2 = std::max(c2, std::abs(2.0 * x) / (1.0 + std::pow(std::abs(x), 3.0)));
    double sup = 0.0;
    for (int j = 0; j < g.size(); ++j) {
      const double y = -6.0 + 0.05 * j;
      if (std::abs(y - x) <= 1.0 + 1e-9) sup = std::max(sup, y * y);
    }
    c3 = std::max(c3, sup / (x * x + 1.0));
  }
  EXPECT_NEAR(r.c2, c2, 1e-12);
  EXPECT_LE(r.c2, 2.0);
  EXPECT_NEAR(r.c3, c3, 1e-12);
  // H = p^2/2: the upper constant tends to 1/2 and the lower one to 2 as |p| grows.
  EXPECT_GT(r.c1, 1.9);
  EXPECT_LE(r.c1, 2.0);
  EXPECT_NEAR(r.c1_tilde, 16.0 / 17.0, 1e-12);
}

TEST(Assumptions, GrowthEnvelopeHoldsOnRandomMomenta) {
  ProblemSpec p;
  p.dimension = 2;
  p.x_ref = Vec::Zero(2);
  p.hamiltonians = plain(3.0, 2, v2(0.5, 0.0));
  const Grid g(2, 3.0, 0.25);
  const double c1 = validate_assumptions(p, g).c1;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0), ang(0.0, 6.283185307179586), mag(0.0, 16.0);
  for (int t = 0; t < 500; ++t) {
    const double m = mag(rng), a = ang(rng);
    const Vec pm = v2(m * std::cos(a), m * std::sin(a));
    const double h = hamiltonian_eval(p.hamiltonians, k1, v2(u(rng), u(rng)), pm);
    const double pg = std::pow(m, 3.0);
    EXPECT_LE(h, c1 * (pg + 1.0) + 1e-9);
    EXPECT_GE(h, pg / c1 - c1 - 1e-9);
  }
}

TEST(Assumptions, TrigExampleAdmissible) {
  ProblemSpec p;
  p.f = {CoefficientField::trig_modulated_power(1.0, 2.0, 0.5), CoefficientField::trig_modulated_power(1.0, 2.0, 0.5)};
  const auto r = validate_assumptions(p, Grid(1, 6.0, 0.05));
  EXPECT_TRUE(r.trig_condition);
  EXPECT_TRUE(r.coercive);
  EXPECT_TRUE(r.passed);
}

TEST(Assumptions, TrigExampleInadmissibleExponents) {
  ProblemSpec p;
  // (1 + 4 - 1) * 2 / 3 = 8/3 > 1.
  p.f = {CoefficientField::trig_modulated_power(1.0, 1.0, 2.0), CoefficientField::quadratic_form(0, {1.0})};
  const auto r = validate_assumptions(p, Grid(1, 3.0, 0.05));
  EXPECT_FALSE(r.trig_condition);
  EXPECT_FALSE(r.passed);
  ASSERT_FALSE(r.violations.empty());
  EXPECT_EQ(r.violations.front().check, "trig_exponents");
}

TEST(Assumptions, DeclaredBoundViolationListsNodes) {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(0, {1.0}), CoefficientField::quadratic_form(0, {1.0})};
  AssumptionBounds b;
  b.c2 = 0.5;
  const auto r = validate_assumptions(p, Grid(1, 6.0, 0.05), b);
  EXPECT_FALSE(r.passed);
  ASSERT_FALSE(r.violations.empty());
  for (const auto& v : r.violations) {
    EXPECT_EQ(v.check, "F1");
    EXPECT_GE(v.node, 0);
    EXPECT_GT(v.lhs, v.rhs);
  }
}

TEST(Assumptions, NonCoerciveAndVaryingRates) {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(0, {-1.0}), CoefficientField::constant(0.0)};
  p.alpha = {CoefficientField::quadratic_form(0.5, {1.0}), CoefficientField::constant(1.0)};
  const auto r = validate_assumptions(p, Grid(1, 2.0, 0.05));
  EXPECT_FALSE(r.coercive);
  // alpha in [0.5, 4.5] with |alpha'| <= 4 on [-2, 2].
  EXPECT_NEAR(r.upsilon_alpha0, 4.5, 1e-12);
}

TEST(ProblemFile, RoundTripIsLossless) {
  ProblemSpec p;
  p.dimension = 2;
  p.x_ref = v2(0.1, -0.3);
  p.hamiltonians.states[0].gamma = 2.0 / 3.0 + 1.0;
  Mat a(2, 2);
  a << 1.1, 0.1, 0.1, 0.9;
  p.hamiltonians.states[1].a = MatrixField::constant_spd(a);
  p.hamiltonians.states[1].b = VectorField({CoefficientField::constant(0.1), CoefficientField::power_radial(0.2, 1.5)});
  p.hamiltonians.truncation = Truncation{12.5, 1.0 / 3.0};
  p.alpha = {CoefficientField::constant(1.0 / 7.0), CoefficientField::quadratic_form(1.0, {0.1, 0.2})};
  p.f = {CoefficientField::trig_modulated_power(1.0, 2.0, 0.5).shifted(0.1),
         CoefficientField::power_radial(std::sqrt(2.0), 2.0)};
  const Json j = problem_to_json(p);
  const ProblemSpec q = problem_from_json(Json::parse(j.dump()));
  EXPECT_EQ(problem_to_json(q).dump(), j.dump());
  const Vec x = v2(0.7, -1.3);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(q.f[k].value(x), p.f[k].value(x));
    EXPECT_EQ(q.alpha[k].value(x), p.alpha[k].value(x));
    EXPECT_EQ(hamiltonian_eval(q.hamiltonians, StateIndex(k + 1), x, v2(1.0, 2.0)),
              hamiltonian_eval(p.hamiltonians, StateIndex(k + 1), x, v2(1.0, 2.0)));
  }
}

TEST(ProblemFile, BadInputsAreParameterErrors) {
  EXPECT_THROW(problem_from_json(Json::parse(R"({"dimension": 1})")), ParameterError);
  EXPECT_THROW(problem_from_json(Json::parse(
                   R"({"dimension": 1, "states": [{"gamma": 2}, {"gamma": 2}], "alpha": [1, 1],
                       "f": [[{"type": "cubic"}], 0]})")),
               ParameterError);
  EXPECT_THROW(problem_from_json(Json::parse(
                   R"({"dimension": 1, "states": [{"gamma": 0.5}, {"gamma": 2}], "alpha": [1, 1], "f": [0, 0]})")),
               ParameterError);
}
