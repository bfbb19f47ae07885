#include <gtest/gtest.h>

#include <cmath>

#include "ergohjb/solver.hpp"

using namespace ergohjb;

namespace {

ProblemSpec quadratic_1d(double shift1 = 0.0, double shift2 = 0.0) {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(shift1, {1.0}), CoefficientField::quadratic_form(shift2, {1.0})};
  return p;
}

// Pinned penalty cap and control cap so that problems with different sources share one scheme.
SolverOptions pinned() {
  SolverOptions o;
  o.penalty.cap = 1e8;
  o.xi_max = 200.0;
  return o;
}

}  // namespace

TEST(Ergodic, QuadraticOneDimensionalValue) {
  const Grid g(1, 5.0, 0.05);
  const ErgodicSolution s = solve_ergodic_normalized(quadratic_1d(), g);
  EXPECT_NEAR(s.lambda, std::sqrt(2.0), 2e-3);
  EXPECT_LE(s.residual, s.tol_pde);
  EXPECT_DOUBLE_EQ(s.u[0][g.nearest_node(Vec::Zero(1))], 0.0);
  // u = x^2 / sqrt(2) + const in the bulk.
  const int a = g.nearest_node(Vec::Constant(1, 1.0));
  EXPECT_NEAR(s.u[0][a] - s.u[0][g.origin()], 1.0 / std::sqrt(2.0), 5e-3);
  EXPECT_TRUE(s.minimizer_interior);
  EXPECT_NEAR(s.minimizer[0], 0.0, 1e-12);
}

TEST(Ergodic, ConstantSourceGivesConstantValue) {
  ProblemSpec p;
  p.f = {CoefficientField::constant(0.7), CoefficientField::constant(0.7)};
  p.hamiltonians.states[0].gamma = 3.0;
  const Grid g(1, 2.0, 0.1);
  SolverOptions o;
  o.penalty.enabled = false;
  const ErgodicSolution s = solve_ergodic_normalized(p, g, o);
  EXPECT_NEAR(s.lambda, 0.7, 1e-10);
  EXPECT_LE(std::max(s.u[0].cwiseAbs().maxCoeff(), s.u[1].cwiseAbs().maxCoeff()), 1e-10);
}

TEST(Discounted, ConstantSourceExact) {
  ProblemSpec p;
  p.f = {CoefficientField::constant(2.0), CoefficientField::constant(2.0)};
  const Grid g(1, 2.0, 0.1);
  SolverOptions o;
  o.penalty.enabled = false;
  const DiscountedSolution d = solve_discounted(p, g, 0.25, o);
  EXPECT_NEAR(d.w[0].maxCoeff(), 8.0, 1e-9);
  EXPECT_NEAR(d.w[1].minCoeff(), 8.0, 1e-9);
}

TEST(Discounted, RejectsNonPositiveDiscount) {
  const Grid g(1, 2.0, 0.1);
  EXPECT_THROW(solve_discounted(quadratic_1d(), g, 0.0), ParameterError);
  EXPECT_THROW(solve_discounted(quadratic_1d(), g, -1.0), ParameterError);
}

TEST(VanishingDiscount, ConvergesToErgodicValue) {
  const Grid g(1, 5.0, 0.05);
  SolverOptions o;
  o.eps_min = 1e-4;
  const ErgodicSolution v = vanishing_discount(quadratic_1d(), g, o);
  const ErgodicSolution e = solve_ergodic_normalized(quadratic_1d(), g);
  EXPECT_NEAR(v.lambda, e.lambda, 2e-4);
  ASSERT_GE(v.history.size(), 2u);
  for (size_t i = 1; i < v.history.size(); ++i) EXPECT_DOUBLE_EQ(v.history[i].parameter, 0.5 * v.history[i - 1].parameter);
  EXPECT_LE(std::abs(v.history.back().lambda - v.history[v.history.size() - 2].lambda), o.tol_lambda);
}

TEST(VanishingDiscount, ScheduleValidation) {
  EXPECT_THROW(halving_schedule(1.0, 2.0), ParameterError);
  EXPECT_THROW(halving_schedule(0.0, 1e-3), ParameterError);
  const auto s = halving_schedule(1.0, 0.1);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s.back(), 0.125);
  const Grid g(1, 2.0, 0.1);
  EXPECT_THROW(vanishing_discount(quadratic_1d(), g, std::vector<double>{0.5, 1.0}), ParameterError);
  EXPECT_THROW(vanishing_discount(quadratic_1d(), g, std::vector<double>{}), ParameterError);
}

TEST(VanishingDiscount, ReportsNonConvergence) {
  const Grid g(1, 5.0, 0.05);
  try {
    vanishing_discount(quadratic_1d(), g, std::vector<double>{1.0, 0.5});
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.history().size(), 2u);
  }
}

TEST(Howard, IterationBudgetExhaustion) {
  const Grid g(1, 5.0, 0.05);
  SolverOptions o;
  o.max_iters = 1;
  EXPECT_THROW(solve_ergodic_normalized(quadratic_1d(), g, o), SolverError);
}

TEST(Nested, NonIncreasingInRadius) {
  const NestedResult r = nested_domains(quadratic_1d(), {3.0, 4.0, 5.0}, 0.05);
  ASSERT_EQ(r.lambdas.size(), 3u);
  for (size_t i = 1; i < r.lambdas.size(); ++i) EXPECT_LE(r.lambdas[i], r.lambdas[i - 1] + 1e-4);
  EXPECT_NEAR(r.lambdas.back(), std::sqrt(2.0), 2e-3);
  EXPECT_TRUE(r.minimizer_frozen);
  EXPECT_THROW(nested_domains(quadratic_1d(), {4.0, 3.0}, 0.05), ParameterError);
}

TEST(Structure, ShiftByConstant) {
  const Grid g(1, 4.0, 0.05);
  const double base = solve_ergodic_normalized(quadratic_1d(), g, pinned()).lambda;
  const double shifted = solve_ergodic_normalized(quadratic_1d(0.8, 0.8), g, pinned()).lambda;
  EXPECT_NEAR(shifted - base, 0.8, 1e-8);
}

TEST(Structure, MonotoneInSource) {
  const Grid g(1, 4.0, 0.05);
  const double lo = solve_ergodic_normalized(quadratic_1d(0.0, 0.0), g, pinned()).lambda;
  const double mid = solve_ergodic_normalized(quadratic_1d(0.0, 1.0), g, pinned()).lambda;
  const double hi = solve_ergodic_normalized(quadratic_1d(1.0, 1.0), g, pinned()).lambda;
  EXPECT_LE(lo, mid + 1e-10);
  EXPECT_LE(mid, hi + 1e-10);
  EXPECT_GT(mid, lo + 1e-3);
}

TEST(Structure, ConcaveInSource) {
  const Grid g(1, 4.0, 0.05);
  ProblemSpec pa = quadratic_1d(), pb = quadratic_1d();
  pa.f = {CoefficientField::quadratic_form(0.0, {1.0}), CoefficientField::quadratic_form(2.0, {0.5})};
  pb.f = {CoefficientField::quadratic_form(1.0, {2.0}), CoefficientField::quadratic_form(0.0, {1.0})};
  const double la = solve_ergodic_normalized(pa, g, pinned()).lambda;
  const double lb = solve_ergodic_normalized(pb, g, pinned()).lambda;
  for (double t : {0.25, 0.5, 0.75}) {
    ProblemSpec pm = pa;
    for (int k = 0; k < 2; ++k) pm.f[k] = CoefficientField::mix(pa.f[k], pb.f[k], t);
    const double lm = solve_ergodic_normalized(pm, g, pinned()).lambda;
    EXPECT_GE(lm, t * la + (1 - t) * lb - 1e-8) << "t=" << t;
  }
}

// Equal rates keep the regime chain at occupancy (1/2, 1/2) whatever the control, so slow
// switching averages the scalar values sqrt(2) and sqrt(2) + 3.
TEST(Structure, SlowSymmetricSwitchingAveragesScalarValues) {
  ProblemSpec p = quadratic_1d(0.0, 3.0);
  p.alpha = {CoefficientField::constant(1e-6), CoefficientField::constant(1e-6)};
  const Grid g(1, 5.0, 0.05);
  const ErgodicSolution s = solve_ergodic_normalized(p, g);
  EXPECT_NEAR(s.lambda, std::sqrt(2.0) + 1.5, 2e-3);
  EXPECT_EQ(s.min_state, 1);
}

TEST(ExtractControl, QuadraticFeedback) {
  const Grid g(1, 5.0, 0.05);
  const ErgodicSolution s = solve_ergodic_normalized(quadratic_1d(), g);
  const ExtractedControl c = extract_control(quadratic_1d(), s);
  EXPECT_LE(c.duality_residual, 1e-9);
  // xi = grad u = sqrt(2) x away from the wall.
  for (double x : {-2.0, -0.5, 1.0, 2.5}) {
    const int node = g.nearest_node(Vec::Constant(1, x));
    EXPECT_NEAR(c.controls.xi[0](0, node), std::sqrt(2.0) * x, 1e-2 * (1 + std::abs(x)));
    EXPECT_NEAR(c.controls.xi[1](0, node), std::sqrt(2.0) * x, 1e-2 * (1 + std::abs(x)));
  }
  const ExtractedControl tight = extract_control(quadratic_1d(), s, 1.0);
  EXPECT_GT(tight.clamped_nodes, 0);
  EXPECT_LE(tight.controls.max_abs(), 1.0);
}

TEST(NonlinearResidual, SmallAtSolution) {
  const Grid g(1, 5.0, 0.05);
  const ErgodicSolution s = solve_ergodic_normalized(quadratic_1d(), g);
  const Eigen::VectorXd r = nonlinear_residual(quadratic_1d(), g, s.u, s.lambda, 0.0);
  for (int i = 0; i < r.size(); ++i)
    EXPECT_LE(std::abs(r[i]) / (1.0 + std::abs(s.source[i / g.size()][i % g.size()])), s.tol_pde);
}

TEST(SparseSolve, ThrowsOnSingularMatrix) {
  SparseMatrix a(2, 2);
  a.insert(0, 0) = 1.0;
  a.insert(1, 0) = 1.0;
  EXPECT_THROW(detail::sparse_solve(a, Eigen::VectorXd::Ones(2)), SolverError);
}
