#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ergohjb/simulate.hpp"
#include "ergohjb/verify.hpp"

using namespace ergohjb;

namespace {

ProblemSpec quadratic_1d() {
  ProblemSpec p;
  p.f = {CoefficientField::quadratic_form(0.0, {1.0}), CoefficientField::quadratic_form(0.0, {1.0})};
  return p;
}

ProblemSpec asymmetric_1d() {
  ProblemSpec p;
  p.alpha = {CoefficientField::constant(2.0), CoefficientField::constant(1.0)};
  p.f = {CoefficientField::quadratic_form(0.0, {1.0}), CoefficientField::quadratic_form(1.0, {2.0})};
  return p;
}

const Grid& grid() {
  static const Grid g(1, 5.0, 0.05);
  return g;
}

}  // namespace

TEST(GradientAudit, StableAcrossSourceScalings) {
  const GradientAudit a = audit_gradient_bound(quadratic_1d(), grid());
  EXPECT_TRUE(a.gradient.passed) << a.gradient.narrative;
  EXPECT_LE(a.gradient.constants.at("spread"), 5.0);
  EXPECT_TRUE(a.gradient.constants.count("rho_s16"));
  EXPECT_GT(a.gradient.constants.at("rho_s1"), 0.0);
  // Identical regimes: u_1 = u_2.
  EXPECT_TRUE(a.coupling.passed);
  EXPECT_NE(a.coupling.narrative.find("vanishes"), std::string::npos);
}

TEST(GradientAudit, CouplingBoundForDistinctRegimes) {
  const GradientAudit a = audit_gradient_bound(asymmetric_1d(), grid());
  EXPECT_TRUE(a.gradient.passed) << a.gradient.narrative;
  EXPECT_TRUE(a.coupling.passed) << a.coupling.narrative;
  EXPECT_GT(a.coupling.constants.at("c_tilde_s1"), 0.0);
}

TEST(GradientAudit, FailsWhenStabilityFactorIsTooTight) {
  const GradientAudit a = audit_gradient_bound(asymmetric_1d(), grid(), {}, {1.0, 16.0}, 1.0 + 1e-9);
  EXPECT_FALSE(a.gradient.passed);
  EXPECT_GE(a.gradient.worst_node, 0);
  EXPECT_GT(a.gradient.lhs, 0.0);
  EXPECT_THROW(audit_gradient_bound(quadratic_1d(), grid(), {}, {}), ParameterError);
}

TEST(CoerciveAudit, QuadraticSourcePasses) {
  const ErgodicSolution s = solve_ergodic_normalized(quadratic_1d(), grid());
  const AuditReport r = audit_coercive_lower_bound(quadratic_1d(), s);
  EXPECT_TRUE(r.passed) << r.narrative;
  EXPECT_GE(r.constants.at("M1"), 0.01);
  EXPECT_TRUE(std::isfinite(r.constants.at("M3")));
}

TEST(CoerciveAudit, ReportsViolatingNodeWhenFloorIsUnreachable) {
  const ErgodicSolution s = solve_ergodic_normalized(quadratic_1d(), grid());
  const AuditReport r = audit_coercive_lower_bound(quadratic_1d(), s, {}, 1e3);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.narrative.find("at node"), std::string::npos);
}

TEST(ComparisonAudit, ConstantShiftOfZeroSource) {
  // f = 0 versus f = 1: w_lower = 0 and w_upper = 1/eps exactly.
  ProblemSpec zero;
  const AuditReport r = audit_comparison(zero, grid(), 1.0, 0.5);
  EXPECT_TRUE(r.passed) << r.narrative;
  EXPECT_NEAR(r.constants.at("max_gap"), 2.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.constants.at("shift_over_eps"), 2.0);
}

TEST(ComparisonAudit, ShiftGapEqualsDeltaOverEps) {
  for (double eps : {1.0, 0.01}) {
    const AuditReport r = audit_comparison(quadratic_1d(), grid(), 0.5, eps);
    EXPECT_TRUE(r.passed) << r.narrative;
    EXPECT_NEAR(r.constants.at("max_gap"), 0.5 / eps, 1e-8 * (1.0 + 0.5 / eps));
  }
}

TEST(ComparisonAudit, RandomOrderedSources) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Grid g(1, 4.0, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    ProblemSpec lo = quadratic_1d();
    lo.alpha = {CoefficientField::constant(0.5 + u(rng)), CoefficientField::constant(0.5 + u(rng))};
    lo.hamiltonians.states[0].gamma = 1.5 + u(rng);
    lo.hamiltonians.states[1].gamma = 1.5 + u(rng);
    ProblemSpec hi = lo;
    for (int k = 0; k < 2; ++k) {
      lo.f[k] = CoefficientField::quadratic_form(u(rng) - 0.5, {0.5 + u(rng)});
      hi.f[k] = lo.f[k] + CoefficientField::quadratic_form(u(rng), {u(rng)});
    }
    const AuditReport r = audit_comparison(lo, hi, g, 0.1 + u(rng));
    EXPECT_TRUE(r.passed) << "trial " << trial << ": " << r.narrative;
  }
}

TEST(ComparisonAudit, ReversedSourcesAreReported) {
  ProblemSpec hi = quadratic_1d();
  for (int k = 0; k < 2; ++k) hi.f[k] = hi.f[k].shifted(1.0);
  const AuditReport r = audit_comparison(hi, quadratic_1d(), grid(), 1.0);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.constants.at("max_violation"), 1.0, 1e-8);
  EXPECT_NE(r.narrative.find("ordering violated"), std::string::npos);
  EXPECT_THROW(audit_comparison(quadratic_1d(), grid(), 0.0, 1.0), ParameterError);
  EXPECT_THROW(audit_comparison(quadratic_1d(), grid(), 1.0, 0.0), ParameterError);
}

TEST(DualityAudit, ExtractedFeedbackSatisfiesLegendreIdentity) {
  for (const ProblemSpec& p : {quadratic_1d(), asymmetric_1d()}) {
    const ErgodicSolution s = solve_ergodic_normalized(p, grid());
    const AuditReport r = audit_duality(p, s);
    EXPECT_TRUE(r.passed) << r.narrative;
    EXPECT_LE(r.constants.at("duality_residual"), 1e-9);
  }
  ProblemSpec q = quadratic_1d();
  q.hamiltonians.states[0].gamma = 1.5;
  q.hamiltonians.states[1].gamma = 3.0;
  const ErgodicSolution s = solve_ergodic_normalized(q, Grid(1, 4.0, 0.05));
  EXPECT_TRUE(audit_duality(q, s).passed);
}

TEST(MMatrixAudit, OptimalPolicyOperator) {
  const ErgodicSolution s = solve_ergodic_normalized(asymmetric_1d(), grid());
  const AuditReport r = audit_m_matrix(asymmetric_1d(), s);
  EXPECT_TRUE(r.passed) << r.narrative;
  EXPECT_LE(r.constants.at("max_off_diagonal"), 0.0);
  EXPECT_GE(r.constants.at("min_dominance_margin"), -1e-9);
}

TEST(TruncationAudit, QuarticHamiltonian) {
  ProblemSpec p = quadratic_1d();
  p.hamiltonians.states[0].gamma = p.hamiltonians.states[1].gamma = 4.0;
  const AuditReport r = audit_truncation(p, Grid(1, 4.0, 0.05));
  EXPECT_TRUE(r.passed) << r.narrative;
  EXPECT_GT(r.constants.at("n"), r.constants.at("sup_H"));
  // The wall layer drives H above n, so the truncation is exercised.
  EXPECT_GT(r.constants.at("sup_H_with_wall"), r.constants.at("n"));
  EXPECT_LE(r.constants.at("relative_difference"), 0.01);
}

TEST(ConsistencyReport, PassAndFailBranches) {
  ConsistencyInputs in;
  in.lambda_pde = 1.414;
  in.lambda_lp = 1.42;
  in.tol_lp_grid = 0.01;
  in.lambda_mc = 1.425;
  in.mc_std_error = 0.005;
  in.tol_dt_h = 0.001;
  EXPECT_TRUE(consistency_report(in).passed);
  in.lambda_lp = 1.43;
  const AuditReport lp_fail = consistency_report(in);
  EXPECT_FALSE(lp_fail.passed);
  EXPECT_NEAR(lp_fail.lhs, 0.016, 1e-12);
  in.lambda_lp.reset();
  in.lambda_mc = 1.5;
  const AuditReport mc_fail = consistency_report(in);
  EXPECT_FALSE(mc_fail.passed);
  EXPECT_NE(mc_fail.narrative.find("suboptimal"), std::string::npos);
  EXPECT_DOUBLE_EQ(mc_fail.constants.at("gap_mc_bound"), 0.016);
}

TEST(ConsistencyReport, DoubledControlIsDetectedAsSuboptimal) {
  const ProblemSpec p = quadratic_1d();
  const ErgodicSolution s = solve_ergodic_normalized(p, grid());
  ExtractedControl c = extract_control(p, s);
  SimulationParams prm;
  prm.paths = 200;
  prm.T = 20.0;
  prm.dt = 2e-3;
  prm.seed = 1;

  auto run = [&](const ControlFieldPair& field) {
    const SimulationEstimate e = simulate_paths(p, FeedbackControl::sampled(grid(), field), prm);
    ConsistencyInputs in;
    in.lambda_pde = s.lambda;
    in.lambda_mc = e.lambda_hat;
    in.mc_std_error = e.std_error;
    in.tol_dt_h = 0.01 * s.lambda;
    return consistency_report(in);
  };
  EXPECT_TRUE(run(c.controls).passed);
  for (auto& xi : c.controls.xi) xi *= 2.0;
  const AuditReport bad = run(c.controls);
  EXPECT_FALSE(bad.passed);
  // Linear feedback 2 sqrt(2) x costs (1 + 4) / (2 sqrt(2)) in the long run.
  EXPECT_NEAR(bad.constants.at("lambda_mc"), 5.0 / (2.0 * std::sqrt(2.0)), 0.05);
}

TEST(AuditOutput, MarkdownAndAggregate) {
  AuditReport a, b;
  a.name = "alpha";
  a.narrative = "fine";
  a.constants["x"] = 1.5;
  b.name = "beta";
  b.passed = false;
  b.narrative = "broken";
  b.worst_node = 3;
  b.worst_state = 2;
  b.worst_x = Vec::Constant(1, 0.25);
  EXPECT_TRUE(all_passed({a}));
  EXPECT_FALSE(all_passed({a, b}));
  std::ostringstream os;
  write_audits_markdown(os, {a, b});
  const std::string t = os.str();
  EXPECT_NE(t.find("| alpha | pass | fine |"), std::string::npos);
  EXPECT_NE(t.find("| beta | FAIL | broken |"), std::string::npos);
  EXPECT_NE(t.find("worst node: 3 (state 2"), std::string::npos);
}
