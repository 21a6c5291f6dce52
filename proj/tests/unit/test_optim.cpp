#include <gtest/gtest.h>

#include <random>

#include "../support/oracles.hpp"
#include "segtariff/optim.hpp"

using namespace segtariff;
using namespace segtariff::optim;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

QpProblem box_qp(const MatrixXd & Q, const VectorXd & c)
{
  QpProblem p;
  p.quadratic = Q;
  p.linear = c;
  return p;
}

/// H prices, one group, linear demand alpha + beta p, cost c: profit (p-c)'(alpha + beta p).
NlpProblem pricing_instance(std::mt19937_64 & rng, int H, bool cap, bool fp)
{
  std::uniform_real_distribution<double> U(0.0, 1.0);
  MatrixXd beta = MatrixXd::Zero(H, H);
  VectorXd alpha(H), cost(H);
  for (int h = 0; h < H; ++h) {
    beta(h, h) = -(0.5 + 2.0 * U(rng));
    alpha[h] = 30.0 + 40.0 * U(rng);
    cost[h] = 3.0 + 4.0 * U(rng);
  }
  for (int h = 0; h < H; ++h) {
    for (int l = 0; l < H; ++l) {
      if (h != l) { beta(h, l) = 0.4 * U(rng) * -beta(l, l) / H; }
    }
  }
  NlpProblem p;
  p.objective.hessian = beta + beta.transpose();
  p.objective.gradient = alpha - beta.transpose() * cost;
  p.objective.constant = -cost.dot(alpha);
  p.lower = cost;
  p.upper = VectorXd::Constant(H, 25.0);
  if (fp) {
    p.eq_matrix = MatrixXd::Ones(1, H);
    p.eq_rhs = VectorXd::Constant(1, 12.0 * H);
  }
  if (cap) {
    Quadratic g;
    g.hessian = beta + beta.transpose();
    g.gradient = alpha;
    // Cap below the unconstrained revenue so it binds.
    const VectorXd mid = (p.lower + p.upper) / 2;
    g.constant = -(0.6 + 0.3 * U(rng)) * mid.dot(alpha + beta * mid);
    p.constraint = g;
  }
  return p;
}

}  // namespace

TEST(SolveQp, ActiveLowerBound)
{
  QpProblem p = box_qp(MatrixXd::Constant(1, 1, 2.0), VectorXd::Zero(1));
  p.lower = VectorXd::Constant(1, 3.0);
  const Solution s = solve_qp(p);
  ASSERT_EQ(s.status, Status::optimal);
  EXPECT_NEAR(s.point[0], 3.0, 1e-12);
  EXPECT_NEAR(s.objective, 9.0, 1e-12);
  EXPECT_LE(s.kkt_residual, 1e-6);
}

TEST(SolveQp, UnconstrainedProjection)
{
  const VectorXd c = (VectorXd(3) << 1.5, -2.0, 0.25).finished();
  const Solution s = solve_qp(box_qp(2.0 * MatrixXd::Identity(3, 3), -2.0 * c));
  ASSERT_EQ(s.status, Status::optimal);
  EXPECT_LE((s.point - c).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SolveQp, EqualityAndInequality)
{
  // min x^2 + y^2 s.t. x + y = 2, x <= 0.5
  QpProblem p = box_qp(2.0 * MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  p.eq_matrix = MatrixXd::Ones(1, 2);
  p.eq_rhs = VectorXd::Constant(1, 2.0);
  p.ineq_matrix = (MatrixXd(1, 2) << 1.0, 0.0).finished();
  p.ineq_rhs = VectorXd::Constant(1, 0.5);
  const Solution s = solve_qp(p);
  ASSERT_EQ(s.status, Status::optimal);
  EXPECT_NEAR(s.point[0], 0.5, 1e-12);
  EXPECT_NEAR(s.point[1], 1.5, 1e-12);
  EXPECT_LE(s.ineq_multipliers[0], 0.0);
  EXPECT_LE(s.kkt_residual, 1e-9);
}

TEST(SolveQp, InfeasibleReportsDiagnostic)
{
  QpProblem p = box_qp(MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  p.ineq_matrix = (MatrixXd(2, 2) << 1.0, 1.0, -1.0, -1.0).finished();
  p.ineq_rhs = (VectorXd(2) << -1.0, -1.0).finished();
  const Solution s = solve_qp(p);
  EXPECT_EQ(s.status, Status::infeasible);
  EXPECT_FALSE(s.diagnostic.empty());
}

TEST(SolveQp, UnboundedThrows)
{
  QpProblem p = box_qp(MatrixXd::Zero(2, 2), (VectorXd(2) << 1.0, 0.0).finished());
  try {
    solve_qp(p);
    FAIL() << "expected an error";
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::solver);
  }
}

TEST(SolveQp, SingularHessianGivesMinimumNorm)
{
  // min (x + y - 2)^2: every point on the line is optimal; expect (1, 1).
  QpProblem p = box_qp(2.0 * MatrixXd::Ones(2, 2), VectorXd::Constant(2, -4.0));
  const Solution s = solve_qp(p);
  ASSERT_EQ(s.status, Status::optimal);
  EXPECT_NEAR(s.point[0], 1.0, 1e-6);
  EXPECT_NEAR(s.point[1], 1.0, 1e-6);
}

TEST(SolveQp, RejectsAsymmetricHessian)
{
  QpProblem p = box_qp((MatrixXd(2, 2) << 1.0, 0.5, 0.0, 1.0).finished(), VectorXd::Zero(2));
  EXPECT_THROW(solve_qp(p), Error);
}

TEST(SolveQp, MatchesEnumerationOracle)
{
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + trial % 5;
    const int rank = trial % 3 == 0 ? std::max(1, n - 1) : n;
    QpProblem p = oracle::random_qp(rng, n, rank, trial % 4 == 0 ? 1 : 0, trial % 3);
    const double ref = oracle::qp_enumerate(p);
    const Solution s = solve_qp(p);
    ASSERT_EQ(s.status, Status::optimal) << "trial " << trial << ": " << s.diagnostic;
    EXPECT_NEAR(s.objective, ref, 1e-6 * (1.0 + std::abs(ref))) << "trial " << trial;
    EXPECT_LE(s.kkt_residual, 1e-6) << "trial " << trial;
    for (int j = 0; j < n; ++j) {
      EXPECT_GE(s.point[j], p.lower[j] - 1e-8);
      EXPECT_LE(s.point[j], p.upper[j] + 1e-8);
    }
  }
}

TEST(MaximizePricing, SeparableConcaveMatchesClamp)
{
  // maximize -(x - t)^2 on a box: the answer is clamp(t).
  const VectorXd t = (VectorXd(4) << -3.0, 0.2, 1.7, 9.0).finished();
  NlpProblem p;
  p.objective.hessian = -2.0 * MatrixXd::Identity(4, 4);
  p.objective.gradient = 2.0 * t;
  p.objective.constant = -t.squaredNorm();
  p.lower = VectorXd::Constant(4, -1.0);
  p.upper = VectorXd::Constant(4, 2.0);
  const Solution s = maximize_pricing(p, {.starts = 4, .seed = 1});
  const VectorXd expect = t.cwiseMax(p.lower).cwiseMin(p.upper);
  EXPECT_LE((s.point - expect).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(s.status, Status::optimal);
  EXPECT_TRUE(s.proven_global);
}

TEST(MaximizePricing, MatchesGridOracle)
{
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const NlpProblem p = pricing_instance(rng, 2, trial % 2 == 1, false);
    const Solution grid = grid_oracle(p, 0.01);
    const Solution s = maximize_pricing(p, {.starts = 8, .seed = static_cast<std::uint64_t>(trial)});
    ASSERT_NE(s.status, Status::infeasible);
    ASSERT_NE(grid.status, Status::infeasible);
    EXPECT_GE(s.objective, grid.objective - 1e-3 * std::abs(grid.objective)) << "trial " << trial;
  }
}

TEST(MaximizePricing, ConvexCaseMatchesQp)
{
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 6; ++trial) {
    const NlpProblem p = pricing_instance(rng, 4, false, true);
    if (!objective_is_concave(p)) { continue; }
    QpProblem q;
    q.quadratic = -p.objective.hessian;
    q.linear = -p.objective.gradient;
    q.eq_matrix = p.eq_matrix;
    q.eq_rhs = p.eq_rhs;
    q.lower = p.lower;
    q.upper = p.upper;
    const Solution ref = solve_qp(q);
    const Solution s = maximize_pricing(p, {.starts = 4, .seed = 3});
    EXPECT_NEAR(s.objective, -ref.objective + p.objective.constant, 1e-6 * (1.0 + std::abs(s.objective)));
  }
}

TEST(MaximizePricing, BindingCapIsTight)
{
  std::mt19937_64 rng(3);
  const NlpProblem p = pricing_instance(rng, 3, true, true);
  NlpProblem free = p;
  free.constraint.reset();
  const Solution capped = maximize_pricing(p, {.starts = 8, .seed = 2});
  const Solution uncapped = maximize_pricing(free, {.starts = 8, .seed = 2});
  ASSERT_NE(capped.status, Status::infeasible);
  ASSERT_GT(p.constraint->value(uncapped.point), 0.0) << "cap does not bind on this instance";
  const double scale = std::abs(p.constraint->constant);
  EXPECT_LE(p.constraint->value(capped.point), 1e-6 * scale);
  EXPECT_GE(p.constraint->value(capped.point), -1e-6 * scale);
  EXPECT_NEAR(capped.point.sum(), p.eq_rhs[0], 1e-8);
  // Any cap-feasible point on the segment towards the uncapped optimum is no better.
  const VectorXd d = uncapped.point - capped.point;
  const double t = segtariff::optim::detail::first_crossing(*p.constraint, capped.point, d);
  EXPECT_GE(capped.objective, p.objective.value(capped.point + t * d) - 1e-9 * std::abs(capped.objective));
}

TEST(MaximizePricing, MoreStartsNeverWorse)
{
  std::mt19937_64 rng(21);
  NlpProblem p = pricing_instance(rng, 4, false, true);
  // Make the objective indefinite so local optima can differ.
  p.objective.hessian(0, 1) = p.objective.hessian(1, 0) = 6.0;
  double prev = -inf;
  for (std::size_t starts : {1, 2, 4, 8, 16}) {
    const Solution s = maximize_pricing(p, {.starts = starts, .seed = 9});
    EXPECT_GE(s.objective, prev);
    prev = s.objective;
  }
}

TEST(MaximizePricing, CapCertificateBeatsAscentAndSamples)
{
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int certified = 0;
  for (int rep = 0; rep < 8; ++rep) {
    const NlpProblem p = pricing_instance(rng, 4, true, rep % 2 == 0);
    const auto x = detail::dual_bisection(p);
    const Solution s = maximize_pricing(p, {.starts = 4, .seed = 1});
    if (!x) {
      // Cap tighter than any concave Lagrangian can reach: local search only.
      EXPECT_FALSE(s.proven_global);
      continue;
    }
    ++certified;
    const double fx = p.objective.value(*x);
    EXPECT_LE(p.constraint->value(*x), 1e-6 * std::abs(p.constraint->constant));
    EXPECT_TRUE(s.proven_global);
    EXPECT_NEAR(s.objective, fx, 1e-9 * std::abs(fx));

    const detail::FeasibleSet set(p);
    for (int k = 0; k < 3; ++k) {
      VectorXd v(p.size());
      for (Eigen::Index j = 0; j < v.size(); ++j) { v[j] = p.lower[j] + U(rng) * (p.upper[j] - p.lower[j]); }
      auto start = detail::restore_feasibility(p, set, set.project(v));
      if (!start) { continue; }
      const auto local = detail::ascend(p, set, *start, 20000, 0, nullptr);
      if (local.feasible) { EXPECT_LE(local.value, fx + 1e-7 * std::abs(fx)); }
    }
    for (int k = 0; k < 20000; ++k) {
      VectorXd v(p.size());
      for (Eigen::Index j = 0; j < v.size(); ++j) { v[j] = p.lower[j] + U(rng) * (p.upper[j] - p.lower[j]); }
      v = set.project(v);
      if (p.constraint->value(v) <= 0.0) { EXPECT_LE(p.objective.value(v), fx + 1e-9 * std::abs(fx)); }
    }
  }
  EXPECT_GE(certified, 5);
}

TEST(MaximizePricing, DeterministicGivenSeed)
{
  std::mt19937_64 rng(4);
  const NlpProblem p = pricing_instance(rng, 3, true, true);
  const Solution a = maximize_pricing(p, {.starts = 6, .seed = 42});
  const Solution b = maximize_pricing(p, {.starts = 6, .seed = 42});
  EXPECT_EQ(a.point, b.point);
  EXPECT_EQ(a.objective, b.objective);
}

TEST(MaximizePricing, InfeasibleEqualityThrows)
{
  NlpProblem p;
  p.objective.hessian = -MatrixXd::Identity(2, 2);
  p.objective.gradient = VectorXd::Zero(2);
  p.lower = VectorXd::Zero(2);
  p.upper = VectorXd::Ones(2);
  p.eq_matrix = MatrixXd::Ones(1, 2);
  p.eq_rhs = VectorXd::Constant(1, 5.0);
  try {
    maximize_pricing(p);
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
  }
}

TEST(MaximizePricing, TraceIsNonDecreasingPerStart)
{
  std::mt19937_64 rng(8);
  const NlpProblem p = pricing_instance(rng, 3, true, true);
  std::vector<TraceRow> trace;
  maximize_pricing(p, {.starts = 3, .seed = 1, .trace = &trace});
  ASSERT_FALSE(trace.empty());
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].start == trace[i - 1].start) { EXPECT_GE(trace[i].objective, trace[i - 1].objective); }
  }
}

TEST(GridOracle, OneDimensionalConcave)
{
  NlpProblem p;
  p.objective.hessian = MatrixXd::Constant(1, 1, -2.0);
  p.objective.gradient = VectorXd::Constant(1, 2.0 * 3.14159);
  p.lower = VectorXd::Zero(1);
  p.upper = VectorXd::Constant(1, 10.0);
  const Solution s = grid_oracle(p, 0.01);
  EXPECT_NEAR(s.point[0], 3.14159, 0.01);
}

TEST(GridOracle, ExactOnFlatPriceLineWithCap)
{
  // Two hours and a flat price leave one free variable, scanned exactly, so
  // the local solver can never do better. Optima sit on the cap boundary where
  // rounding in the cap value is around 1e-12.
  std::mt19937_64 rng(21);
  int binding = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const NlpProblem p = pricing_instance(rng, 2, true, true);
    const Solution grid = grid_oracle(p, 0.01);
    const Solution s = maximize_pricing(p, {.starts = 4, .seed = 1});
    if (s.status == Status::infeasible) {
      EXPECT_EQ(grid.status, Status::infeasible);
      continue;
    }
    ASSERT_EQ(grid.status, Status::optimal) << trial;
    EXPECT_LE(p.constraint->value(grid.point), 0.0);
    EXPECT_GE(grid.objective, s.objective - 1e-9 * (1.0 + std::abs(s.objective))) << trial;
    binding += p.constraint->value(s.point) > -1e-6 ? 1 : 0;
  }
  EXPECT_GE(binding, 20);
}

TEST(GridOracle, ContradictoryConstraintsAreInfeasible)
{
  NlpProblem p;
  p.objective.hessian = -MatrixXd::Identity(3, 3);
  p.objective.gradient = VectorXd::Zero(3);
  p.lower = VectorXd::Zero(3);
  p.upper = VectorXd::Ones(3);
  p.eq_matrix = MatrixXd::Ones(1, 3);
  p.eq_rhs = VectorXd::Constant(1, 4.0);
  EXPECT_EQ(grid_oracle(p, 0.01).status, Status::infeasible);
}

TEST(GridOracle, RejectsLargeDimensionAndBadResolution)
{
  NlpProblem p;
  p.objective.hessian = -MatrixXd::Identity(5, 5);
  p.objective.gradient = VectorXd::Zero(5);
  p.lower = VectorXd::Zero(5);
  p.upper = VectorXd::Ones(5);
  EXPECT_THROW(grid_oracle(p, 0.1), Error);
  p.eq_matrix = MatrixXd::Ones(1, 5);
  p.eq_rhs = VectorXd::Constant(1, 2.0);
  EXPECT_THROW(grid_oracle(p, 0.0), Error);
}

TEST(GridOracle, NeverBeatsLocalSolverBeyondSlack)
{
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 8; ++trial) {
    const NlpProblem p = pricing_instance(rng, 3, trial % 2 == 0, true);
    const Solution grid = grid_oracle(p, 0.05);
    const Solution s = maximize_pricing(p, {.starts = 8, .seed = 1});
    EXPECT_LE(grid.objective, s.objective + 1e-3 * std::abs(s.objective));
  }
}
