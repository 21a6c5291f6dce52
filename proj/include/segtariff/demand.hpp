#ifndef SEGTARIFF_DEMAND_HPP_
#define SEGTARIFF_DEMAND_HPP_

/**
 * @file
 * @brief Linear price-demand models R = alpha + beta * p per customer group,
 * fitted by constrained weighted least squares.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segtariff/error.hpp"
#include "segtariff/optim.hpp"
#include "segtariff/rng.hpp"

namespace segtariff::demand {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct FitDiagnostics
{
  double weighted_rss = 0.0;
  std::vector<double> r_squared;  ///< per hour
  bool rank_deficient = false;
  bool regularized = false;
  double effective_observations = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
  std::vector<std::string> active_constraints;
};

/// R_h(p) = alpha_h + sum_l beta(h, l) p_l. Units: kWh and kWh per cent.
struct DemandModel
{
  std::string group;
  VectorXd alpha;
  MatrixXd beta;
  double lambda = 1.0;
  FitDiagnostics diagnostics;

  Eigen::Index horizon() const { return alpha.size(); }

  void validate() const
  {
    const Eigen::Index h = alpha.size();
    if (h == 0) { fail_validation("DemandModel '" + group + "': empty horizon"); }
    if (beta.rows() != h || beta.cols() != h) { fail_validation("DemandModel '" + group + "': beta shape"); }
    if (!alpha.allFinite() || !beta.allFinite()) { fail_validation("DemandModel '" + group + "': non-finite coefficient"); }
  }
};

/// Daily prices and aggregate group demand, one row per day (oldest first).
struct FitHistory
{
  MatrixXd prices;
  MatrixXd demands;

  void validate() const
  {
    if (prices.rows() != demands.rows() || prices.cols() != demands.cols()) {
      fail_validation("FitHistory: prices and demands differ in shape");
    }
    if (prices.rows() == 0 || prices.cols() == 0) { fail_validation("FitHistory: empty history"); }
    if (!prices.allFinite() || !demands.allFinite()) { fail_validation("FitHistory: non-finite value"); }
    if (prices.minCoeff() <= 0.0) { fail_validation("FitHistory: prices must be positive"); }
    if (demands.minCoeff() < 0.0) { fail_validation("FitHistory: demands must be nonnegative"); }
  }
};

inline VectorXd predict_demand(const DemandModel & m, const VectorXd & prices)
{
  if (prices.size() != m.horizon()) {
    fail_validation("predict_demand: expected " + std::to_string(m.horizon()) + " prices, got " +
                    std::to_string(prices.size()));
  }
  return m.alpha + m.beta * prices;
}

/**
 * Weighted least squares with forgetting factor lambda (day d weighted by
 * lambda^(D-1-d)), subject to beta(h,h) <= 0, beta(h,l) >= 0 for h != l and
 * nonpositive column sums of beta. Solved as one convex QP over all hours.
 */
inline DemandModel fit_demand_model(const FitHistory & hist, double lambda, const std::string & group = "")
{
  hist.validate();
  if (!(lambda > 0.0 && lambda <= 1.0)) { fail_validation("fit_demand_model: lambda must lie in (0, 1]"); }
  const Eigen::Index D = hist.prices.rows(), H = hist.prices.cols(), B = H + 1, n = H * B;

  VectorXd w(D);
  for (Eigen::Index d = 0; d < D; ++d) { w[d] = std::pow(lambda, static_cast<double>(D - 1 - d)); }
  const double wsum = w.sum();

  // Centre prices so intercepts decouple from slopes, then scale columns.
  const Eigen::RowVectorXd pbar = (w.transpose() * hist.prices) / wsum;
  MatrixXd X(D, B);
  X.col(0).setOnes();
  X.rightCols(H) = hist.prices.rowwise() - pbar;
  const MatrixXd gram = X.transpose() * w.asDiagonal() * X;
  VectorXd scale(B);
  for (Eigen::Index j = 0; j < B; ++j) { scale[j] = gram(j, j) > 0.0 ? 1.0 / std::sqrt(gram(j, j)) : 1.0; }
  const MatrixXd block = 2.0 * scale.asDiagonal() * gram * scale.asDiagonal();

  optim::QpProblem qp;
  qp.quadratic = MatrixXd::Zero(n, n);
  qp.linear = VectorXd::Zero(n);
  qp.lower = VectorXd::Constant(n, -optim::inf);
  qp.upper = VectorXd::Constant(n, optim::inf);
  qp.ineq_matrix = MatrixXd::Zero(H, n);
  qp.ineq_rhs = VectorXd::Zero(H);
  const MatrixXd XtW = X.transpose() * w.asDiagonal();
  for (Eigen::Index h = 0; h < H; ++h) {
    const Eigen::Index off = h * B;
    qp.quadratic.block(off, off, B, B) = block;
    qp.linear.segment(off, B) = -2.0 * scale.asDiagonal() * (XtW * hist.demands.col(h));
    for (Eigen::Index l = 0; l < H; ++l) {
      const Eigen::Index v = off + 1 + l;
      if (l == h) {
        qp.upper[v] = 0.0;
      } else {
        qp.lower[v] = 0.0;
      }
      qp.ineq_matrix(l, v) = scale[1 + l];
    }
  }

  DemandModel m;
  m.group = group;
  m.lambda = lambda;
  auto & diag = m.diagnostics;
  diag.effective_observations = wsum * wsum / w.squaredNorm();
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(block, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    diag.rank_deficient = diag.effective_observations < static_cast<double>(B) || es.eigenvalues().minCoeff() <= 1e-12 * top;
    diag.regularized = es.eigenvalues().minCoeff() <= 1e-13 * std::max(1.0, top);
  }

  const optim::Solution sol = optim::solve_qp(qp);
  if (sol.status != optim::Status::optimal) {
    fail_solver("fit_demand_model: QP did not converge (" + std::string(optim::to_string(sol.status)) + "): " + sol.diagnostic);
  }
  diag.kkt_residual = sol.kkt_residual;
  diag.iterations = sol.iterations;

  m.alpha.resize(H);
  m.beta.resize(H, H);
  for (Eigen::Index h = 0; h < H; ++h) {
    const VectorXd theta = scale.asDiagonal() * sol.point.segment(h * B, B);
    m.beta.row(h) = theta.tail(H).transpose();
    m.alpha[h] = theta[0];
  }
  // Remove rounding-level sign violations so the model is exactly consistent.
  const double tiny = 1e-9 * std::max(1.0, m.beta.cwiseAbs().maxCoeff());
  for (Eigen::Index h = 0; h < H; ++h) {
    for (Eigen::Index l = 0; l < H; ++l) {
      double & b = m.beta(h, l);
      const bool bad = h == l ? b > 0.0 : b < 0.0;
      if (!bad) { continue; }
      if (std::abs(b) > tiny) { fail_solver("fit_demand_model: solver returned a sign violation"); }
      b = 0.0;
    }
  }
  for (Eigen::Index l = 0; l < H; ++l) {
    const double s = m.beta.col(l).sum();
    if (s > 0.0) {
      if (s > tiny) { fail_solver("fit_demand_model: solver returned a column-sum violation"); }
      m.beta(l, l) -= s;
    }
  }
  for (Eigen::Index h = 0; h < H; ++h) { m.alpha[h] -= m.beta.row(h).dot(pbar.transpose()); }

  // Diagnostics in original units.
  const MatrixXd fitted = (hist.prices * m.beta.transpose()).rowwise() + m.alpha.transpose();
  const MatrixXd resid = hist.demands - fitted;
  diag.weighted_rss = (w.asDiagonal() * resid.cwiseAbs2()).sum();
  diag.r_squared.resize(static_cast<std::size_t>(H));
  for (Eigen::Index h = 0; h < H; ++h) {
    const double ybar = w.dot(hist.demands.col(h)) / wsum;
    const double tss = w.dot((hist.demands.col(h).array() - ybar).square().matrix());
    const double rss = w.dot(resid.col(h).cwiseAbs2());
    diag.r_squared[static_cast<std::size_t>(h)] = tss > 0.0 ? 1.0 - rss / tss : (rss <= 1e-18 ? 1.0 : 0.0);
  }
  const double act = 1e-10 * std::max(1.0, m.beta.cwiseAbs().maxCoeff());
  for (Eigen::Index h = 0; h < H; ++h) {
    for (Eigen::Index l = 0; l < H; ++l) {
      if (std::abs(m.beta(h, l)) <= act) {
        diag.active_constraints.push_back("beta[" + std::to_string(h) + "][" + std::to_string(l) + (h == l ? "]<=0" : "]>=0"));
      }
    }
  }
  for (Eigen::Index l = 0; l < H; ++l) {
    if (std::abs(m.beta.col(l).sum()) <= act * static_cast<double>(H)) {
      diag.active_constraints.push_back("column_sum[" + std::to_string(l) + "]<=0");
    }
  }
  return m;
}

struct ConsistencyReport
{
  bool consistent = true;
  std::vector<std::string> violations;
  std::size_t pairs_checked = 0;
  std::size_t pair_violations = 0;
  double worst_pair_gap = 0.0;
};

/// Checks the sign and column-sum conditions and, numerically, that raising
/// prices never raises total demand.
inline ConsistencyReport check_market_consistency(const DemandModel & m, std::uint64_t seed = 0, std::size_t pairs = 1000,
  double tolerance = 1e-9)
{
  m.validate();
  ConsistencyReport rep;
  const Eigen::Index H = m.horizon();
  for (Eigen::Index h = 0; h < H; ++h) {
    for (Eigen::Index l = 0; l < H; ++l) {
      const double b = m.beta(h, l);
      if (h == l && b > tolerance) {
        rep.violations.push_back("self coefficient positive at h=" + std::to_string(h));
      } else if (h != l && b < -tolerance) {
        rep.violations.push_back("cross coefficient negative at h=" + std::to_string(h) + ", l=" + std::to_string(l));
      }
    }
  }
  for (Eigen::Index l = 0; l < H; ++l) {
    if (m.beta.col(l).sum() > tolerance) { rep.violations.push_back("column sum positive at h=" + std::to_string(l)); }
  }
  Rng rng(derive_seed(seed, "consistency"));
  for (std::size_t k = 0; k < pairs; ++k) {
    VectorXd p1(H), p2(H);
    for (Eigen::Index h = 0; h < H; ++h) {
      const double a = 1.0 + 29.0 * uniform01(rng), b = 1.0 + 29.0 * uniform01(rng);
      p1[h] = std::min(a, b);
      p2[h] = std::max(a, b);
    }
    const double gap = predict_demand(m, p2).sum() - predict_demand(m, p1).sum();
    ++rep.pairs_checked;
    rep.worst_pair_gap = std::max(rep.worst_pair_gap, gap);
    if (gap > tolerance) { ++rep.pair_violations; }
  }
  if (rep.pair_violations) {
    rep.violations.push_back(std::to_string(rep.pair_violations) + " price pairs raised total demand");
  }
  rep.consistent = rep.violations.empty();
  return rep;
}

/// Elementwise sum of group models (demands are group totals).
inline DemandModel aggregate_models(const std::vector<DemandModel> & models, const std::string & group = "aggregate")
{
  if (models.empty()) { fail_validation("aggregate_models: no models"); }
  DemandModel out;
  out.group = group;
  out.alpha = VectorXd::Zero(models.front().horizon());
  out.beta = MatrixXd::Zero(out.alpha.size(), out.alpha.size());
  out.lambda = models.front().lambda;
  for (const auto & m : models) {
    m.validate();
    if (m.horizon() != out.alpha.size()) { fail_validation("aggregate_models: horizon mismatch"); }
    out.alpha += m.alpha;
    out.beta += m.beta;
  }
  return out;
}

}  // namespace segtariff::demand

#endif  // SEGTARIFF_DEMAND_HPP_
