#ifndef SEGTARIFF_OPTIM_HPP_
#define SEGTARIFF_OPTIM_HPP_

/**
 * @file
 * @brief Solver kernel: convex QP, multi-start maximization of a quadratic
 * objective under box, linear equality and an optional quadratic inequality
 * constraint, and a grid oracle for small instances.
 */

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "segtariff/error.hpp"
#include "segtariff/rng.hpp"

namespace segtariff::optim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double inf = std::numeric_limits<double>::infinity();

enum class Status { optimal, local_optimal, max_iterations, infeasible };

inline const char * to_string(Status s)
{
  switch (s) {
  case Status::optimal: return "optimal";
  case Status::local_optimal: return "local-optimal";
  case Status::max_iterations: return "max-iterations";
  case Status::infeasible: return "infeasible";
  }
  return "unknown";
}

struct Solution
{
  VectorXd point;
  double objective = 0.0;
  Status status = Status::infeasible;
  double kkt_residual = inf;
  std::size_t iterations = 0;
  std::size_t starts_used = 0;
  /// Set when global optimality is certified (convex instance or exhaustive scan).
  bool proven_global = false;
  /// QP multipliers, sign convention: gradient = Aeq' y + Cineq' z, z <= 0 for C x <= d.
  VectorXd eq_multipliers;
  VectorXd ineq_multipliers;
  VectorXd lower_multipliers;
  VectorXd upper_multipliers;
  std::string diagnostic;
};

struct TraceRow
{
  std::size_t start;
  std::size_t iteration;
  double objective;
  double residual;
};

inline void write_trace_csv(const std::string & path, const std::vector<TraceRow> & trace)
{
  std::ofstream out(path);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out.precision(17);
  out << "start,iteration,objective,residual\n";
  for (const auto & r : trace) { out << r.start << ',' << r.iteration << ',' << r.objective << ',' << r.residual << '\n'; }
}

// ---------------------------------------------------------------------------
// Convex QP
// ---------------------------------------------------------------------------

/**
 * minimize 1/2 x' Q x + c' x
 * subject to  Aeq x = beq,  Cin x <= din,  lower <= x <= upper.
 *
 * Empty matrices mean "no such constraints"; bound vectors may be empty or
 * hold +-infinity entries.
 */
struct QpProblem
{
  MatrixXd quadratic;
  VectorXd linear;
  MatrixXd eq_matrix;
  VectorXd eq_rhs;
  MatrixXd ineq_matrix;
  VectorXd ineq_rhs;
  VectorXd lower;
  VectorXd upper;

  Eigen::Index size() const { return linear.size(); }

  void validate() const
  {
    const Eigen::Index n = linear.size();
    if (quadratic.rows() != n || quadratic.cols() != n) { fail_validation("QpProblem: quadratic term shape"); }
    if ((quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, quadratic.cwiseAbs().maxCoeff())) {
      fail_validation("QpProblem: quadratic term not symmetric");
    }
    if (eq_matrix.size() > 0 && (eq_matrix.cols() != n || eq_matrix.rows() != eq_rhs.size())) {
      fail_validation("QpProblem: equality constraint shape");
    }
    if (eq_matrix.size() == 0 && eq_rhs.size() != 0) { fail_validation("QpProblem: equality constraint shape"); }
    if (ineq_matrix.size() > 0 && (ineq_matrix.cols() != n || ineq_matrix.rows() != ineq_rhs.size())) {
      fail_validation("QpProblem: inequality constraint shape");
    }
    if (ineq_matrix.size() == 0 && ineq_rhs.size() != 0) { fail_validation("QpProblem: inequality constraint shape"); }
    if ((lower.size() != 0 && lower.size() != n) || (upper.size() != 0 && upper.size() != n)) {
      fail_validation("QpProblem: bound vector shape");
    }
    if (!quadratic.allFinite() || !linear.allFinite()) { fail_validation("QpProblem: non-finite data"); }
  }
};

struct QpOptions
{
  /// Proximal weight (relative to the largest diagonal of Q) used when Q is singular.
  double regularization = 1e-8;
  /// Relative constraint tolerance.
  double feasibility_tolerance = 1e-11;
  std::size_t max_iterations = 0;  ///< 0 = automatic
  std::size_t max_prox_rounds = 200;
};

namespace detail {

/// Constraint a' x >= b, with an optional single-variable fast path.
struct Row
{
  enum class Origin { equality, inequality, lower, upper } origin;
  Eigen::Index source;  // row in the originating block
  Eigen::Index unit = -1;
  double sign = 1.0;
  VectorXd dense;
  double rhs = 0.0;
  double norm = 1.0;

  double dot(const VectorXd & x) const { return unit >= 0 ? sign * x[unit] : dense.dot(x); }
  VectorXd jt(const MatrixXd & J) const  // J' a
  {
    return unit >= 0 ? VectorXd(sign * J.row(unit).transpose()) : VectorXd(J.transpose() * dense);
  }
};

inline std::vector<Row> collect_rows(const QpProblem & p, std::size_t & n_eq)
{
  std::vector<Row> rows;
  const Eigen::Index n = p.size();
  for (Eigen::Index i = 0; i < p.eq_matrix.rows(); ++i) {
    Row r{Row::Origin::equality, i};
    r.dense = p.eq_matrix.row(i).transpose();
    r.rhs = p.eq_rhs[i];
    r.norm = r.dense.norm();
    if (r.norm == 0.0) {
      if (std::abs(r.rhs) > 0.0) { fail_infeasible("QpProblem: zero equality row with nonzero rhs"); }
      continue;
    }
    rows.push_back(std::move(r));
  }
  n_eq = rows.size();
  for (Eigen::Index i = 0; i < p.ineq_matrix.rows(); ++i) {
    Row r{Row::Origin::inequality, i};
    r.dense = -p.ineq_matrix.row(i).transpose();
    r.rhs = -p.ineq_rhs[i];
    r.norm = r.dense.norm();
    if (r.norm == 0.0) {
      if (r.rhs > 0.0) { fail_infeasible("QpProblem: zero inequality row cannot be satisfied"); }
      continue;
    }
    rows.push_back(std::move(r));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (p.lower.size() && std::isfinite(p.lower[j])) {
      Row r{Row::Origin::lower, j, j, 1.0};
      r.rhs = p.lower[j];
      rows.push_back(std::move(r));
    }
    if (p.upper.size() && std::isfinite(p.upper[j])) {
      Row r{Row::Origin::upper, j, j, -1.0};
      r.rhs = -p.upper[j];
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/**
 * Goldfarb-Idnani dual active-set method for a strictly convex QP, given
 * J = L^{-T} from the Cholesky factor of the Hessian. Equalities come first
 * in `rows` and are never dropped.
 */
struct DualActiveSet
{
  const std::vector<Row> & rows;
  std::size_t n_eq;
  const MatrixXd & J0;
  double tol;
  std::size_t max_iter;

  MatrixXd J, R;
  std::vector<std::size_t> active;
  std::vector<double> u;
  std::size_t q = 0;
  double r_norm = 1.0;

  bool add_constraint(VectorXd & d)
  {
    const Eigen::Index n = J.rows();
    for (Eigen::Index j = n - 1; j >= static_cast<Eigen::Index>(q) + 1; --j) {
      double cc = d[j - 1], ss = d[j];
      const double h = std::hypot(cc, ss);
      if (h == 0.0) { continue; }
      d[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d[j - 1] = -h;
      } else {
        d[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = 0; k < n; ++k) {
        const double t1 = J(k, j - 1), t2 = J(k, j);
        J(k, j - 1) = t1 * cc + t2 * ss;
        J(k, j) = xny * (t1 + J(k, j - 1)) - t2;
      }
    }
    ++q;
    for (std::size_t i = 0; i < q; ++i) { R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q - 1)) = d[static_cast<Eigen::Index>(i)]; }
    const double diag = std::abs(d[static_cast<Eigen::Index>(q - 1)]);
    if (diag <= std::numeric_limits<double>::epsilon() * r_norm) { return false; }
    r_norm = std::max(r_norm, diag);
    return true;
  }

  void delete_constraint(std::size_t pos)
  {
    const Eigen::Index n = J.rows();
    for (std::size_t i = pos; i + 1 < q; ++i) {
      active[i] = active[i + 1];
      u[i] = u[i + 1];
      R.col(static_cast<Eigen::Index>(i)) = R.col(static_cast<Eigen::Index>(i + 1));
    }
    active.pop_back();
    u.pop_back();
    R.col(static_cast<Eigen::Index>(q - 1)).setZero();
    --q;
    for (std::size_t j = pos; j < q; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      double cc = R(jj, jj), ss = R(jj + 1, jj);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) { continue; }
      cc /= h;
      ss /= h;
      R(jj + 1, jj) = 0.0;
      if (cc < 0.0) {
        R(jj, jj) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R(jj, jj) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = jj + 1; k < static_cast<Eigen::Index>(q); ++k) {
        const double t1 = R(jj, k), t2 = R(jj + 1, k);
        R(jj, k) = t1 * cc + t2 * ss;
        R(jj + 1, k) = xny * (t1 + R(jj, k)) - t2;
      }
      for (Eigen::Index k = 0; k < n; ++k) {
        const double t1 = J(k, jj), t2 = J(k, jj + 1);
        J(k, jj) = t1 * cc + t2 * ss;
        J(k, jj + 1) = xny * (J(k, jj) + t1) - t2;
      }
    }
  }

  // Step directions for constraint normal with J' a = d: primal z, dual r.
  void directions(const VectorXd & d, VectorXd & z, VectorXd & r) const
  {
    const Eigen::Index n = J.rows(), qq = static_cast<Eigen::Index>(q);
    z = J.rightCols(n - qq) * d.tail(n - qq);
    r = R.topLeftCorner(qq, qq).triangularView<Eigen::Upper>().solve(d.head(qq));
  }

  double slack(std::size_t i, const VectorXd & x) const
  {
    return rows[i].dot(x) - rows[i].rhs;
  }

  double scaled_tol(std::size_t i, const VectorXd & x) const
  {
    return tol * (1.0 + std::abs(rows[i].rhs) + rows[i].norm * x.cwiseAbs().maxCoeff());
  }

  /// Returns status; x holds the solution on success.
  Status solve(VectorXd & x, const VectorXd & linear, const Eigen::LLT<MatrixXd> & llt, std::string & diag,
    std::size_t & iterations)
  {
    const Eigen::Index n = J0.rows();
    J = J0;
    R = MatrixXd::Zero(n, n);
    active.clear();
    u.clear();
    q = 0;
    r_norm = 1.0;
    x = -llt.solve(linear);

    VectorXd d, z, r;
    for (std::size_t i = 0; i < n_eq; ++i) {
      d = rows[i].jt(J);
      directions(d, z, r);
      const double zn = rows[i].dot(z);
      const double s = slack(i, x);
      if (z.norm() <= 1e-13 * d.norm()) {
        if (std::abs(s) <= scaled_tol(i, x) * 1e3) { continue; }  // redundant equality
        diag = "equality " + std::to_string(rows[i].source) + " is inconsistent with earlier equalities";
        return Status::infeasible;
      }
      const double t = -s / zn;
      x += t * z;
      for (std::size_t k = 0; k < q; ++k) { u[k] -= t * r[static_cast<Eigen::Index>(k)]; }
      active.push_back(i);
      u.push_back(t);
      if (!add_constraint(d)) {
        active.pop_back();
        u.pop_back();
        --q;
      }
    }

    std::vector<char> is_active(rows.size(), 0);
    for (auto a : active) { is_active[a] = 1; }
    for (iterations = 0;; ++iterations) {
      if (iterations >= max_iter) {
        diag = "iteration limit reached";
        return Status::max_iterations;
      }
      std::size_t p = rows.size();
      double worst = 0.0;
      for (std::size_t i = n_eq; i < rows.size(); ++i) {
        if (is_active[i]) { continue; }
        const double s = slack(i, x);
        if (s < -scaled_tol(i, x)) {
          const double v = s / rows[i].norm;
          if (v < worst) {
            worst = v;
            p = i;
          }
        }
      }
      if (p == rows.size()) { return Status::optimal; }

      double u_new = 0.0;
      double sp = slack(p, x);
      while (true) {
        d = rows[p].jt(J);
        directions(d, z, r);
        // partial step: first active inequality whose multiplier hits zero
        double t1 = inf;
        std::size_t drop = q;
        const double rtol = 1e-12 * (r.size() ? r.cwiseAbs().maxCoeff() : 0.0);
        for (std::size_t k = 0; k < q; ++k) {
          if (active[k] < n_eq) { continue; }
          const double rk = r[static_cast<Eigen::Index>(k)];
          if (rk > rtol) {
            const double ratio = u[k] / rk;
            if (ratio < t1) {
              t1 = ratio;
              drop = k;
            }
          }
        }
        const bool z_zero = z.norm() <= 1e-12 * d.norm();
        const double t2 = z_zero ? inf : -sp / rows[p].dot(z);
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) {
          diag = "constraint " + std::to_string(p) + " cannot be satisfied together with the active set {";
          for (std::size_t k = 0; k < q; ++k) {
            diag += (k ? ", " : "") + std::to_string(active[k]) + ":" + std::to_string(r[static_cast<Eigen::Index>(k)]);
          }
          diag += "} (Farkas weights)";
          return Status::infeasible;
        }
        if (z_zero) {
          for (std::size_t k = 0; k < q; ++k) { u[k] -= t * r[static_cast<Eigen::Index>(k)]; }
          u_new += t;
          is_active[active[drop]] = 0;
          delete_constraint(drop);
          continue;
        }
        x += t * z;
        for (std::size_t k = 0; k < q; ++k) { u[k] -= t * r[static_cast<Eigen::Index>(k)]; }
        u_new += t;
        if (t2 <= t1) {
          active.push_back(p);
          u.push_back(u_new);
          if (!add_constraint(d)) {
            diag = "degenerate constraint addition";
            return Status::max_iterations;
          }
          is_active[p] = 1;
          break;
        }
        is_active[active[drop]] = 0;
        delete_constraint(drop);
        sp = slack(p, x);
        if (++iterations >= max_iter) {
          diag = "iteration limit reached";
          return Status::max_iterations;
        }
      }
    }
  }
};

}  // namespace detail

/// KKT residual of a candidate QP solution (relative scale).
inline double qp_kkt_residual(const QpProblem & p, const Solution & s)
{
  const VectorXd & x = s.point;
  const double scale = 1.0 + p.linear.cwiseAbs().maxCoeff() +
                       (p.quadratic.size() ? p.quadratic.cwiseAbs().maxCoeff() : 0.0) * x.cwiseAbs().maxCoeff();
  VectorXd grad = p.quadratic * x + p.linear;
  if (p.eq_matrix.size()) { grad -= p.eq_matrix.transpose() * s.eq_multipliers; }
  if (p.ineq_matrix.size()) { grad -= p.ineq_matrix.transpose() * s.ineq_multipliers; }
  if (s.lower_multipliers.size()) { grad -= s.lower_multipliers; }
  if (s.upper_multipliers.size()) { grad -= s.upper_multipliers; }
  double res = grad.cwiseAbs().maxCoeff() / scale;
  auto feas = [&](double violation, double rhs) { return violation / (1.0 + std::abs(rhs)); };
  for (Eigen::Index i = 0; i < p.eq_matrix.rows(); ++i) {
    res = std::max(res, feas(std::abs(p.eq_matrix.row(i).dot(x) - p.eq_rhs[i]), p.eq_rhs[i]));
  }
  for (Eigen::Index i = 0; i < p.ineq_matrix.rows(); ++i) {
    const double slack = p.ineq_rhs[i] - p.ineq_matrix.row(i).dot(x);
    const double z = s.ineq_multipliers[i];
    res = std::max(res, feas(std::max(0.0, -slack), p.ineq_rhs[i]));
    res = std::max(res, std::max(0.0, z) / scale);
    res = std::max(res, std::abs(z * slack) / (scale * (1.0 + std::abs(p.ineq_rhs[i]))));
  }
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (p.lower.size() && std::isfinite(p.lower[j])) {
      const double slack = x[j] - p.lower[j], z = s.lower_multipliers[j];
      res = std::max({res, feas(std::max(0.0, -slack), p.lower[j]), std::max(0.0, -z) / scale,
        std::abs(z * slack) / (scale * (1.0 + std::abs(p.lower[j])))});
    }
    if (p.upper.size() && std::isfinite(p.upper[j])) {
      const double slack = p.upper[j] - x[j], z = s.upper_multipliers[j];
      res = std::max({res, feas(std::max(0.0, -slack), p.upper[j]), std::max(0.0, z) / scale,
        std::abs(z * slack) / (scale * (1.0 + std::abs(p.upper[j])))});
    }
  }
  return res;
}

/**
 * Global minimizer of a convex QP.
 *
 * Strictly convex problems are solved directly with the dual active-set
 * method. A singular Hessian is handled by proximal-point rounds started from
 * the origin, which converge to the minimum-norm solution; divergence of those
 * rounds is reported as unboundedness.
 */
inline Solution solve_qp(const QpProblem & p, const QpOptions & opts = {})
{
  p.validate();
  const Eigen::Index n = p.size();
  std::size_t n_eq = 0;
  const std::vector<detail::Row> rows = detail::collect_rows(p, n_eq);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (p.lower.size() && p.upper.size() && p.lower[j] > p.upper[j]) {
      Solution s;
      s.point = VectorXd::Zero(n);
      s.status = Status::infeasible;
      s.diagnostic = "empty bound interval for variable " + std::to_string(j);
      return s;
    }
  }

  const double diag_scale = std::max(1.0, n ? p.quadratic.diagonal().cwiseAbs().maxCoeff() : 1.0);
  double rho = 0.0;
  Eigen::LLT<MatrixXd> llt(p.quadratic);
  if (llt.info() != Eigen::Success ||
      llt.matrixL().toDenseMatrix().diagonal().array().square().minCoeff() <= 1e-13 * diag_scale) {
    rho = opts.regularization * diag_scale;
    llt.compute(p.quadratic + rho * MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) { fail_validation("solve_qp: quadratic term is not positive semidefinite"); }
  }
  const MatrixXd J0 = llt.matrixL().solve(MatrixXd::Identity(n, n)).transpose();
  const std::size_t max_iter = opts.max_iterations ? opts.max_iterations : 50 * (static_cast<std::size_t>(n) + rows.size()) + 100;
  detail::DualActiveSet solver{rows, n_eq, J0, opts.feasibility_tolerance, max_iter};

  Solution sol;
  VectorXd x = VectorXd::Zero(n), anchor = VectorXd::Zero(n);
  double last_step = inf;
  std::size_t growing = 0;
  const std::size_t rounds = rho > 0.0 ? opts.max_prox_rounds : 1;
  for (std::size_t round = 0; round < rounds; ++round) {
    const VectorXd linear = p.linear - rho * anchor;
    std::size_t it = 0;
    sol.status = solver.solve(x, linear, llt, sol.diagnostic, it);
    sol.iterations += it;
    if (sol.status != Status::optimal) { break; }
    if (rho == 0.0) { break; }
    const double step = (x - anchor).cwiseAbs().maxCoeff();
    anchor = x;
    if (step <= 1e-13 * (1.0 + x.cwiseAbs().maxCoeff())) { break; }
    growing = step >= 0.999 * last_step ? growing + 1 : 0;
    last_step = step;
    if (growing >= 3 && x.cwiseAbs().maxCoeff() > 1e9 * (1.0 + p.linear.cwiseAbs().maxCoeff())) {
      fail_solver("solve_qp: problem is unbounded below");
    }
  }
  sol.point = x;
  sol.objective = 0.5 * x.dot(p.quadratic * x) + p.linear.dot(x);
  sol.eq_multipliers = VectorXd::Zero(p.eq_matrix.rows());
  sol.ineq_multipliers = VectorXd::Zero(p.ineq_matrix.rows());
  sol.lower_multipliers = VectorXd::Zero(p.lower.size() ? n : 0);
  sol.upper_multipliers = VectorXd::Zero(p.upper.size() ? n : 0);
  if (sol.status == Status::optimal) {
    for (std::size_t k = 0; k < solver.q; ++k) {
      const auto & r = rows[solver.active[k]];
      const double mult = solver.u[k];
      switch (r.origin) {
      case detail::Row::Origin::equality: sol.eq_multipliers[r.source] = mult; break;
      case detail::Row::Origin::inequality: sol.ineq_multipliers[r.source] = -mult; break;
      case detail::Row::Origin::lower: sol.lower_multipliers[r.source] = mult; break;
      case detail::Row::Origin::upper: sol.upper_multipliers[r.source] = -mult; break;
      }
    }
    sol.kkt_residual = qp_kkt_residual(p, sol);
    sol.proven_global = true;
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Quadratic maximization with an optional quadratic constraint
// ---------------------------------------------------------------------------

/// 1/2 x' A x + b' x + c  (symmetric A)
struct Quadratic
{
  MatrixXd hessian;
  VectorXd gradient;
  double constant = 0.0;

  double value(const VectorXd & x) const { return 0.5 * x.dot(hessian * x) + gradient.dot(x) + constant; }
  VectorXd grad(const VectorXd & x) const { return hessian * x + gradient; }
};

/**
 * maximize f(x) subject to  Aeq x = beq,  lower <= x <= upper,  and
 * optionally g(x) <= 0, where f and g are quadratics (f possibly indefinite).
 */
struct NlpProblem
{
  Quadratic objective;
  MatrixXd eq_matrix;
  VectorXd eq_rhs;
  VectorXd lower;
  VectorXd upper;
  std::optional<Quadratic> constraint;

  Eigen::Index size() const { return objective.gradient.size(); }

  void validate() const
  {
    const Eigen::Index n = size();
    if (objective.hessian.rows() != n || objective.hessian.cols() != n) { fail_validation("NlpProblem: Hessian shape"); }
    if (lower.size() != n || upper.size() != n) { fail_validation("NlpProblem: bounds are required for every variable"); }
    if (eq_matrix.size() && (eq_matrix.cols() != n || eq_matrix.rows() != eq_rhs.size())) {
      fail_validation("NlpProblem: equality shape");
    }
    if (constraint && (constraint->hessian.rows() != n || constraint->gradient.size() != n)) {
      fail_validation("NlpProblem: constraint shape");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(lower[j] <= upper[j])) { fail_infeasible("NlpProblem: empty box for variable " + std::to_string(j)); }
    }
  }
};

struct MaximizeOptions
{
  std::size_t starts = 32;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 5000;
  /// Extra starting points tried before the sampled ones.
  std::vector<VectorXd> warm_starts;
  std::vector<TraceRow> * trace = nullptr;
};

namespace detail {

/// Euclidean projection onto {lower <= x <= upper, Aeq x = beq} and, optionally,
/// an extra halfspace a' x <= b.
class FeasibleSet
{
public:
  explicit FeasibleSet(const NlpProblem & p) : p_(p)
  {
    const Eigen::Index n = p.size(), m = p.eq_matrix.rows();
    owner_.assign(static_cast<std::size_t>(n), -1);
    disjoint_ = true;
    for (Eigen::Index i = 0; i < m && disjoint_; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (p.eq_matrix(i, j) == 0.0) { continue; }
        if (owner_[static_cast<std::size_t>(j)] >= 0) {
          disjoint_ = false;
          break;
        }
        owner_[static_cast<std::size_t>(j)] = i;
      }
    }
    if (disjoint_) {
      members_.assign(static_cast<std::size_t>(m), {});
      for (Eigen::Index j = 0; j < n; ++j) {
        if (owner_[static_cast<std::size_t>(j)] >= 0) { members_[static_cast<std::size_t>(owner_[static_cast<std::size_t>(j)])].push_back(j); }
      }
      for (Eigen::Index i = 0; i < m; ++i) {
        double lo = 0.0, hi = 0.0;
        for (Eigen::Index j : members_[static_cast<std::size_t>(i)]) {
          const double a = p.eq_matrix(i, j);
          lo += a > 0 ? a * p.lower[j] : a * p.upper[j];
          hi += a > 0 ? a * p.upper[j] : a * p.lower[j];
        }
        const double tol = 1e-12 * (1.0 + std::abs(p.eq_rhs[i]));
        if (members_[static_cast<std::size_t>(i)].empty() ? std::abs(p.eq_rhs[i]) > tol
                                                           : (p.eq_rhs[i] < lo - tol || p.eq_rhs[i] > hi + tol)) {
          fail_infeasible("equality " + std::to_string(i) + " cannot be met within the bounds");
        }
      }
    } else {
      // Generic path: check consistency once.
      VectorXd probe = project((p.lower + p.upper) / 2);
      if ((p.eq_matrix * probe - p.eq_rhs).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + p.eq_rhs.cwiseAbs().maxCoeff())) {
        fail_infeasible("equality constraints cannot be met within the bounds");
      }
    }
  }

  VectorXd project(const VectorXd & v) const
  {
    if (disjoint_) { return project_disjoint(v); }
    QpProblem qp;
    const Eigen::Index n = v.size();
    qp.quadratic = MatrixXd::Identity(n, n);
    qp.linear = -v;
    qp.eq_matrix = p_.eq_matrix;
    qp.eq_rhs = p_.eq_rhs;
    qp.lower = p_.lower;
    qp.upper = p_.upper;
    Solution s = solve_qp(qp);
    if (s.status != Status::optimal) { fail_infeasible("linear constraints are infeasible"); }
    return s.point;
  }

  /// Projection onto the set intersected with {a' x <= b}. Monotone bisection on
  /// the halfspace multiplier; returns nullopt if the intersection is empty.
  std::optional<VectorXd> project(const VectorXd & v, const VectorXd & a, double b) const
  {
    VectorXd x = project(v);
    const double scale = 1e-12 * (1.0 + std::abs(b) + a.cwiseAbs().dot(x.cwiseAbs()));
    if (a.dot(x) <= b + scale) { return x; }
    const double aa = a.squaredNorm();
    if (aa == 0.0) { return std::nullopt; }
    double lo = 0.0, hi = (a.dot(x) - b) / aa;
    for (int k = 0; k < 200; ++k) {
      VectorXd y = project(v - hi * a);
      if (a.dot(y) <= b) { break; }
      lo = hi;
      hi *= 2.0;
      if (k == 199) { return std::nullopt; }
    }
    for (int k = 0; k < 100; ++k) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) { break; }
      if (a.dot(project(v - mid * a)) <= b) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return project(v - hi * a);
  }

private:
  VectorXd project_disjoint(const VectorXd & v) const
  {
    VectorXd x = v.cwiseMax(p_.lower).cwiseMin(p_.upper);
    for (std::size_t i = 0; i < members_.size(); ++i) {
      const auto & idx = members_[i];
      if (idx.empty()) { continue; }
      const auto row = static_cast<Eigen::Index>(i);
      const double target = p_.eq_rhs[row];
      auto at = [&](double nu, double & slope) {
        double acc = 0.0;
        slope = 0.0;
        for (Eigen::Index j : idx) {
          const double a = p_.eq_matrix(row, j);
          const double raw = v[j] + nu * a;
          if (raw <= p_.lower[j]) {
            acc += a * p_.lower[j];
          } else if (raw >= p_.upper[j]) {
            acc += a * p_.upper[j];
          } else {
            acc += a * raw;
            slope += a * a;
          }
        }
        return acc;
      };
      std::vector<double> breaks;
      for (Eigen::Index j : idx) {
        const double a = p_.eq_matrix(row, j);
        if (std::isfinite(p_.lower[j])) { breaks.push_back((p_.lower[j] - v[j]) / a); }
        if (std::isfinite(p_.upper[j])) { breaks.push_back((p_.upper[j] - v[j]) / a); }
      }
      std::sort(breaks.begin(), breaks.end());
      breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
      // Piecewise-linear, nondecreasing in nu: walk the pieces.
      double nu = 0.0;
      bool found = false;
      const std::size_t pieces = breaks.size() + 1;
      for (std::size_t k = 0; k < pieces && !found; ++k) {
        const double left = k == 0 ? -inf : breaks[k - 1];
        const double right = k == breaks.size() ? inf : breaks[k];
        double probe;
        if (std::isfinite(left) && std::isfinite(right)) {
          probe = 0.5 * (left + right);
        } else if (std::isfinite(right)) {
          probe = right - 1.0;
        } else if (std::isfinite(left)) {
          probe = left + 1.0;
        } else {
          probe = 0.0;
        }
        double slope = 0.0;
        const double val = at(probe, slope);
        if (slope > 0.0) {
          const double cand = probe + (target - val) / slope;
          if (cand >= left && cand <= right) {
            nu = cand;
            found = true;
          }
        } else if (val == target) {
          nu = probe;
          found = true;
        }
        // Exact hit on a breakpoint.
        if (!found && std::isfinite(right)) {
          double s2 = 0.0;
          if (std::abs(at(right, s2) - target) <= 1e-14 * (1.0 + std::abs(target))) {
            nu = right;
            found = true;
          }
        }
      }
      if (!found && breaks.size() >= 2) {
        // Rounding defeated the piece walk (far-away v); bisect the monotone sum.
        double lo = breaks.front(), hi = breaks.back(), slope = 0.0;
        if (at(lo, slope) <= target + 1e-9 * (1.0 + std::abs(target)) &&
            at(hi, slope) >= target - 1e-9 * (1.0 + std::abs(target))) {
          for (int k = 0; k < 200; ++k) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) { break; }
            (at(mid, slope) < target ? lo : hi) = mid;
          }
          nu = 0.5 * (lo + hi);
          found = true;
        }
      }
      if (!found) { fail_infeasible("projection: equality " + std::to_string(i) + " unreachable within bounds"); }
      for (Eigen::Index j : idx) {
        x[j] = std::clamp(v[j] + nu * p_.eq_matrix(row, j), p_.lower[j], p_.upper[j]);
      }
    }
    return x;
  }

  const NlpProblem & p_;
  bool disjoint_ = true;
  std::vector<Eigen::Index> owner_;
  std::vector<std::vector<Eigen::Index>> members_;
};

/// Orthonormal basis of the null space of `A` (n × k).
inline MatrixXd null_space(const MatrixXd & A, Eigen::Index n)
{
  if (A.rows() == 0) { return MatrixXd::Identity(n, n); }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(A.transpose());
  qr.setThreshold(1e-12);
  const Eigen::Index rank = qr.rank();
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, n);
  return Q.rightCols(n - rank);
}

/// Smallest t in (0, 1] with g(x + t d) = 0 when g(x) <= 0 < g(x + d).
inline double first_crossing(const Quadratic & g, const VectorXd & x, const VectorXd & d)
{
  const double g0 = g.value(x);
  const double g1 = d.dot(g.grad(x));
  const double g2 = 0.5 * d.dot(g.hessian * d);
  auto at = [&](double t) { return g0 + t * (g1 + t * g2); };
  double lo = 0.0, hi = 1.0;
  for (int k = 0; k < 200 && hi - lo > 0.0; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) { break; }
    if (at(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return lo;
}

}  // namespace detail

/// Reduced Hessian N' Q N of the objective on the equality null space.
inline MatrixXd reduced_hessian(const NlpProblem & p)
{
  const MatrixXd N = detail::null_space(p.eq_matrix, p.size());
  return N.transpose() * p.objective.hessian * N;
}

/// True when the objective is concave on the feasible affine set.
inline bool objective_is_concave(const NlpProblem & p)
{
  const MatrixXd Hr = reduced_hessian(p);
  if (Hr.size() == 0) { return true; }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (Hr + Hr.transpose()), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, p.objective.hessian.cwiseAbs().maxCoeff());
  return es.eigenvalues().maxCoeff() <= 1e-10 * scale;
}

namespace detail {

struct AscentResult
{
  VectorXd x;
  double value = -inf;
  bool feasible = false;
  bool converged = false;
  std::size_t iterations = 0;
  double residual = inf;
};

inline double constraint_tol(const NlpProblem & p, const VectorXd & x)
{
  (void)p;
  return 1e-9 * (1.0 + x.cwiseAbs().maxCoeff());
}

/// Repeated projection onto the cap linearized at the current point, until
/// the point satisfies the cap. nullopt when that does not happen quickly.
inline std::optional<VectorXd> pull_back(const NlpProblem & p, const FeasibleSet & set, VectorXd y)
{
  const Quadratic & g = *p.constraint;
  const double margin = 1e-12 * (1.0 + std::abs(g.constant));
  for (int k = 0; k < 8; ++k) {
    const double gy = g.value(y);
    if (gy <= 0.0) { return y; }
    const VectorXd a = g.grad(y);
    auto z = set.project(y, a, a.dot(y) - gy - margin);
    if (!z) { return std::nullopt; }
    y = std::move(*z);
  }
  if (g.value(y) <= 0.0) { return y; }
  return std::nullopt;
}

/// Newton direction for the Lagrangian on the current face: variables off
/// their bounds, the equalities and (when active with a positive multiplier)
/// the cap. nullopt unless the reduced Hessian is negative definite.
inline std::optional<VectorXd> face_newton(const NlpProblem & p, const VectorXd & x, const VectorXd & gx)
{
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> free;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double tol = 1e-10 * (1.0 + std::abs(x[j]));
    if (x[j] > p.lower[j] + tol && x[j] < p.upper[j] - tol) { free.push_back(j); }
  }
  const auto k = static_cast<Eigen::Index>(free.size());
  if (k == 0) { return std::nullopt; }
  const Eigen::Index me = p.eq_matrix.rows();
  MatrixXd E(me, k), W(k, k);
  VectorXd g(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    g[c] = gx[free[c]];
    for (Eigen::Index r = 0; r < me; ++r) { E(r, c) = p.eq_matrix(r, free[c]); }
    for (Eigen::Index r = 0; r < k; ++r) { W(r, c) = p.objective.hessian(free[r], free[c]); }
  }
  MatrixXd C = E;
  if (p.constraint && p.constraint->value(x) > -1e-7 * (1.0 + std::abs(p.constraint->constant))) {
    const VectorXd a_full = p.constraint->grad(x);
    VectorXd a(k);
    for (Eigen::Index c = 0; c < k; ++c) { a[c] = a_full[free[c]]; }
    MatrixXd M(k, me + 1);
    M << E.transpose(), a;
    const VectorXd mult = M.completeOrthogonalDecomposition().solve(g);
    const double mu = mult[me];
    if (mu > 0.0) {
      for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index r = 0; r < k; ++r) { W(r, c) -= mu * p.constraint->hessian(free[r], free[c]); }
      }
      C.conservativeResize(me + 1, k);
      C.row(me) = a.transpose();
    }
  }
  const MatrixXd Z = null_space(C, k);
  if (Z.cols() == 0) { return std::nullopt; }
  const MatrixXd R = Z.transpose() * W * Z;
  const Eigen::LLT<MatrixXd> llt(-0.5 * (R + R.transpose()));
  if (llt.info() != Eigen::Success) { return std::nullopt; }
  const VectorXd d = Z * llt.solve(Z.transpose() * g);
  if (!d.allFinite()) { return std::nullopt; }
  VectorXd full = VectorXd::Zero(n);
  for (Eigen::Index c = 0; c < k; ++c) { full[free[c]] = d[c]; }
  return full;
}

/// Projected gradient ascent with Barzilai-Borwein trial steps and Armijo
/// backtracking. Iterates stay feasible: trial points leaving {g <= 0} are
/// pulled back along the segment to the first crossing.
inline AscentResult ascend(const NlpProblem & p, const FeasibleSet & set, VectorXd x, std::size_t max_iter,
  std::size_t start_index, std::vector<TraceRow> * trace)
{
  const Quadratic & f = p.objective;
  const bool capped = p.constraint.has_value();
  AscentResult res;
  double fx = f.value(x);
  VectorXd gx = f.grad(x);
  double step = 1.0 / std::max(1e-12, f.hessian.cwiseAbs().rowwise().sum().maxCoeff());
  if (!std::isfinite(step) || step <= 0.0) { step = 1.0; }
  std::size_t stalls = 0;

  for (std::size_t it = 0; it < max_iter; ++it) {
    const double gval = capped ? p.constraint->value(x) : -inf;
    const bool near_active = capped && gval >= -1e-6 * (1.0 + std::abs(p.constraint->constant));
    VectorXd a_lin;
    if (near_active) { a_lin = p.constraint->grad(x); }

    auto trial = [&](double s) -> std::optional<VectorXd> {
      const VectorXd v = x + s * gx;
      std::optional<VectorXd> y;
      if (near_active) { y = set.project(v, a_lin, a_lin.dot(x) - gval); }
      if (!y) { y = set.project(v); }
      if (capped && p.constraint->value(*y) > 0.0) {
        // Retry inside the cap linearized at x; exact for a concave cap.
        if (!near_active) {
          const VectorXd a = p.constraint->grad(x);
          if (auto inner = set.project(v, a, a.dot(x) - gval)) { y = std::move(inner); }
        }
        // Newton pull-back onto the curved surface, so steps can slide along it.
        if (auto back = pull_back(p, set, *y)) { y = std::move(back); }
        if (p.constraint->value(*y) > 0.0) {
          const VectorXd d = *y - x;
          const double t = first_crossing(*p.constraint, x, d);
          *y = x + t * d;
          if (p.constraint->value(*y) > 0.0) { *y = x; }
        }
      }
      return y;
    };

    bool accepted = false;
    bool stationary = false;
    VectorXd y;
    double fy = fx;
    double s = step;
    for (int bt = 0; bt < 60; ++bt, s *= 0.5) {
      auto cand = trial(s);
      if (!cand) { continue; }
      if (*cand == x) {
        stationary = bt == 0;
        if (stationary) { break; }
        continue;
      }
      const double fc = f.value(*cand);
      const double pred = gx.dot(*cand - x);
      if (fc > fx && fc >= fx + 1e-4 * pred) {
        y = std::move(*cand);
        fy = fc;
        accepted = true;
        break;
      }
    }
    res.iterations = it + 1;
    if (!accepted) {
      res.converged = true;
      break;
    }
    const VectorXd sk = y - x;
    const VectorXd gy = f.grad(y);
    const double move = sk.cwiseAbs().maxCoeff();
    const double gain = fy - fx;
    if (fy < fx) { fail_solver("maximize_pricing: objective decreased during ascent"); }
    x = std::move(y);
    const VectorXd yk = gy - gx;
    gx = gy;
    fx = fy;
    res.residual = move / std::max(s, 1e-300);
    if (trace) { trace->push_back({start_index, it, fx, res.residual}); }
    const double curv = -sk.dot(yk);
    step = curv > 0.0 ? sk.squaredNorm() / curv : std::min(s * 4.0, 1e12);
    step = std::clamp(step, 1e-12, 1e12);
    // Second-order step on the face reached by the gradient step.
    if (auto d = face_newton(p, x, gx)) {
      for (double t = 1.0; t > 0.1; t *= 0.5) {
        VectorXd v = set.project(x + t * *d);
        if (capped && p.constraint->value(v) > 0.0) {
          auto back = pull_back(p, set, std::move(v));
          if (!back) { continue; }
          v = std::move(*back);
        }
        const double fv = f.value(v);
        if (fv > fx) {
          x = std::move(v);
          fx = fv;
          gx = f.grad(x);
          if (trace) { trace->push_back({start_index, it, fx, res.residual}); }
          break;
        }
      }
    }
    if (move <= 1e-13 * (1.0 + x.cwiseAbs().maxCoeff()) || gain <= 1e-15 * (1.0 + std::abs(fx))) {
      if (++stalls >= 3) {
        res.converged = true;
        break;
      }
    } else {
      stalls = 0;
    }
  }
  res.x = std::move(x);
  res.value = fx;
  res.feasible = !capped || p.constraint->value(res.x) <= constraint_tol(p, res.x);
  return res;
}

/// Drive an infeasible start into {g <= 0}: exact-penalty ascent on
/// f - mu * max(0, g) with mu doubling on failure, then plain descent on g.
inline std::optional<VectorXd> restore_feasibility(const NlpProblem & p, const FeasibleSet & set, VectorXd x)
{
  const Quadratic & g = *p.constraint;
  if (g.value(x) <= 0.0) { return x; }
  const double fscale = std::max(1e-12, p.objective.grad(x).cwiseAbs().maxCoeff());
  const double gscale = std::max(1e-12, g.grad(x).cwiseAbs().maxCoeff());
  double mu = 10.0 * fscale / gscale;
  auto penalized = [&](const VectorXd & y) { return p.objective.value(y) - mu * std::max(0.0, g.value(y)); };
  for (int doubling = 0; doubling <= 12; ++doubling, mu *= 2.0) {
    double step = 1.0 / std::max(1e-12, (p.objective.hessian.cwiseAbs() + mu * g.hessian.cwiseAbs()).rowwise().sum().maxCoeff() +
                                          mu * g.gradient.cwiseAbs().maxCoeff());
    for (int it = 0; it < 500; ++it) {
      const double gv = g.value(x);
      if (gv <= 0.0) { return x; }
      const VectorXd dir = p.objective.grad(x) - mu * g.grad(x);
      const double base = penalized(x);
      bool moved = false;
      for (int bt = 0; bt < 50; ++bt, step *= 0.5) {
        VectorXd y = set.project(x + step * dir);
        if (penalized(y) > base) {
          x = std::move(y);
          step *= 2.0;
          moved = true;
          break;
        }
      }
      if (!moved) { break; }
    }
  }
  // Pure restoration: minimize g.
  double step = 1.0 / std::max(1e-12, g.hessian.cwiseAbs().rowwise().sum().maxCoeff() + 1.0);
  for (int it = 0; it < 5000; ++it) {
    const double gv = g.value(x);
    if (gv <= 0.0) { return x; }
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
      VectorXd y = set.project(x - step * g.grad(x));
      if (g.value(y) < gv) {
        x = std::move(y);
        step *= 2.0;
        moved = true;
        break;
      }
    }
    if (!moved) { break; }
  }
  return std::nullopt;
}

/// Lagrangian bisection for a strictly concave objective with one quadratic
/// cap: for each mu with f - mu g still strictly concave, x(mu) maximizes
/// f - mu g over the linear set (a convex QP) and g(x(mu)) is nonincreasing in
/// mu. A feasible x(mu) with mu g(x(mu)) ~ 0 is globally optimal by weak
/// duality. nullopt when no such mu exists in the concave range.
inline std::optional<VectorXd> dual_bisection(const NlpProblem & p)
{
  const Quadratic & f = p.objective;
  const Quadratic & g = *p.constraint;
  const Eigen::Index n = p.size();
  // Concavity range on the equality null space: -Qr + mu Ar > 0.
  const MatrixXd Z = null_space(p.eq_matrix, n);
  if (Z.cols() == 0) { return std::nullopt; }
  const MatrixXd Qr = Z.transpose() * f.hessian * Z;
  Eigen::LLT<MatrixXd> neg(-0.5 * (Qr + Qr.transpose()));
  if (neg.info() != Eigen::Success) { return std::nullopt; }
  const auto r = Z.cols();
  const MatrixXd Linv = neg.matrixL().solve(MatrixXd::Identity(r, r));
  const MatrixXd Ar = Z.transpose() * g.hessian * Z;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(Linv * (0.5 * (Ar + Ar.transpose())) * Linv.transpose(), Eigen::EigenvaluesOnly);
  const double nu = es.eigenvalues().minCoeff();
  const double mu_top = nu < -1e-14 ? (1.0 - 1e-9) / -nu : 1e6;

  QpProblem qp;
  qp.eq_matrix = p.eq_matrix;
  qp.eq_rhs = p.eq_rhs;
  qp.lower = p.lower;
  qp.upper = p.upper;
  // A penalty rho |Ex - b|^2 is constant on the affine set but makes the
  // full-space Hessian positive definite.
  const MatrixXd EtE = p.eq_matrix.size() ? MatrixXd(p.eq_matrix.transpose() * p.eq_matrix) : MatrixXd::Zero(n, n);
  const VectorXd Etb = p.eq_matrix.size() ? VectorXd(p.eq_matrix.transpose() * p.eq_rhs) : VectorXd::Zero(n);
  auto argmax = [&](double mu) -> std::optional<VectorXd> {
    MatrixXd P = -(f.hessian - mu * g.hessian);
    P = 0.5 * (P + P.transpose());
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    double rho = 0.0;
    for (int k = 0;; ++k) {
      Eigen::LLT<MatrixXd> llt(P + rho * EtE);
      if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-7 * std::sqrt(scale)) { break; }
      if (p.eq_matrix.size() == 0 || k == 40) { return std::nullopt; }
      rho = rho == 0.0 ? scale : 2.0 * rho;
    }
    qp.quadratic = P + rho * EtE;
    qp.linear = -(f.gradient - mu * g.gradient) - rho * Etb;
    const Solution s = solve_qp(qp);
    if (s.status != Status::optimal) { return std::nullopt; }
    return s.point;
  };

  const double tol = 1e-9 * (1.0 + std::abs(g.constant));
  auto x0 = argmax(0.0);
  if (!x0) { return std::nullopt; }
  if (g.value(*x0) <= 0.0) { return x0; }
  auto xf = argmax(mu_top);
  if (!xf || g.value(*xf) > 0.0) { return std::nullopt; }
  double lo = 0.0, hi = mu_top;
  for (int it = 0; it < 200 && g.value(*xf) < -tol && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto xm = argmax(mid);
    if (!xm) { return std::nullopt; }
    if (g.value(*xm) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      xf = std::move(xm);
    }
  }
  const double gap = -hi * g.value(*xf);
  if (gap > 1e-8 * (1.0 + std::abs(f.value(*xf)))) { return std::nullopt; }
  return xf;
}

/// Fill in the stationarity measure of a maximize_pricing result.
inline Solution finish_maximize(const NlpProblem & p, const FeasibleSet & set, Solution best)
{
  // projections leave the bounds off by rounding; callers expect them exact
  best.point = best.point.cwiseMax(p.lower).cwiseMin(p.upper);
  best.objective = p.objective.value(best.point);
  // Stationarity measure: projected unit gradient step.
  const VectorXd g = p.objective.grad(best.point);
  const VectorXd proj = set.project(best.point + g);
  best.kkt_residual = (proj - best.point).cwiseAbs().maxCoeff() / (1.0 + g.cwiseAbs().maxCoeff());
  if (p.constraint && p.constraint->value(best.point) > -1e-7 * (1.0 + std::abs(p.constraint->constant))) {
    // On the constraint boundary the unconstrained projected step is not a
    // stationarity measure; report the tangential component instead.
    const VectorXd a = p.constraint->grad(best.point);
    auto tangential = set.project(best.point + g, a, a.dot(best.point));
    if (tangential) {
      best.kkt_residual = (*tangential - best.point).cwiseAbs().maxCoeff() / (1.0 + g.cwiseAbs().maxCoeff());
    }
  }
  return best;
}

}  // namespace detail

/**
 * Multi-start local maximization.
 *
 * Equalities are handled through the projection (which keeps every iterate on
 * the affine set, i.e. the ascent runs in the reduced space); the quadratic
 * constraint is enforced by exact-penalty restoration for infeasible starts and
 * by segment truncation during ascent. Start 0 is the projected box centre;
 * later starts are uniform box samples with independent sub-seeds, so adding
 * starts never lowers the result.
 *
 * With a concave objective and a constraint, the Lagrangian bisection is tried
 * first; when it certifies a point the starts are skipped.
 */
inline Solution maximize_pricing(const NlpProblem & p, const MaximizeOptions & opts = {})
{
  p.validate();
  const detail::FeasibleSet set(p);
  const Eigen::Index n = p.size();
  const bool concave = objective_is_concave(p);
  const bool convex_constraint = [&] {
    if (!p.constraint) { return true; }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(p.constraint->hessian, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, p.constraint->hessian.cwiseAbs().maxCoeff());
  }();

  for (const auto & w : opts.warm_starts) {
    if (w.size() != n) { fail_validation("maximize_pricing: warm start has wrong dimension"); }
  }
  if (p.constraint && concave) {
    if (auto x = detail::dual_bisection(p)) {
      Solution best;
      best.point = std::move(*x);
      best.objective = p.objective.value(best.point);
      best.status = Status::optimal;
      best.proven_global = true;
      best.starts_used = 1;
      if (opts.trace) { opts.trace->push_back({0, 0, best.objective, 0.0}); }
      return detail::finish_maximize(p, set, std::move(best));
    }
  }

  std::vector<VectorXd> starts = opts.warm_starts;
  for (std::size_t s = 0; s < opts.starts; ++s) {
    VectorXd v(n);
    if (s == 0) {
      v = 0.5 * (p.lower + p.upper);
    } else {
      Rng rng(derive_seed(opts.seed, s));
      for (Eigen::Index j = 0; j < n; ++j) { v[j] = p.lower[j] + uniform01(rng) * (p.upper[j] - p.lower[j]); }
    }
    starts.push_back(std::move(v));
  }

  Solution best;
  best.point = VectorXd::Zero(n);
  best.objective = -inf;
  best.status = Status::infeasible;
  std::size_t used = 0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    if (starts[s].size() != n) { fail_validation("maximize_pricing: warm start has wrong dimension"); }
    VectorXd x0 = set.project(starts[s]);
    if (p.constraint) {
      auto fixed = detail::restore_feasibility(p, set, std::move(x0));
      if (!fixed) { continue; }
      x0 = std::move(*fixed);
    }
    ++used;
    auto r = detail::ascend(p, set, std::move(x0), opts.max_iterations, s, opts.trace);
    best.iterations += r.iterations;
    if (!r.feasible) { continue; }
    if (r.value > best.objective) {
      best.point = r.x;
      best.objective = r.value;
      best.status = r.converged ? Status::local_optimal : Status::max_iterations;
      best.kkt_residual = r.residual;
    }
  }
  best.starts_used = used;
  if (best.status == Status::infeasible) {
    best.diagnostic = "no feasible point found across " + std::to_string(starts.size()) + " starts";
    return best;
  }
  if (concave && convex_constraint && best.status == Status::local_optimal) {
    best.status = Status::optimal;
    best.proven_global = true;
  }
  return detail::finish_maximize(p, set, std::move(best));
}


/**
 * Exhaustive oracle for instances whose reduced dimension (variables minus
 * equality rank) is at most 4. The first reduced coordinates are scanned on a
 * grid of the given resolution; the last one is maximized exactly along each
 * grid line (box, quadratic constraint and objective are all quadratic in it).
 */
inline Solution grid_oracle(const NlpProblem & p, double resolution, std::size_t max_points = 200'000'000)
{
  p.validate();
  if (!(resolution > 0.0)) { fail_validation("grid_oracle: resolution must be positive"); }
  const Eigen::Index n = p.size();
  Solution best;
  best.point = VectorXd::Zero(n);
  best.objective = -inf;
  best.status = Status::infeasible;

  // Split into basic (solved from equalities) and free (scanned) variables.
  std::vector<Eigen::Index> free_vars, basic_vars;
  MatrixXd Eb;
  if (p.eq_matrix.rows() > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(p.eq_matrix);
    qr.setThreshold(1e-12);
    const Eigen::Index rank = qr.rank();
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index i = 0; i < n; ++i) { (i < rank ? basic_vars : free_vars).push_back(perm[i]); }
    std::sort(free_vars.begin(), free_vars.end());
  } else {
    for (Eigen::Index i = 0; i < n; ++i) { free_vars.push_back(i); }
  }
  if (free_vars.size() > 4) {
    fail_validation("grid_oracle: reduced dimension " + std::to_string(free_vars.size()) + " exceeds 4");
  }
  // x = x0 + F * y where y are the free variables.
  const auto k = static_cast<Eigen::Index>(free_vars.size());
  VectorXd x0 = VectorXd::Zero(n);
  MatrixXd F = MatrixXd::Zero(n, k);
  for (Eigen::Index j = 0; j < k; ++j) { F(free_vars[static_cast<std::size_t>(j)], j) = 1.0; }
  if (!basic_vars.empty()) {
    const auto b = static_cast<Eigen::Index>(basic_vars.size());
    MatrixXd B(p.eq_matrix.rows(), b), Ff(p.eq_matrix.rows(), k);
    for (Eigen::Index j = 0; j < b; ++j) { B.col(j) = p.eq_matrix.col(basic_vars[static_cast<std::size_t>(j)]); }
    for (Eigen::Index j = 0; j < k; ++j) { Ff.col(j) = p.eq_matrix.col(free_vars[static_cast<std::size_t>(j)]); }
    Eigen::ColPivHouseholderQR<MatrixXd> bqr(B);
    const VectorXd xb = bqr.solve(p.eq_rhs);
    if ((B * xb - p.eq_rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + p.eq_rhs.cwiseAbs().maxCoeff())) {
      best.diagnostic = "inconsistent equalities";
      return best;
    }
    const MatrixXd dep = bqr.solve(Ff);
    for (Eigen::Index j = 0; j < b; ++j) {
      x0[basic_vars[static_cast<std::size_t>(j)]] = xb[j];
      F.row(basic_vars[static_cast<std::size_t>(j)]) = -dep.row(j);
    }
  }

  const double box_tol = 1e-9;
  auto feasible_point = [&](const VectorXd & x) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (x[i] < p.lower[i] - box_tol * (1.0 + std::abs(p.lower[i])) ||
          x[i] > p.upper[i] + box_tol * (1.0 + std::abs(p.upper[i]))) {
        return false;
      }
    }
    return !p.constraint || p.constraint->value(x) <= 0.0;
  };
  auto consider = [&](const VectorXd & x) {
    if (!feasible_point(x)) { return; }
    const double v = p.objective.value(x);
    if (v > best.objective) {
      best.objective = v;
      best.point = x;
      best.status = Status::optimal;
    }
  };

  if (k == 0) {
    consider(x0);
    best.proven_global = best.status == Status::optimal;
    return best;
  }
  const Eigen::Index scanned = k - 1;
  std::vector<std::size_t> counts(static_cast<std::size_t>(scanned));
  double total = 1.0;
  for (Eigen::Index j = 0; j < scanned; ++j) {
    const Eigen::Index v = free_vars[static_cast<std::size_t>(j)];
    if (!std::isfinite(p.lower[v]) || !std::isfinite(p.upper[v])) { fail_validation("grid_oracle: unbounded free variable"); }
    counts[static_cast<std::size_t>(j)] = static_cast<std::size_t>(std::floor((p.upper[v] - p.lower[v]) / resolution + 1e-9)) + 1;
    total *= static_cast<double>(counts[static_cast<std::size_t>(j)]);
  }
  if (total > static_cast<double>(max_points)) { fail_validation("grid_oracle: grid too large"); }

  const Eigen::Index last = free_vars.back();
  std::vector<std::size_t> idx(static_cast<std::size_t>(scanned), 0);
  VectorXd y(k);
  while (true) {
    for (Eigen::Index j = 0; j < scanned; ++j) {
      const Eigen::Index v = free_vars[static_cast<std::size_t>(j)];
      y[j] = std::min(p.lower[v] + static_cast<double>(idx[static_cast<std::size_t>(j)]) * resolution, p.upper[v]);
    }
    // Line x(t) = base + t * dir, t = value of the last free variable.
    y[k - 1] = 0.0;
    const VectorXd base = x0 + F * y;
    const VectorXd dir = F.col(k - 1);
    double lo = p.lower[last], hi = p.upper[last];
    bool empty = false;
    for (Eigen::Index i = 0; i < n && !empty; ++i) {
      const double a = dir[i];
      if (std::abs(a) < 1e-15) {
        if (base[i] < p.lower[i] - box_tol * (1.0 + std::abs(p.lower[i])) ||
            base[i] > p.upper[i] + box_tol * (1.0 + std::abs(p.upper[i]))) {
          empty = true;
        }
        continue;
      }
      const double t1 = (p.lower[i] - base[i]) / a, t2 = (p.upper[i] - base[i]) / a;
      lo = std::max(lo, std::min(t1, t2));
      hi = std::min(hi, std::max(t1, t2));
    }
    if (!empty && lo <= hi + 1e-12) {
      hi = std::max(hi, lo);
      std::vector<double> cands{lo, hi};
      // Objective stationary point along the line.
      const double c2 = dir.dot(p.objective.hessian * dir);
      const double c1 = dir.dot(p.objective.grad(base));
      if (c2 < 0.0) { cands.push_back(-c1 / c2); }
      if (p.constraint) {
        // Roots of the constraint along the line bound the feasible pieces.
        const double q2 = 0.5 * dir.dot(p.constraint->hessian * dir);
        const double q1 = dir.dot(p.constraint->grad(base));
        const double q0 = p.constraint->value(base);
        std::vector<double> roots;
        if (std::abs(q2) > 1e-300) {
          const double disc = q1 * q1 - 4.0 * q2 * q0;
          if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            const double qq = -0.5 * (q1 + std::copysign(sq, q1));
            if (qq != 0.0) { roots.push_back(q0 / qq); roots.push_back(qq / q2); }
            else { roots.push_back(0.0); }
          }
        } else if (q1 != 0.0) {
          roots.push_back(-q0 / q1);
        }
        for (double r : roots) {
          // Nudge onto the feasible side. A few ulps is not always enough,
          // rounding in the constraint value can be far larger.
          cands.push_back(r);
          for (double step = 1e-15; step < 1e-7; step *= 10.0) {
            const double d = step * (1.0 + std::abs(r));
            cands.push_back(r - d);
            cands.push_back(r + d);
          }
        }
      }
      for (double t : cands) {
        if (!(t >= lo - 1e-12 && t <= hi + 1e-12)) { continue; }
        consider(base + std::clamp(t, lo, hi) * dir);
      }
    }
    std::size_t j = 0;
    for (; j < static_cast<std::size_t>(scanned); ++j) {
      if (++idx[j] < counts[j]) { break; }
      idx[j] = 0;
    }
    if (j == static_cast<std::size_t>(scanned)) { break; }
  }
  best.starts_used = 1;
  best.proven_global = best.status == Status::optimal && k == 1;
  if (best.status == Status::infeasible) { best.diagnostic = "no feasible grid point"; }
  return best;
}

}  // namespace segtariff::optim

#endif  // SEGTARIFF_OPTIM_HPP_
