#ifndef SEGTARIFF_PRICING_HPP_
#define SEGTARIFF_PRICING_HPP_

/**
 * @file
 * @brief Retail profit maximization over per-group tariffs: price bounds, an
 * optional revenue cap and an optional flat (mean) price, in multiple-pricing
 * and uniform-pricing variants, plus the comparison benchmark.
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/optim.hpp"
#include "segtariff/rng.hpp"
#include "segtariff/synthgen.hpp"

namespace segtariff::pricing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PricingConfig
{
  double p_max = 25.0;                 ///< cents
  std::optional<double> p_min;         ///< scalar override; default is the hourly cost
  std::optional<double> flat_price;    ///< required mean price per group, cents
  std::optional<double> revenue_cap;   ///< total revenue bound, cents
  std::size_t starts = 32;
  std::uint64_t seed = 0;
};

struct PricingProblem
{
  std::vector<demand::DemandModel> models;
  VectorXd cost;
  MatrixXd p_min;  ///< groups × hours
  MatrixXd p_max;
  std::optional<double> revenue_cap;
  std::optional<double> flat_price;

  Eigen::Index groups() const { return static_cast<Eigen::Index>(models.size()); }
  Eigen::Index hours() const { return cost.size(); }

  void validate() const
  {
    if (models.empty()) { fail_validation("pricing: no demand models"); }
    const Eigen::Index H = cost.size();
    for (const auto & m : models) {
      m.validate();
      if (m.horizon() != H) { fail_validation("pricing: model '" + m.group + "' horizon differs from the cost vector"); }
    }
    if (!cost.allFinite() || (cost.array() < 0.0).any()) { fail_validation("pricing: cost must be finite and >= 0"); }
    if (p_min.rows() != groups() || p_min.cols() != H || p_max.rows() != groups() || p_max.cols() != H) {
      fail_validation("pricing: bound matrices must be groups x hours");
    }
    for (Eigen::Index g = 0; g < groups(); ++g) {
      for (Eigen::Index h = 0; h < H; ++h) {
        if (p_min(g, h) > p_max(g, h)) {
          fail_infeasible("pricing: p_min exceeds p_max for group " + models[static_cast<std::size_t>(g)].group +
                          " at hour " + std::to_string(h));
        }
      }
      if (flat_price) {
        const double lo = p_min.row(g).mean(), hi = p_max.row(g).mean();
        if (*flat_price < lo - 1e-12 || *flat_price > hi + 1e-12) {
          fail_infeasible("pricing: flat price " + std::to_string(*flat_price) + " is outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "] for group " + models[static_cast<std::size_t>(g)].group);
        }
      }
    }
    if (revenue_cap && !std::isfinite(*revenue_cap)) { fail_validation("pricing: revenue cap must be finite"); }
  }
};

struct PricingSolution
{
  std::vector<std::string> groups;
  bool uniform = false;
  MatrixXd prices;            ///< groups × hours, or 1 × hours when uniform
  MatrixXd per_group_demand;  ///< groups × hours
  VectorXd cost;
  double profit = 0.0;
  double revenue = 0.0;
  double solver_objective = 0.0;
  optim::Status status = optim::Status::infeasible;
  double kkt_residual = 0.0;
  std::size_t starts_used = 0;
  bool proven_global = false;
  bool negative_demand = false;
  std::optional<double> flat_price;
  std::optional<double> revenue_cap;
  std::vector<std::string> warnings;

  /// Price row offered to group g.
  VectorXd prices_for(Eigen::Index g) const { return prices.row(uniform ? 0 : g).transpose(); }
};

inline PricingProblem build_problem(const std::vector<demand::DemandModel> & models, const VectorXd & cost,
  const PricingConfig & cfg)
{
  PricingProblem p;
  p.models = models;
  p.cost = cost;
  const auto G = static_cast<Eigen::Index>(models.size());
  p.p_min = cfg.p_min ? MatrixXd::Constant(G, cost.size(), *cfg.p_min) : MatrixXd(cost.transpose().replicate(G, 1));
  p.p_max = MatrixXd::Constant(G, cost.size(), cfg.p_max);
  p.flat_price = cfg.flat_price;
  p.revenue_cap = cfg.revenue_cap;
  p.validate();
  return p;
}

/// Profit sum_g (p_g - c)' R_g(p_g). A single price row applies to every group.
inline double evaluate_profit(const MatrixXd & prices, const std::vector<demand::DemandModel> & models, const VectorXd & cost)
{
  if (prices.rows() != 1 && prices.rows() != static_cast<Eigen::Index>(models.size())) {
    fail_validation("evaluate_profit: price rows must be 1 or the number of groups");
  }
  double total = 0.0;
  for (std::size_t g = 0; g < models.size(); ++g) {
    const VectorXd p = prices.row(prices.rows() == 1 ? 0 : static_cast<Eigen::Index>(g)).transpose();
    if (p.size() != cost.size()) { fail_validation("evaluate_profit: price and cost lengths differ"); }
    total += (p - cost).dot(demand::predict_demand(models[g], p));
  }
  return total;
}

inline double evaluate_revenue(const MatrixXd & prices, const std::vector<demand::DemandModel> & models)
{
  double total = 0.0;
  for (std::size_t g = 0; g < models.size(); ++g) {
    const VectorXd p = prices.row(prices.rows() == 1 ? 0 : static_cast<Eigen::Index>(g)).transpose();
    total += p.dot(demand::predict_demand(models[g], p));
  }
  return total;
}

namespace detail {

/// Stacked variables for the listed groups, each with its own bound rows.
inline optim::NlpProblem to_nlp(const PricingProblem & pp, const std::vector<std::size_t> & groups, bool with_cap)
{
  const Eigen::Index H = pp.hours(), k = static_cast<Eigen::Index>(groups.size()), n = H * k;
  optim::NlpProblem p;
  p.objective.hessian = MatrixXd::Zero(n, n);
  p.objective.gradient.resize(n);
  p.lower.resize(n);
  p.upper.resize(n);
  optim::Quadratic rev;
  rev.hessian = MatrixXd::Zero(n, n);
  rev.gradient.resize(n);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto g = groups[static_cast<std::size_t>(i)];
    const auto & m = pp.models[g];
    const MatrixXd sym = m.beta + m.beta.transpose();
    p.objective.hessian.block(i * H, i * H, H, H) = sym;
    p.objective.gradient.segment(i * H, H) = m.alpha - m.beta.transpose() * pp.cost;
    p.objective.constant -= pp.cost.dot(m.alpha);
    rev.hessian.block(i * H, i * H, H, H) = sym;
    rev.gradient.segment(i * H, H) = m.alpha;
    p.lower.segment(i * H, H) = pp.p_min.row(static_cast<Eigen::Index>(g)).transpose();
    p.upper.segment(i * H, H) = pp.p_max.row(static_cast<Eigen::Index>(g)).transpose();
  }
  if (pp.flat_price) {
    p.eq_matrix = MatrixXd::Zero(k, n);
    p.eq_rhs = VectorXd::Constant(k, static_cast<double>(H) * *pp.flat_price);
    for (Eigen::Index i = 0; i < k; ++i) { p.eq_matrix.block(i, i * H, 1, H).setOnes(); }
  }
  if (with_cap && pp.revenue_cap) {
    rev.constant = -*pp.revenue_cap;
    p.constraint = rev;
  }
  return p;
}

inline void finish(PricingSolution & s, const PricingProblem & pp, const std::vector<demand::DemandModel> & models)
{
  s.cost = pp.cost;
  s.flat_price = pp.flat_price;
  s.revenue_cap = pp.revenue_cap;
  for (const auto & m : models) { s.groups.push_back(m.group); }
  const auto G = static_cast<Eigen::Index>(models.size());
  s.per_group_demand.resize(G, pp.hours());
  for (Eigen::Index g = 0; g < G; ++g) {
    s.per_group_demand.row(g) = demand::predict_demand(models[static_cast<std::size_t>(g)], s.prices_for(g)).transpose();
  }
  s.profit = evaluate_profit(s.prices, models, pp.cost);
  s.revenue = evaluate_revenue(s.prices, models);
  if ((s.per_group_demand.array() < 0.0).any()) {
    s.negative_demand = true;
    s.warnings.push_back("predicted demand is negative at the optimum for some group and hour");
  }
  if (!s.proven_global) { s.warnings.push_back("local optimum; global optimality not certified"); }
}

}  // namespace detail

struct SolveOptions
{
  std::size_t starts = 32;
  std::uint64_t seed = 0;
  /// Optional starting price rows (one per group, or one for all groups).
  std::optional<MatrixXd> warm_start;
};

/// One tariff per group. Without a revenue cap the groups are independent and
/// solved one by one; with a cap they are solved jointly.
inline PricingSolution solve_multiple(const PricingProblem & pp, const SolveOptions & opts = {})
{
  pp.validate();
  const Eigen::Index G = pp.groups(), H = pp.hours();
  PricingSolution s;
  s.prices.resize(G, H);
  s.status = optim::Status::optimal;
  s.proven_global = true;
  auto warm_row = [&](Eigen::Index g) -> VectorXd {
    const MatrixXd & w = *opts.warm_start;
    return w.row(w.rows() == 1 ? 0 : g).transpose();
  };
  auto merge_status = [&](const optim::Solution & r) {
    if (r.status == optim::Status::infeasible) {
      fail_infeasible("solve_multiple: no feasible prices found: " + r.diagnostic);
    }
    if (r.status == optim::Status::max_iterations ||
        (r.status == optim::Status::local_optimal && s.status == optim::Status::optimal)) {
      s.status = r.status;
    }
    s.proven_global = s.proven_global && r.proven_global;
    s.kkt_residual = std::max(s.kkt_residual, r.kkt_residual);
    s.starts_used += r.starts_used;
    s.solver_objective += r.objective;
  };
  if (!pp.revenue_cap) {
    for (Eigen::Index g = 0; g < G; ++g) {
      const auto nlp = detail::to_nlp(pp, {static_cast<std::size_t>(g)}, false);
      optim::MaximizeOptions mo{.starts = opts.starts, .seed = derive_seed(opts.seed, static_cast<std::uint64_t>(g))};
      if (opts.warm_start) { mo.warm_starts.push_back(warm_row(g)); }
      const auto r = optim::maximize_pricing(nlp, mo);
      merge_status(r);
      s.prices.row(g) = r.point.transpose();
    }
  } else {
    std::vector<std::size_t> all(static_cast<std::size_t>(G));
    for (std::size_t g = 0; g < all.size(); ++g) { all[g] = g; }
    const auto nlp = detail::to_nlp(pp, all, true);
    optim::MaximizeOptions mo{.starts = opts.starts, .seed = opts.seed};
    if (opts.warm_start) {
      VectorXd w(G * H);
      for (Eigen::Index g = 0; g < G; ++g) { w.segment(g * H, H) = warm_row(g); }
      mo.warm_starts.push_back(w);
    }
    const auto r = optim::maximize_pricing(nlp, mo);
    merge_status(r);
    for (Eigen::Index g = 0; g < G; ++g) { s.prices.row(g) = r.point.segment(g * H, H).transpose(); }
  }
  detail::finish(s, pp, pp.models);
  return s;
}

/// One tariff for everybody, optimized against the sum of the group models
/// within the intersection of the groups' bounds.
inline PricingSolution solve_uniform(const PricingProblem & pp, const SolveOptions & opts = {})
{
  pp.validate();
  PricingProblem agg;
  agg.models = {demand::aggregate_models(pp.models, "uniform")};
  agg.cost = pp.cost;
  agg.p_min = pp.p_min.colwise().maxCoeff();
  agg.p_max = pp.p_max.colwise().minCoeff();
  agg.flat_price = pp.flat_price;
  agg.revenue_cap = pp.revenue_cap;
  agg.validate();
  const auto nlp = detail::to_nlp(agg, {0}, true);
  optim::MaximizeOptions mo{.starts = opts.starts, .seed = derive_seed(opts.seed, "uniform")};
  if (opts.warm_start) { mo.warm_starts.push_back(opts.warm_start->row(0).transpose()); }
  const auto r = optim::maximize_pricing(nlp, mo);
  if (r.status == optim::Status::infeasible) { fail_infeasible("solve_uniform: no feasible prices found: " + r.diagnostic); }
  PricingSolution s;
  s.uniform = true;
  s.prices = r.point.transpose();
  s.status = r.status;
  s.kkt_residual = r.kkt_residual;
  s.starts_used = r.starts_used;
  s.proven_global = r.proven_global;
  s.solver_objective = r.objective;
  detail::finish(s, pp, pp.models);
  return s;
}

struct BenchmarkRun
{
  std::size_t run = 0;
  VectorXd cost;
  double uniform_profit = 0.0;
  double multiple_profit = 0.0;
  double improvement = 0.0;  ///< (multiple - uniform) / |uniform|
  bool dominant = true;
};

struct BenchmarkReport
{
  std::string configuration;
  std::optional<double> flat_price;
  std::optional<double> revenue_cap;
  std::vector<BenchmarkRun> runs;
  double mean_improvement = 0.0;
  double min_improvement = 0.0;
  bool all_dominant = true;
  std::uint64_t seed = 0;
};

struct CostModel
{
  VectorXd base_shape;
  double noise_sd = 0.0;
};

/// Repeats the uniform-versus-multiple comparison on freshly drawn costs.
/// The multiple problem starts from the uniform optimum, so it can only improve on it.
inline BenchmarkReport benchmark(const std::vector<demand::DemandModel> & models, const PricingConfig & cfg,
  const CostModel & costs, std::size_t runs, std::uint64_t seed, const std::string & configuration = "configured")
{
  if (runs < 1) { fail_validation("benchmark: runs must be >= 1"); }
  BenchmarkReport rep;
  rep.configuration = configuration;
  rep.flat_price = cfg.flat_price;
  rep.revenue_cap = cfg.revenue_cap;
  rep.seed = seed;
  rep.min_improvement = optim::inf;
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    BenchmarkRun br;
    br.run = r;
    br.cost = synthgen::generate_costs(1, costs.base_shape, costs.noise_sd, run_seed).row(0).transpose();
    const PricingProblem pp = build_problem(models, br.cost, cfg);
    const SolveOptions so{.starts = cfg.starts, .seed = run_seed};
    const PricingSolution uni = solve_uniform(pp, so);
    SolveOptions mo = so;
    mo.warm_start = uni.prices;
    const PricingSolution multi = solve_multiple(pp, mo);
    br.uniform_profit = uni.profit;
    br.multiple_profit = multi.profit;
    br.improvement = (multi.profit - uni.profit) / std::max(std::abs(uni.profit), 1e-300);
    br.dominant = multi.profit >= uni.profit - 1e-6 * std::max(1.0, std::abs(uni.profit));
    rep.all_dominant = rep.all_dominant && br.dominant;
    rep.mean_improvement += br.improvement / static_cast<double>(runs);
    rep.min_improvement = std::min(rep.min_improvement, br.improvement);
    rep.runs.push_back(std::move(br));
  }
  return rep;
}

}  // namespace segtariff::pricing

#endif  // SEGTARIFF_PRICING_HPP_
