#ifndef SEGTARIFF_SERIALIZE_HPP_
#define SEGTARIFF_SERIALIZE_HPP_

/**
 * @file
 * @brief JSON and CSV artifacts exchanged between pipeline stages.
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "segtariff/clustering.hpp"
#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/pricing.hpp"
#include "segtariff/segmentation.hpp"

namespace segtariff::io {

using nlohmann::json;

inline constexpr int format_version = 1;

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string & s)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_json(const std::string & path, const json & j)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out << j.dump(2) << '\n';
  if (!out) { fail_io("write failed for '" + path + "'"); }
}

inline json read_json(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { fail_io("cannot open '" + path + "'"); }
  try {
    return json::parse(in);
  } catch (const json::exception & e) {
    fail_validation("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void check_version(const json & j, const std::string & what)
{
  if (!j.is_object()) { fail_validation(what + ": expected a JSON object"); }
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    fail_validation(what + ": missing format_version");
  }
  if (j["format_version"].get<int>() != format_version) {
    fail_validation(what + ": unsupported format_version " + j["format_version"].dump());
  }
}

inline json vec_json(const Eigen::VectorXd & v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_json(const Eigen::MatrixXd & m)
{
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) { rows.push_back(vec_json(m.row(r).transpose())); }
  return rows;
}

inline Eigen::VectorXd json_vec(const json & j, const std::string & what)
{
  if (!j.is_array()) { fail_validation(what + ": expected an array"); }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) { fail_validation(what + ": expected numbers"); }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd json_mat(const json & j, const std::string & what)
{
  if (!j.is_array() || j.empty()) { fail_validation(what + ": expected a nonempty array of rows"); }
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = json_vec(j[r], what);
    if (static_cast<std::size_t>(row.size()) != cols) { fail_validation(what + ": ragged rows"); }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

inline json optional_json(const std::optional<double> & v) { return v ? json(*v) : json(nullptr); }

// ---------------------------------------------------------------------------
// Demand models

inline json to_json(const demand::DemandModel & m)
{
  const auto & d = m.diagnostics;
  return {{"format_version", format_version},
    {"group", m.group},
    {"H", m.horizon()},
    {"alpha", vec_json(m.alpha)},
    {"beta", mat_json(m.beta)},
    {"lambda", m.lambda},
    {"diagnostics",
      {{"weighted_rss", d.weighted_rss}, {"r_squared", d.r_squared}, {"rank_deficient", d.rank_deficient},
        {"regularized", d.regularized}, {"effective_observations", d.effective_observations},
        {"kkt_residual", d.kkt_residual}, {"iterations", d.iterations}, {"active_constraints", d.active_constraints}}}};
}

inline demand::DemandModel model_from_json(const json & j)
{
  check_version(j, "demand model");
  try {
    demand::DemandModel m;
    m.group = j.at("group").get<std::string>();
    m.alpha = json_vec(j.at("alpha"), "alpha");
    m.beta = json_mat(j.at("beta"), "beta");
    m.lambda = j.value("lambda", 1.0);
    if (j.at("H").get<Eigen::Index>() != m.alpha.size()) { fail_validation("demand model '" + m.group + "': H disagrees with alpha"); }
    if (j.contains("diagnostics")) {
      const auto & d = j["diagnostics"];
      auto & out = m.diagnostics;
      out.weighted_rss = d.value("weighted_rss", 0.0);
      out.r_squared = d.value("r_squared", std::vector<double>{});
      out.rank_deficient = d.value("rank_deficient", false);
      out.regularized = d.value("regularized", false);
      out.effective_observations = d.value("effective_observations", 0.0);
      out.kkt_residual = d.value("kkt_residual", 0.0);
      out.iterations = d.value("iterations", std::size_t{0});
      out.active_constraints = d.value("active_constraints", std::vector<std::string>{});
    }
    m.validate();
    return m;
  } catch (const json::exception & e) {
    fail_validation(std::string("demand model: ") + e.what());
  }
}

/// Models file: {"format_version", "config_hash", "lambda", "models": [...]}.
inline json models_json(const std::vector<demand::DemandModel> & models, double lambda, const std::string & config_hash)
{
  json arr = json::array();
  for (const auto & m : models) { arr.push_back(to_json(m)); }
  return {{"format_version", format_version}, {"config_hash", config_hash}, {"lambda", lambda}, {"models", arr}};
}

inline std::vector<demand::DemandModel> models_from_json(const json & j)
{
  check_version(j, "models file");
  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) {
    fail_validation("models file: 'models' must be a nonempty array");
  }
  std::vector<demand::DemandModel> out;
  for (const auto & m : j["models"]) { out.push_back(model_from_json(m)); }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_or_nan(const json & j)
{
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json to_json(const clustering::ScoreEntry & e)
{
  return {{"algorithm", clustering::to_string(e.algorithm)}, {"k", e.k}, {"sc", e.sc}, {"dbi", finite_or_null(e.dbi)},
    {"objective", e.objective}};
}

inline clustering::ScoreEntry score_from_json(const json & j)
{
  return {clustering::algorithm_from_string(j.at("algorithm").get<std::string>()), j.at("k").get<std::size_t>(),
    j.at("sc").get<double>(), number_or_nan(j.at("dbi")), j.at("objective").get<double>()};
}

inline json to_json(const segmentation::SegmentationResult & r, const std::string & config_hash = "")
{
  json lineage = json::array();
  for (std::size_t g = 0; g < r.lineage.size(); ++g) {
    json entries = json::array();
    for (const auto & e : r.lineage[g]) {
      entries.push_back({{"initial_group", e.initial_group}, {"sub_cluster", e.sub_cluster}, {"tariff_group", e.tariff_group},
        {"size", e.size}});
    }
    lineage.push_back({{"group", g + 1}, {"sub_clusters", entries}});
  }
  json subs = json::array();
  for (const auto & s : r.sub_models) {
    json table = json::array();
    for (const auto & e : s.score_table) { table.push_back(to_json(e)); }
    subs.push_back({{"initial_group", s.group}, {"algorithm", clustering::to_string(s.algorithm)}, {"k", s.k}, {"sc", s.sc},
      {"dbi", finite_or_null(s.dbi)}, {"sizes", s.sizes}, {"score_table", table}});
  }
  json merge_scores = json::array();
  for (const auto & e : r.merge_scores) { merge_scores.push_back(to_json(e)); }
  json membership = json::object();
  for (const auto & [id, g] : r.membership) { membership[id] = g; }
  return {{"format_version", format_version}, {"config_hash", config_hash}, {"period", r.period},
    {"final_groups", r.final_groups}, {"merge_strategy", segmentation::to_string(r.merge_strategy)}, {"seed", r.seed},
    {"group_sizes", r.group_sizes()}, {"membership", membership}, {"initial_groups", r.initial_groups},
    {"lineage", lineage}, {"sub_models", subs}, {"merge_scores", merge_scores}, {"warnings", r.warnings}};
}

inline segmentation::SegmentationResult segmentation_from_json(const json & j)
{
  check_version(j, "segmentation file");
  try {
    segmentation::SegmentationResult r;
    r.period = j.value("period", std::string());
    r.final_groups = j.at("final_groups").get<std::size_t>();
    r.merge_strategy = segmentation::merge_strategy_from_string(j.at("merge_strategy").get<std::string>());
    r.seed = j.value("seed", std::uint64_t{0});
    for (auto it = j.at("membership").begin(); it != j.at("membership").end(); ++it) {
      r.membership[it.key()] = it.value().get<std::size_t>();
    }
    r.initial_groups = j.value("initial_groups", std::map<std::string, std::string>{});
    r.lineage.assign(r.final_groups, {});
    for (const auto & g : j.at("lineage")) {
      const auto idx = g.at("group").get<std::size_t>();
      if (idx < 1 || idx > r.final_groups) { fail_validation("segmentation file: lineage group out of range"); }
      for (const auto & e : g.at("sub_clusters")) {
        r.lineage[idx - 1].push_back({e.at("initial_group").get<std::string>(), e.at("sub_cluster").get<std::size_t>(),
          e.value("tariff_group", std::string()), e.at("size").get<std::size_t>()});
      }
    }
    for (const auto & sj : j.value("sub_models", json::array())) {
      segmentation::SubModelSummary sm;
      sm.group = sj.at("initial_group").get<std::string>();
      sm.algorithm = clustering::algorithm_from_string(sj.at("algorithm").get<std::string>());
      sm.k = sj.at("k").get<std::size_t>();
      sm.sc = sj.at("sc").get<double>();
      sm.dbi = number_or_nan(sj.at("dbi"));
      sm.sizes = sj.at("sizes").get<std::vector<std::size_t>>();
      for (const auto & e : sj.at("score_table")) { sm.score_table.push_back(score_from_json(e)); }
      r.sub_models.push_back(std::move(sm));
    }
    for (const auto & e : j.value("merge_scores", json::array())) { r.merge_scores.push_back(score_from_json(e)); }
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.validate();
    return r;
  } catch (const json::exception & e) {
    fail_validation(std::string("segmentation file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pricing

inline json to_json(const pricing::PricingSolution & s)
{
  return {{"variant", s.uniform ? "uniform" : "multiple"}, {"groups", s.groups}, {"prices", mat_json(s.prices)},
    {"per_group_demand", mat_json(s.per_group_demand)}, {"cost", vec_json(s.cost)}, {"profit", s.profit},
    {"revenue", s.revenue}, {"solver_objective", s.solver_objective}, {"status", optim::to_string(s.status)},
    {"kkt_residual", s.kkt_residual}, {"starts_used", s.starts_used}, {"proven_global", s.proven_global},
    {"negative_demand", s.negative_demand}, {"flat_price", optional_json(s.flat_price)},
    {"revenue_cap", optional_json(s.revenue_cap)}, {"warnings", s.warnings}};
}

/// Companion CSV: hour,group,price_cents,demand_kwh,cost_cents.
inline void write_prices_csv(const std::string & path, const std::vector<const pricing::PricingSolution *> & solutions)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out.precision(17);
  out << "hour,group,price_cents,demand_kwh,cost_cents\n";
  for (const auto * s : solutions) {
    for (Eigen::Index h = 0; h < s->cost.size(); ++h) {
      if (s->uniform) {
        out << h << ",uniform," << s->prices(0, h) << ',' << s->per_group_demand.col(h).sum() << ',' << s->cost[h] << '\n';
        continue;
      }
      for (Eigen::Index g = 0; g < s->prices.rows(); ++g) {
        out << h << ',' << s->groups[static_cast<std::size_t>(g)] << ',' << s->prices(g, h) << ',' << s->per_group_demand(g, h)
            << ',' << s->cost[h] << '\n';
      }
    }
  }
}

inline json to_json(const pricing::BenchmarkReport & r)
{
  json runs = json::array();
  for (const auto & b : r.runs) {
    runs.push_back({{"run", b.run}, {"cost", vec_json(b.cost)}, {"uniform_profit", b.uniform_profit},
      {"multiple_profit", b.multiple_profit}, {"improvement", b.improvement}, {"dominant", b.dominant}});
  }
  return {{"configuration", r.configuration}, {"flat_price", optional_json(r.flat_price)},
    {"revenue_cap", optional_json(r.revenue_cap)}, {"seed", r.seed}, {"runs", runs},
    {"mean_improvement", r.mean_improvement}, {"min_improvement", r.min_improvement}, {"all_dominant", r.all_dominant}};
}

}  // namespace segtariff::io

#endif  // SEGTARIFF_SERIALIZE_HPP_
