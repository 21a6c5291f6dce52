#ifndef SEGTARIFF_SEGMENTATION_HPP_
#define SEGTARIFF_SEGMENTATION_HPP_

/**
 * @file
 * @brief Adaptive segmentation cycle: cluster each initial group separately,
 * then merge the sub-clusters into a fixed number of final groups, either by
 * centroid distance or by similarity of fitted demand models.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "segtariff/clustering.hpp"
#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/ingest.hpp"
#include "segtariff/rng.hpp"

namespace segtariff::segmentation {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class MergeStrategy { centroid, model };

inline const char * to_string(MergeStrategy m) { return m == MergeStrategy::centroid ? "centroid" : "model"; }

inline MergeStrategy merge_strategy_from_string(const std::string & s)
{
  if (s == "centroid") { return MergeStrategy::centroid; }
  if (s == "model") { return MergeStrategy::model; }
  fail_validation("unknown merge strategy '" + s + "' (expected centroid or model)");
}

/// Features and raw readings of one initial group, rows in the same order.
struct GroupData
{
  ingest::FeatureMatrix features;
  ingest::ReadingSet readings;
};

struct SubClusterProfile
{
  std::string parent_group;
  std::size_t sub_index = 0;
  std::string tariff_group;  ///< tariff shared by all members
  VectorXd centroid;
  std::size_t size = 0;
  MatrixXd aggregate_series;  ///< days × slots, summed raw consumption
  std::vector<ingest::Day> days;
  std::vector<std::string> members;
};

/// Selection outcome for one initial group.
struct SubModelSummary
{
  std::string group;
  clustering::Algorithm algorithm = clustering::Algorithm::kmeans;
  std::size_t k = 0;
  double sc = 0.0;
  double dbi = 0.0;
  std::vector<std::size_t> sizes;
  std::vector<clustering::ScoreEntry> score_table;
};

struct LineageEntry
{
  std::string initial_group;
  std::size_t sub_cluster = 0;
  std::string tariff_group;
  std::size_t size = 0;
};

struct SegmentationResult
{
  std::string period;
  std::size_t final_groups = 0;
  std::map<std::string, std::size_t> membership;  ///< customer -> final group in 1..G
  std::map<std::string, std::string> initial_groups;
  std::vector<std::vector<LineageEntry>> lineage;  ///< per final group
  std::vector<SubModelSummary> sub_models;
  MergeStrategy merge_strategy = MergeStrategy::centroid;
  std::vector<clustering::ScoreEntry> merge_scores;  ///< SC/DBI of candidate final counts
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;

  std::vector<std::size_t> group_sizes() const
  {
    std::vector<std::size_t> sizes(final_groups, 0);
    for (const auto & [id, g] : membership) { ++sizes.at(g - 1); }
    return sizes;
  }

  void validate() const
  {
    if (final_groups == 0) { fail_validation("segmentation: no final groups"); }
    std::vector<std::size_t> sizes(final_groups, 0);
    for (const auto & [id, g] : membership) {
      if (g < 1 || g > final_groups) { fail_validation("segmentation: customer '" + id + "' has group out of range"); }
      ++sizes[g - 1];
    }
    if (lineage.size() != final_groups) { fail_validation("segmentation: lineage does not cover every group"); }
    for (std::size_t g = 0; g < final_groups; ++g) {
      if (sizes[g] == 0) { fail_validation("segmentation: final group " + std::to_string(g + 1) + " is empty"); }
      std::size_t total = 0;
      for (const auto & e : lineage[g]) { total += e.size; }
      if (total != sizes[g]) { fail_validation("segmentation: lineage sizes disagree with group " + std::to_string(g + 1)); }
    }
  }
};

struct SubClusterOptions
{
  clustering::SelectOptions select;
};

struct SubClusterResult
{
  std::vector<SubClusterProfile> profiles;
  std::vector<SubModelSummary> summaries;
};

/// Model selection within every initial group; one profile per sub-cluster.
inline SubClusterResult sub_cluster(const std::map<std::string, GroupData> & groups, const SubClusterOptions & opts)
{
  if (groups.empty()) { fail_validation("sub_cluster: no groups"); }
  std::optional<std::size_t> r;
  SubClusterResult out;
  for (const auto & [name, data] : groups) {
    const auto & fm = data.features;
    if (fm.rows() == 0) { fail_validation("sub_cluster: group '" + name + "' is empty"); }
    if (r && fm.attribute_length() != *r) { fail_validation("sub_cluster: groups differ in attribute length"); }
    r = fm.attribute_length();
    if (fm.rows() < opts.select.k_min) {
      fail_validation("sub_cluster: group '" + name + "' has " + std::to_string(fm.rows()) + " customers, fewer than k_min=" +
                      std::to_string(opts.select.k_min));
    }
    if (data.readings.num_customers() != fm.rows()) { fail_validation("sub_cluster: readings and features of '" + name + "' differ"); }
    clustering::SelectOptions so = opts.select;
    so.seed = derive_seed(opts.select.seed, name);
    const clustering::ClusterModel m = clustering::select_model(fm, so);
    SubModelSummary sum{name, m.algorithm, m.k, m.sc, m.dbi, m.cluster_sizes(), m.score_table};
    out.summaries.push_back(std::move(sum));
    for (std::size_t c = 0; c < m.k; ++c) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < m.assignments.size(); ++i) {
        if (m.assignments[i] == c) { rows.push_back(i); }
      }
      SubClusterProfile p;
      p.parent_group = name;
      p.sub_index = c;
      p.centroid = m.centroids.row(static_cast<Eigen::Index>(c)).transpose();
      p.size = rows.size();
      const ingest::ReadingSet part = data.readings.subset(rows);
      p.aggregate_series = part.aggregate();
      p.days = part.days;
      p.members = part.customers;
      out.profiles.push_back(std::move(p));
    }
  }
  return out;
}

namespace detail {

/// Group profiles by `labels` (0-based), relabelled in order of first profile.
inline SegmentationResult assemble(const std::vector<SubClusterProfile> & profiles, const std::vector<std::size_t> & labels,
  std::size_t G, MergeStrategy strategy)
{
  std::vector<std::size_t> relabel(G, G);
  std::size_t next = 0;
  for (auto l : labels) {
    if (relabel[l] == G) { relabel[l] = next++; }
  }
  SegmentationResult res;
  res.final_groups = next;
  res.merge_strategy = strategy;
  res.lineage.assign(next, {});
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const std::size_t g = relabel[labels[i]];
    const auto & p = profiles[i];
    res.lineage[g].push_back({p.parent_group, p.sub_index, p.tariff_group, p.size});
    for (const auto & id : p.members) {
      if (!res.membership.emplace(id, g + 1).second) { fail_validation("merge: customer '" + id + "' appears in two sub-clusters"); }
    }
  }
  return res;
}

inline std::vector<clustering::ScoreEntry> candidate_scores(const MatrixXd & X, std::uint64_t seed)
{
  std::vector<clustering::ScoreEntry> out;
  const auto n = static_cast<std::size_t>(X.rows());
  if (n < 3) { return out; }
  const MatrixXd dist = clustering::distance_matrix(X);
  const std::size_t distinct = clustering::count_distinct_rows(dist);
  for (std::size_t k = 2; k <= std::min<std::size_t>({8, n - 1, distinct}); ++k) {
    clustering::KMeansOptions ko;
    ko.seed = derive_seed(seed, k);
    const auto m = clustering::kmeans(X, k, ko);
    double dbi = std::numeric_limits<double>::quiet_NaN();
    try {
      dbi = clustering::davies_bouldin(X, m.assignments);
    } catch (const Error &) {
    }
    out.push_back({clustering::Algorithm::kmeans, k, clustering::silhouette(dist, m.assignments), dbi, m.objective});
  }
  return out;
}

inline std::vector<std::size_t> cluster_rows(const MatrixXd & X, std::size_t G, std::uint64_t seed,
  const std::vector<double> & weights = {})
{
  const auto n = static_cast<std::size_t>(X.rows());
  if (G == 1) { return std::vector<std::size_t>(n, 0); }
  if (G == n) {
    std::vector<std::size_t> id(n);
    for (std::size_t i = 0; i < n; ++i) { id[i] = i; }
    return id;
  }
  clustering::KMeansOptions ko;
  ko.seed = seed;
  ko.weights = weights;
  return clustering::kmeans(X, G, ko).assignments;
}

inline void check_counts(std::size_t profiles, std::size_t G)
{
  if (G < 1) { fail_validation("merge: final group count must be >= 1"); }
  if (profiles < G) {
    fail_validation("merge: " + std::to_string(profiles) + " sub-clusters cannot form " + std::to_string(G) + " final groups");
  }
}

}  // namespace detail

/// k-means over sub-cluster centroids (optionally weighted by size).
inline SegmentationResult merge_by_centroid(const std::vector<SubClusterProfile> & profiles, std::size_t G_final,
  std::uint64_t seed, bool weight_by_size = false)
{
  detail::check_counts(profiles.size(), G_final);
  MatrixXd X(static_cast<Eigen::Index>(profiles.size()), profiles.front().centroid.size());
  std::vector<double> w;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (profiles[i].centroid.size() != X.cols()) { fail_validation("merge_by_centroid: centroid lengths differ"); }
    X.row(static_cast<Eigen::Index>(i)) = profiles[i].centroid.transpose();
    if (weight_by_size) { w.push_back(static_cast<double>(profiles[i].size)); }
  }
  SegmentationResult res =
    detail::assemble(profiles, detail::cluster_rows(X, G_final, seed, w), G_final, MergeStrategy::centroid);
  res.merge_scores = detail::candidate_scores(X, seed);
  res.seed = seed;
  return res;
}

/// Per-household coefficient vector [alpha; vec(beta)] / size of a sub-cluster fit.
inline VectorXd coefficient_vector(const demand::DemandModel & m, std::size_t size)
{
  const Eigen::Index H = m.horizon();
  VectorXd v(H + H * H);
  v.head(H) = m.alpha;
  v.tail(H * H) = Eigen::Map<const VectorXd>(m.beta.data(), H * H);
  return v / static_cast<double>(size);
}

/// Columns centred, then the alpha block (first H columns) and the beta block
/// each divided by their own RMS. Per-column scaling would blow up the many
/// beta entries that are pure estimation noise.
inline MatrixXd standardize_blocks(const MatrixXd & X, Eigen::Index H)
{
  MatrixXd Z = X.rowwise() - X.colwise().mean();
  auto scale = [](auto block) {
    const double rms = block.size() ? std::sqrt(block.array().square().mean()) : 0.0;
    if (rms > 0.0) { block /= rms; }
  };
  scale(Z.leftCols(H));
  scale(Z.rightCols(Z.cols() - H));
  return Z;
}

/// Fit a demand model per sub-cluster under its tariff, then k-means over the
/// block-standardized per-household coefficient vectors.
inline SegmentationResult merge_by_model(const std::vector<SubClusterProfile> & profiles,
  const std::map<std::string, ingest::TariffSeries> & tariffs, std::size_t G_final, double lambda, std::uint64_t seed,
  std::vector<demand::DemandModel> * fitted = nullptr)
{
  detail::check_counts(profiles.size(), G_final);
  std::vector<VectorXd> rows;
  std::vector<demand::DemandModel> models;
  for (const auto & p : profiles) {
    const std::string & key = p.tariff_group.empty() ? p.parent_group : p.tariff_group;
    auto it = tariffs.find(key);
    if (it == tariffs.end()) { fail_validation("merge_by_model: no tariff for group '" + key + "'"); }
    demand::FitHistory hist{it->second.prices_for(p.days), p.aggregate_series};
    models.push_back(demand::fit_demand_model(hist, lambda, p.parent_group + "/" + std::to_string(p.sub_index)));
    rows.push_back(coefficient_vector(models.back(), p.size));
  }
  MatrixXd X(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) { X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose(); }
  const MatrixXd Z = standardize_blocks(X, models.front().horizon());
  SegmentationResult res = detail::assemble(profiles, detail::cluster_rows(Z, G_final, seed), G_final, MergeStrategy::model);
  res.merge_scores = detail::candidate_scores(Z, seed);
  res.seed = seed;
  for (const auto & m : models) {
    if (m.diagnostics.rank_deficient) { res.warnings.push_back("sub-cluster " + m.group + ": rank-deficient demand fit"); }
  }
  if (fitted) { *fitted = std::move(models); }
  return res;
}

struct CycleConfig
{
  clustering::SelectOptions select;
  std::size_t g_final = 4;
  MergeStrategy merge = MergeStrategy::centroid;
  bool weight_by_size = false;
  double lambda = 0.98;
  ingest::AttributeParams attributes;
  std::string period;
  std::uint64_t seed = 0;
};

/**
 * One segmentation cycle. Initial groups are the prior result's final groups
 * when given, otherwise the tariff groups from `allocation`. Sub-clusters are
 * split by tariff so each has a single price history.
 */
inline SegmentationResult run_cycle(const ingest::ReadingSet & rs, const std::map<std::string, ingest::TariffSeries> & tariffs,
  const std::map<std::string, std::string> & allocation, const CycleConfig & cfg,
  const SegmentationResult * prior = nullptr)
{
  rs.validate();
  std::vector<std::string> warnings;
  ingest::IngestLog log;
  const ingest::ReadingSet normalized = ingest::normalize_readings(rs, &log);
  for (const auto & w : log.warnings) { warnings.push_back(w); }
  const ingest::FeatureMatrix features = ingest::build_attributes(normalized, cfg.attributes);

  std::map<std::string, std::size_t> raw_row;
  for (std::size_t i = 0; i < rs.num_customers(); ++i) { raw_row[rs.customers[i]] = i; }

  // Initial grouping.
  std::map<std::string, std::vector<std::size_t>> group_rows;  // rows of `features`
  std::map<std::string, std::string> initial;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const std::string & id = features.row_ids[i];
    auto at = allocation.find(id);
    if (at == allocation.end()) { fail_validation("run_cycle: customer '" + id + "' has no tariff group"); }
    if (!tariffs.count(at->second)) { fail_validation("run_cycle: no tariff series for group '" + at->second + "'"); }
    std::string g = at->second;
    if (prior) {
      auto pt = prior->membership.find(id);
      if (pt == prior->membership.end()) {
        warnings.push_back("customer '" + id + "' is new since the prior period; starting from its tariff group");
      } else {
        g = "G" + std::to_string(pt->second);
      }
    }
    initial[id] = g;
    group_rows[g].push_back(i);
  }

  std::map<std::string, GroupData> groups;
  for (const auto & [g, rows] : group_rows) {
    GroupData gd;
    gd.features.values.resize(static_cast<Eigen::Index>(rows.size()), features.values.cols());
    gd.features.attribute_labels = features.attribute_labels;
    std::vector<std::size_t> raw;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gd.features.values.row(static_cast<Eigen::Index>(k)) = features.values.row(static_cast<Eigen::Index>(rows[k]));
      gd.features.row_ids.push_back(features.row_ids[rows[k]]);
      raw.push_back(raw_row.at(features.row_ids[rows[k]]));
    }
    gd.readings = rs.subset(raw);
    groups.emplace(g, std::move(gd));
  }

  SubClusterOptions so{cfg.select};
  so.select.seed = derive_seed(cfg.seed, "sub-cluster");
  SubClusterResult sub = sub_cluster(groups, so);

  // Split sub-clusters whose members are on different tariffs.
  std::vector<SubClusterProfile> profiles;
  std::map<std::string, std::size_t> feature_row;
  for (std::size_t i = 0; i < features.rows(); ++i) { feature_row[features.row_ids[i]] = i; }
  for (auto & p : sub.profiles) {
    std::map<std::string, std::vector<std::string>> by_tariff;
    for (const auto & id : p.members) { by_tariff[allocation.at(id)].push_back(id); }
    for (auto & [tg, ids] : by_tariff) {
      SubClusterProfile q;
      q.parent_group = p.parent_group;
      q.sub_index = p.sub_index;
      q.tariff_group = tg;
      q.days = p.days;
      q.members = ids;
      q.size = ids.size();
      if (by_tariff.size() == 1) {
        q.centroid = p.centroid;
        q.aggregate_series = p.aggregate_series;
      } else {
        q.centroid = VectorXd::Zero(p.centroid.size());
        std::vector<std::size_t> raw;
        for (const auto & id : ids) {
          q.centroid += features.values.row(static_cast<Eigen::Index>(feature_row.at(id))).transpose();
          raw.push_back(raw_row.at(id));
        }
        q.centroid /= static_cast<double>(ids.size());
        q.aggregate_series = rs.subset(raw).aggregate();
      }
      profiles.push_back(std::move(q));
    }
  }

  const std::uint64_t merge_seed = derive_seed(cfg.seed, "merge");
  SegmentationResult res = cfg.merge == MergeStrategy::centroid
                             ? merge_by_centroid(profiles, cfg.g_final, merge_seed, cfg.weight_by_size)
                             : merge_by_model(profiles, tariffs, cfg.g_final, cfg.lambda, merge_seed);
  res.period = cfg.period;
  res.initial_groups = std::move(initial);
  res.sub_models = std::move(sub.summaries);
  res.seed = cfg.seed;
  warnings.insert(warnings.end(), res.warnings.begin(), res.warnings.end());
  res.warnings = std::move(warnings);
  res.validate();
  return res;
}

/// Fraction of customers (present in both) whose group changed, after the
/// relabelling of `b` that maximizes agreement.
inline double churn(const SegmentationResult & a, const SegmentationResult & b)
{
  const std::size_t Ga = a.final_groups, Gb = b.final_groups;
  MatrixXd overlap = MatrixXd::Zero(static_cast<Eigen::Index>(Ga), static_cast<Eigen::Index>(Gb));
  double common = 0.0;
  for (const auto & [id, ga] : a.membership) {
    auto it = b.membership.find(id);
    if (it == b.membership.end()) { continue; }
    overlap(static_cast<Eigen::Index>(ga - 1), static_cast<Eigen::Index>(it->second - 1)) += 1.0;
    common += 1.0;
  }
  if (common == 0.0) { return 0.0; }
  // Best one-to-one matching; group counts are small, so enumerate permutations.
  std::vector<std::size_t> perm(std::max(Ga, Gb));
  for (std::size_t i = 0; i < perm.size(); ++i) { perm[i] = i; }
  double best = 0.0;
  do {
    double agree = 0.0;
    for (std::size_t i = 0; i < Ga; ++i) {
      if (perm[i] < Gb) { agree += overlap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i])); }
    }
    best = std::max(best, agree);
  } while (perm.size() <= 9 && std::next_permutation(perm.begin(), perm.end()));
  return 1.0 - best / common;
}

}  // namespace segtariff::segmentation

#endif  // SEGTARIFF_SEGMENTATION_HPP_
