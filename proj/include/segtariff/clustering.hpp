#ifndef SEGTARIFF_CLUSTERING_HPP_
#define SEGTARIFF_CLUSTERING_HPP_

/**
 * @file
 * @brief K-means and Ward clustering, internal validation (silhouette and
 * Davies-Bouldin) and model selection over algorithms and cluster counts.
 *
 * Cluster indices are 0-based. Both algorithms return canonical labels:
 * clusters are numbered in order of their first member row.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segtariff/error.hpp"
#include "segtariff/ingest.hpp"
#include "segtariff/rng.hpp"

namespace segtariff::clustering {

enum class Algorithm { kmeans, hierarchical_ward };

inline const char * to_string(Algorithm a)
{
  return a == Algorithm::kmeans ? "kmeans" : "hierarchical-ward";
}

inline Algorithm algorithm_from_string(const std::string & s)
{
  if (s == "kmeans" || s == "k-means") { return Algorithm::kmeans; }
  if (s == "hierarchical" || s == "hierarchical-ward" || s == "ward") { return Algorithm::hierarchical_ward; }
  fail_validation("unknown clustering algorithm '" + s + "'");
}

struct ScoreEntry
{
  Algorithm algorithm;
  std::size_t k;
  double sc;
  double dbi;
  double objective;
};

struct ClusterModel
{
  Algorithm algorithm = Algorithm::kmeans;
  std::size_t k = 0;
  std::vector<std::size_t> assignments;
  Eigen::MatrixXd centroids;  // k × r
  /// Sum of Euclidean distances from each row to its centroid.
  double objective = 0.0;
  /// Sum of squared distances (what Lloyd iterations decrease).
  double inertia = 0.0;
  double sc = std::numeric_limits<double>::quiet_NaN();
  double dbi = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  std::vector<std::string> row_ids;
  /// Inertia after every Lloyd iteration of the retained restart.
  std::vector<double> inertia_trace;
  std::size_t iterations = 0;
  std::vector<ScoreEntry> score_table;

  std::vector<std::size_t> cluster_sizes() const
  {
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assignments) { ++sizes[a]; }
    return sizes;
  }
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd & X, Eigen::Index i, const Eigen::MatrixXd & C, Eigen::Index j)
{
  return (X.row(i) - C.row(j)).squaredNorm();
}

inline std::size_t cluster_count(std::span<const std::size_t> assignments)
{
  if (assignments.empty()) { return 0; }
  return *std::max_element(assignments.begin(), assignments.end()) + 1;
}

/// Weighted means of assigned rows.
inline Eigen::MatrixXd centroids_of(const Eigen::MatrixXd & X, std::span<const std::size_t> assignments,
  std::size_t k, std::span<const double> weights = {})
{
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), X.cols());
  std::vector<double> mass(k, 0.0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    const auto a = static_cast<Eigen::Index>(assignments[static_cast<std::size_t>(i)]);
    C.row(a) += w * X.row(i);
    mass[static_cast<std::size_t>(a)] += w;
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (mass[j] > 0.0) { C.row(static_cast<Eigen::Index>(j)) /= mass[j]; }
  }
  return C;
}

/// Relabel clusters by first appearance; permutes centroid rows to match.
inline void canonicalize(ClusterModel & m)
{
  std::vector<std::size_t> map(m.k, static_cast<std::size_t>(-1));
  std::size_t next = 0;
  for (auto a : m.assignments) {
    if (map[a] == static_cast<std::size_t>(-1)) { map[a] = next++; }
  }
  for (std::size_t j = 0; j < m.k; ++j) {
    if (map[j] == static_cast<std::size_t>(-1)) { map[j] = next++; }
  }
  for (auto & a : m.assignments) { a = map[a]; }
  Eigen::MatrixXd C(m.centroids.rows(), m.centroids.cols());
  for (std::size_t j = 0; j < m.k; ++j) {
    C.row(static_cast<Eigen::Index>(map[j])) = m.centroids.row(static_cast<Eigen::Index>(j));
  }
  m.centroids = std::move(C);
}

inline void score_objective(ClusterModel & m, const Eigen::MatrixXd & X, std::span<const double> weights = {})
{
  m.objective = 0.0;
  m.inertia = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    const double d2 = sq_dist(X, i, m.centroids, static_cast<Eigen::Index>(m.assignments[static_cast<std::size_t>(i)]));
    m.objective += w * std::sqrt(d2);
    m.inertia += w * d2;
  }
}

inline void check_k(std::size_t k, std::size_t n)
{
  if (k < 2 && n > 1) { fail_validation("cluster count must be at least 2"); }
  if (k == 0) { fail_validation("cluster count must be positive"); }
  if (k > n) { fail_validation("cluster count " + std::to_string(k) + " exceeds " + std::to_string(n) + " rows"); }
}

}  // namespace detail

struct KMeansOptions
{
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  /// Converged when no centroid moves further than this.
  double tolerance = 1e-6;
  /// Optional per-row weights (all ones when empty).
  std::vector<double> weights;
};

namespace detail {

inline ClusterModel kmeans_single(const Eigen::MatrixXd & X, std::size_t k, const KMeansOptions & opts, Rng & rng)
{
  const Eigen::Index N = X.rows();
  const auto K = static_cast<Eigen::Index>(k);
  std::span<const double> w(opts.weights);
  auto weight = [&](Eigen::Index i) { return w.empty() ? 1.0 : w[static_cast<std::size_t>(i)]; };

  // k-means++ seeding
  Eigen::MatrixXd C(K, X.cols());
  std::vector<double> d2(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
  auto sample = [&](auto && mass_of) -> Eigen::Index {
    double total = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) { total += mass_of(i); }
    if (!(total > 0.0)) { return -1; }
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    Eigen::Index last_positive = -1;
    for (Eigen::Index i = 0; i < N; ++i) {
      const double m = mass_of(i);
      if (m <= 0.0) { continue; }
      last_positive = i;
      acc += m;
      if (acc > target) { return i; }
    }
    return last_positive;
  };
  Eigen::Index first = sample(weight);
  if (first < 0) { fail_validation("kmeans: all row weights are zero"); }
  C.row(0) = X.row(first);
  for (Eigen::Index j = 1; j < K; ++j) {
    for (Eigen::Index i = 0; i < N; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(X, i, C, j - 1));
    }
    Eigen::Index pick = sample([&](Eigen::Index i) { return weight(i) * d2[static_cast<std::size_t>(i)]; });
    // Fewer distinct rows than clusters: duplicate a row and let repair sort it out.
    C.row(j) = X.row(pick < 0 ? first : pick);
  }

  ClusterModel m;
  m.algorithm = Algorithm::kmeans;
  m.k = k;
  m.assignments.assign(static_cast<std::size_t>(N), 0);
  std::vector<double> dist(static_cast<std::size_t>(N), 0.0);
  std::vector<std::size_t> sizes(k, 0);
  double previous = std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < opts.max_iterations; ++iter) {
    std::fill(sizes.begin(), sizes.end(), 0);
    for (Eigen::Index i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (Eigen::Index j = 0; j < K; ++j) {
        const double dd = sq_dist(X, i, C, j);
        if (dd < best) {  // strict: ties go to the lowest index
          best = dd;
          arg = static_cast<std::size_t>(j);
        }
      }
      m.assignments[static_cast<std::size_t>(i)] = arg;
      dist[static_cast<std::size_t>(i)] = best;
      ++sizes[arg];
    }
    // Empty-cluster repair: move the row farthest from its centroid.
    for (std::size_t j = 0; j < k; ++j) {
      if (sizes[j] > 0) { continue; }
      Eigen::Index far = -1;
      double far_d = 0.0;
      for (Eigen::Index i = 0; i < N; ++i) {
        const auto a = m.assignments[static_cast<std::size_t>(i)];
        if (sizes[a] > 1 && dist[static_cast<std::size_t>(i)] > far_d) {
          far_d = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      if (far < 0) {
        fail_validation("kmeans: empty-cluster repair failed (fewer than " + std::to_string(k) +
                        " distinct rows)");
      }
      --sizes[m.assignments[static_cast<std::size_t>(far)]];
      m.assignments[static_cast<std::size_t>(far)] = j;
      ++sizes[j];
      dist[static_cast<std::size_t>(far)] = 0.0;
      C.row(static_cast<Eigen::Index>(j)) = X.row(far);
    }

    Eigen::MatrixXd next = centroids_of(X, m.assignments, k, w);
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      inertia += weight(i) * sq_dist(X, i, next, static_cast<Eigen::Index>(m.assignments[static_cast<std::size_t>(i)]));
    }
    if (inertia > previous * (1.0 + 1e-12) + 1e-12) {
      fail_solver("kmeans: Lloyd objective increased (" + std::to_string(previous) + " -> " +
                  std::to_string(inertia) + ")");
    }
    previous = inertia;
    m.inertia_trace.push_back(inertia);
    const double shift = (next - C).rowwise().norm().maxCoeff();
    C = std::move(next);
    m.iterations = iter + 1;
    if (shift < opts.tolerance) { break; }
  }
  m.centroids = std::move(C);
  score_objective(m, X, w);
  return m;
}

}  // namespace detail

/**
 * Lloyd's algorithm with k-means++ seeding, best of `restarts` by the summed
 * Euclidean distance objective. Deterministic given the seed.
 */
inline ClusterModel kmeans(const Eigen::MatrixXd & X, std::size_t k, const KMeansOptions & opts = {})
{
  detail::check_k(k, static_cast<std::size_t>(X.rows()));
  if (opts.restarts == 0) { fail_validation("kmeans: restarts must be >= 1"); }
  if (!opts.weights.empty() && opts.weights.size() != static_cast<std::size_t>(X.rows())) {
    fail_validation("kmeans: weight count does not match rows");
  }
  std::optional<ClusterModel> best;
  for (std::size_t r = 0; r < opts.restarts; ++r) {
    Rng rng(derive_seed(opts.seed, r));
    ClusterModel m = detail::kmeans_single(X, k, opts, rng);
    if (!best || m.objective < best->objective) { best = std::move(m); }
  }
  best->seed = opts.seed;
  detail::canonicalize(*best);
  return std::move(*best);
}

inline ClusterModel kmeans(const ingest::FeatureMatrix & fm, std::size_t k, const KMeansOptions & opts = {})
{
  ClusterModel m = kmeans(fm.values, k, opts);
  m.row_ids = fm.row_ids;
  return m;
}

/**
 * Agglomerative clustering with Ward linkage, cut at `k` clusters.
 *
 * Merge cost between clusters A and B is |A||B|/(|A|+|B|) * ||mu_A - mu_B||^2.
 * Ties are broken by the lowest (i, j) pair of cluster slots.
 */
inline ClusterModel hierarchical(const Eigen::MatrixXd & X, std::size_t k)
{
  const auto N = static_cast<std::size_t>(X.rows());
  detail::check_k(k, N);
  std::vector<Eigen::VectorXd> mean(N);
  std::vector<double> size(N, 1.0);
  std::vector<bool> alive(N, true);
  std::vector<std::size_t> owner(N);  // row -> slot
  for (std::size_t i = 0; i < N; ++i) {
    mean[i] = X.row(static_cast<Eigen::Index>(i)).transpose();
    owner[i] = i;
  }
  auto cost = [&](std::size_t a, std::size_t b) {
    return size[a] * size[b] / (size[a] + size[b]) * (mean[a] - mean[b]).squaredNorm();
  };
  // Nearest higher-indexed neighbour of every slot.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> nn_cost(N, inf);
  std::vector<std::size_t> nn(N, N);
  auto refresh = [&](std::size_t i) {
    nn_cost[i] = inf;
    nn[i] = N;
    for (std::size_t j = i + 1; j < N; ++j) {
      if (!alive[j]) { continue; }
      const double c = cost(i, j);
      if (c < nn_cost[i]) {
        nn_cost[i] = c;
        nn[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < N; ++i) { refresh(i); }

  for (std::size_t clusters = N; clusters > k; --clusters) {
    std::size_t a = N;
    double best = inf;
    for (std::size_t i = 0; i < N; ++i) {
      if (alive[i] && nn[i] < N && nn_cost[i] < best) {
        best = nn_cost[i];
        a = i;
      }
    }
    const std::size_t b = nn[a];
    mean[a] = (size[a] * mean[a] + size[b] * mean[b]) / (size[a] + size[b]);
    size[a] += size[b];
    alive[b] = false;
    for (std::size_t r = 0; r < N; ++r) {
      if (owner[r] == b) { owner[r] = a; }
    }
    // Only slots whose cached neighbour was touched, and a itself, need a rescan;
    // lower slots may also find the merged cluster closer than before.
    for (std::size_t i = 0; i < N; ++i) {
      if (!alive[i]) { continue; }
      if (i == a || nn[i] == a || nn[i] == b) {
        refresh(i);
      } else if (i < a) {
        const double c = cost(i, a);
        if (c < nn_cost[i] || (c == nn_cost[i] && a < nn[i])) {
          nn_cost[i] = c;
          nn[i] = a;
        }
      }
    }
  }

  ClusterModel m;
  m.algorithm = Algorithm::hierarchical_ward;
  m.k = k;
  std::vector<std::size_t> slot_label(N, N);
  std::size_t next = 0;
  m.assignments.resize(N);
  for (std::size_t r = 0; r < N; ++r) {
    auto & lbl = slot_label[owner[r]];
    if (lbl == N) { lbl = next++; }
    m.assignments[r] = lbl;
  }
  m.centroids = detail::centroids_of(X, m.assignments, k);
  detail::score_objective(m, X);
  return m;
}

inline ClusterModel hierarchical(const ingest::FeatureMatrix & fm, std::size_t k)
{
  ClusterModel m = hierarchical(fm.values, k);
  m.row_ids = fm.row_ids;
  return m;
}

/// Pairwise Euclidean distances, N × N.
inline Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd & X)
{
  const Eigen::Index N = X.rows();
  Eigen::MatrixXd D(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    D(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const double d = (X.row(i) - X.row(j)).norm();
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

namespace detail {

inline std::size_t validate_partition(std::size_t n, std::span<const std::size_t> assignments)
{
  if (assignments.size() != n) { fail_validation("assignment count does not match rows"); }
  const std::size_t k = cluster_count(assignments);
  if (k < 2) { fail_validation("validation index needs at least 2 clusters"); }
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : assignments) { ++sizes[a]; }
  if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) { fail_validation("empty cluster in assignment"); }
  return k;
}

}  // namespace detail

/// Silhouette coefficient from a precomputed distance matrix.
inline double silhouette(const Eigen::MatrixXd & distances, std::span<const std::size_t> assignments)
{
  const auto N = static_cast<std::size_t>(distances.rows());
  const std::size_t k = detail::validate_partition(N, assignments);
  std::vector<double> sizes(k, 0.0);
  for (auto a : assignments) { sizes[a] += 1.0; }
  std::vector<double> sum(k);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t own = assignments[i];
    if (sizes[own] <= 1.0) { continue; }  // singleton contributes 0
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < N; ++j) {
      sum[assignments[j]] += distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const double a = sum[own] / (sizes[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) { b = std::min(b, sum[c] / sizes[c]); }
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) { total += (b - a) / denom; }
  }
  return total / static_cast<double>(N);
}

inline double silhouette(const ingest::FeatureMatrix & fm, std::span<const std::size_t> assignments)
{
  return silhouette(distance_matrix(fm.values), assignments);
}

/// Davies-Bouldin index: mean over clusters of the worst (S_i + S_j) / M_ij,
/// with S the mean distance to the centroid and M the centroid separation.
inline double davies_bouldin(const Eigen::MatrixXd & X, std::span<const std::size_t> assignments)
{
  const std::size_t k = detail::validate_partition(static_cast<std::size_t>(X.rows()), assignments);
  const Eigen::MatrixXd C = detail::centroids_of(X, assignments, k);
  std::vector<double> scatter(k, 0.0), sizes(k, 0.0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto a = assignments[static_cast<std::size_t>(i)];
    scatter[a] += (X.row(i) - C.row(static_cast<Eigen::Index>(a))).norm();
    sizes[a] += 1.0;
  }
  for (std::size_t j = 0; j < k; ++j) { scatter[j] /= sizes[j]; }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) { continue; }
      const double sep = (C.row(static_cast<Eigen::Index>(i)) - C.row(static_cast<Eigen::Index>(j))).norm();
      if (!(sep > 0.0)) { fail_validation("davies_bouldin: coincident centroids"); }
      worst = std::max(worst, (scatter[i] + scatter[j]) / sep);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

inline double davies_bouldin(const ingest::FeatureMatrix & fm, std::span<const std::size_t> assignments)
{
  return davies_bouldin(fm.values, assignments);
}

struct SelectOptions
{
  std::size_t k_min = 2;
  std::size_t k_max = 8;
  std::vector<Algorithm> algorithms{Algorithm::kmeans, Algorithm::hierarchical_ward};
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
};

/// True when `a` ranks ahead of `b`: higher SC, then lower DBI, then smaller k.
inline bool ranks_before(const ScoreEntry & a, const ScoreEntry & b)
{
  if (a.sc != b.sc) { return a.sc > b.sc; }
  if (a.dbi != b.dbi) { return a.dbi < b.dbi; }
  return a.k < b.k;
}

/// Rows of the data behind `distances` that are not exact duplicates of an earlier row.
inline std::size_t count_distinct_rows(const Eigen::MatrixXd & distances)
{
  std::size_t distinct = 0;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    bool seen = false;
    for (Eigen::Index j = 0; j < i && !seen; ++j) { seen = distances(i, j) == 0.0; }
    distinct += seen ? 0 : 1;
  }
  return distinct;
}

/**
 * Fit every (algorithm, k) combination and keep the best by ranks_before.
 * Combinations with k above the row count are skipped.
 */
inline ClusterModel select_model(const Eigen::MatrixXd & X, const SelectOptions & opts)
{
  if (opts.algorithms.empty()) { fail_validation("select_model: no algorithms given"); }
  if (opts.k_min > opts.k_max || opts.k_min < 2) { fail_validation("select_model: invalid k range"); }
  const auto N = static_cast<std::size_t>(X.rows());
  if (opts.k_min > N) {
    fail_validation("select_model: " + std::to_string(N) + " rows is fewer than k_min=" + std::to_string(opts.k_min));
  }
  const Eigen::MatrixXd distances = distance_matrix(X);
  // k cannot exceed the number of distinct rows.
  const std::size_t distinct = count_distinct_rows(distances);
  if (opts.k_min > distinct) {
    fail_validation("select_model: only " + std::to_string(distinct) + " distinct rows, fewer than k_min=" +
                    std::to_string(opts.k_min));
  }
  std::vector<ScoreEntry> table;
  std::optional<ClusterModel> best;
  std::optional<ScoreEntry> best_entry;
  for (Algorithm alg : opts.algorithms) {
    for (std::size_t k = opts.k_min; k <= std::min(opts.k_max, distinct); ++k) {
      ClusterModel m;
      if (alg == Algorithm::kmeans) {
        KMeansOptions ko;
        ko.seed = derive_seed(opts.seed, k);
        ko.restarts = opts.restarts;
        m = kmeans(X, k, ko);
      } else {
        m = hierarchical(X, k);
      }
      m.sc = silhouette(distances, m.assignments);
      m.dbi = davies_bouldin(X, m.assignments);
      ScoreEntry e{alg, k, m.sc, m.dbi, m.objective};
      table.push_back(e);
      if (!best_entry || ranks_before(e, *best_entry)) {
        best_entry = e;
        best = std::move(m);
      }
    }
  }
  best->score_table = std::move(table);
  return std::move(*best);
}

inline ClusterModel select_model(const ingest::FeatureMatrix & fm, const SelectOptions & opts)
{
  ClusterModel m = select_model(fm.values, opts);
  m.row_ids = fm.row_ids;
  return m;
}

/// Adjusted Rand index between two labelings of the same rows.
inline double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b)
{
  if (a.size() != b.size()) { fail_validation("adjusted_rand_index: label count mismatch"); }
  const std::size_t n = a.size();
  if (n < 2) { return 1.0; }
  const std::size_t ka = detail::cluster_count(a), kb = detail::cluster_count(b);
  std::vector<double> table(ka * kb, 0.0), ra(ka, 0.0), rb(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[a[i] * kb + b[i]] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (double v : table) { index += c2(v); }
  for (double v : ra) { sa += c2(v); }
  for (double v : rb) { sb += c2(v); }
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) { return 1.0; }
  return (index - expected) / (max_index - expected);
}

}  // namespace segtariff::clustering

#endif  // SEGTARIFF_CLUSTERING_HPP_
