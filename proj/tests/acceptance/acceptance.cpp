// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "segtariff.hpp"

using namespace segtariff;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const std::string kFixture = std::string(SEGTARIFF_FIXTURES) + "/district.json";

int failures = 0;

void report(int id, bool ok, const std::string & what, const std::string & detail)
{
  std::printf("%s %d %s (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) { ++failures; }
}

std::string fmt(const char * f, double a, double b = 0.0, double c = 0.0)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// every fitted model and every pricing solution goes through these
std::vector<demand::DemandModel> all_fits;
struct Emitted
{
  pricing::PricingSolution s;
  pricing::PricingProblem pp;
};
std::vector<Emitted> all_solutions;

pricing::PricingSolution keep(const pricing::PricingSolution & s, const pricing::PricingProblem & pp)
{
  all_solutions.push_back({s, pp});
  return s;
}

struct District
{
  synthgen::Fixture fixture;
  synthgen::SyntheticTruth truth;
  pipeline::Inputs inputs;
};

District make_district(std::size_t n_per_type, std::size_t days, std::uint64_t seed)
{
  District d;
  d.fixture = synthgen::load_fixture(kFixture);
  const auto & f = d.fixture;
  d.truth = synthgen::generate_population(f.archetypes, n_per_type, seed, f.elasticity);
  synthgen::assign_tariff_groups(d.truth, f.tariff_groups, seed);
  for (const auto & g : f.tariff_groups) {
    d.inputs.tariffs[g] =
      synthgen::generate_tariff(g, *ingest::parse_date("2024-01-01"), days, f.tariff_base, f.tariff_variation, seed);
  }
  d.inputs.readings = synthgen::generate_readings(d.truth, d.inputs.tariffs, days, seed + 1);
  d.inputs.allocation = synthgen::allocation(d.truth);
  return d;
}

std::vector<std::size_t> labels_of(const segmentation::SegmentationResult & r, const std::vector<std::string> & ids)
{
  std::vector<std::size_t> out;
  for (const auto & id : ids) { out.push_back(r.membership.at(id) - 1); }
  return out;
}

/// Archetype holding the majority of each final group.
std::vector<std::size_t> majority_type(const segmentation::SegmentationResult & r, const District & d)
{
  const std::size_t A = d.fixture.archetypes.size();
  MatrixXd counts = MatrixXd::Zero(static_cast<Eigen::Index>(r.final_groups), static_cast<Eigen::Index>(A));
  for (std::size_t i = 0; i < d.truth.customers.size(); ++i) {
    counts(static_cast<Eigen::Index>(r.membership.at(d.truth.customers[i]) - 1), static_cast<Eigen::Index>(d.truth.labels[i])) += 1;
  }
  std::vector<std::size_t> out;
  for (Eigen::Index g = 0; g < counts.rows(); ++g) {
    Eigen::Index a = 0;
    counts.row(g).maxCoeff(&a);
    out.push_back(static_cast<std::size_t>(a));
  }
  return out;
}

std::vector<demand::DemandModel> random_models(std::mt19937_64 & rng, std::size_t G, Eigen::Index H)
{
  std::uniform_real_distribution<double> shape(0.3, 2.0), scale(0.2, 4.0), size(50, 500);
  std::vector<demand::DemandModel> out;
  for (std::size_t g = 0; g < G; ++g) {
    synthgen::ArchetypeSpec s;
    s.name = "g" + std::to_string(g);
    s.base_profile.resize(H);
    for (Eigen::Index h = 0; h < H; ++h) { s.base_profile[h] = shape(rng); }
    s.self_scale = scale(rng);
    s.cross_scale = scale(rng);
    demand::DemandModel m = synthgen::household_model(s);
    const double n = std::round(size(rng));
    m.alpha *= n;
    m.beta *= n;
    out.push_back(m);
  }
  return out;
}

VectorXd random_cost(std::mt19937_64 & rng, Eigen::Index H)
{
  std::uniform_real_distribution<double> u(3.0, 9.0);
  VectorXd c(H);
  for (Eigen::Index h = 0; h < H; ++h) { c[h] = u(rng); }
  return c;
}

double hourly_variance(const VectorXd & p) { return (p.array() - p.mean()).square().mean(); }

// ---------------------------------------------------------------------------

void coefficient_recovery()
{
  const auto f = synthgen::load_fixture(kFixture);
  double worst_exact = 0.0, worst_rmse = 0.0, worst_time = 0.0;
  for (std::size_t a = 0; a < f.archetypes.size(); ++a) {
    for (double noise : {0.0, 0.02}) {
      auto spec = f.archetypes[a];
      spec.noise_sd = noise;
      // a 200-household group, like the segmentation checks use
      const auto t = synthgen::generate_population({spec}, 200, 7 + a, f.elasticity);
      const auto ts = synthgen::generate_tariff("T", *ingest::parse_date("2024-01-01"), 72, f.tariff_base, f.tariff_variation, 3 + a);
      const auto rs = synthgen::generate_readings(t, {{"T", ts}}, 72, 11 + a);
      const auto t0 = std::chrono::steady_clock::now();
      const auto fit = demand::fit_demand_model({ts.prices, rs.aggregate()}, 1.0, spec.name);
      worst_time = std::max(worst_time, seconds_since(t0));
      all_fits.push_back(fit);
      const auto & truth = t.models.front();
      if (noise == 0.0) {
        worst_exact = std::max({worst_exact, (fit.alpha - truth.alpha).cwiseAbs().maxCoeff(),
          (fit.beta - truth.beta).cwiseAbs().maxCoeff()});
      } else {
        const double err = (fit.alpha - truth.alpha).squaredNorm() + (fit.beta - truth.beta).squaredNorm();
        const double mag = truth.alpha.squaredNorm() + truth.beta.squaredNorm();
        worst_rmse = std::max(worst_rmse, std::sqrt(err / mag));
      }
    }
  }
  report(1, worst_exact <= 1e-6 && worst_rmse <= 0.05 && worst_time <= 60.0, "coefficient recovery",
    fmt("noiseless max err %.2e, 2%% noise relative RMSE %.4f, slowest fit %.2fs", worst_exact, worst_rmse, worst_time));
}

void market_consistency()
{
  std::size_t pairs = 0, bad = 0;
  for (std::size_t i = 0; i < all_fits.size(); ++i) {
    const auto r = demand::check_market_consistency(all_fits[i], i, 1000);
    pairs += r.pairs_checked;
    bad += r.pair_violations;
  }
  report(2, bad == 0 && !all_fits.empty(), "market consistency",
    fmt("%.0f models, %.0f price pairs, %.0f violations", static_cast<double>(all_fits.size()), static_cast<double>(pairs),
      static_cast<double>(bad)));
}

void oracle_equivalence()
{
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int capped = 0, rejected = 0;
  for (int rep = 0; rep < 50;) {
    auto models = random_models(rng, 1, 2);
    const VectorXd cost = random_cost(rng, 2);
    pricing::PricingConfig cfg;
    if (rep % 4 >= 2) { cfg.flat_price = 12.0; }
    if (rep % 2) {
      cfg.revenue_cap = (0.6 + 0.4 * U(rng)) * pricing::solve_uniform(pricing::build_problem(models, cost, cfg)).revenue;
    }
    const auto pp = pricing::build_problem(models, cost, cfg);
    const auto nlp = pricing::detail::to_nlp(pp, {0}, true);
    const auto g = optim::grid_oracle(nlp, 0.01);
    if (g.status != optim::Status::optimal) {
      // cap below the least revenue the box allows; draw again
      ++rejected;
      continue;
    }
    const auto s = optim::maximize_pricing(nlp, {.starts = 8, .seed = static_cast<std::uint64_t>(rep)});
    worst = std::max(worst, std::abs(s.objective - g.objective) / std::max(1.0, std::abs(g.objective)));
    keep(pricing::solve_multiple(pp, {.seed = static_cast<std::uint64_t>(rep)}), pp);
    capped += cfg.revenue_cap ? 1 : 0;
    ++rep;
  }
  const double secs = seconds_since(t0);
  report(3, worst <= 1e-3 && secs <= 300.0, "pricing oracle equivalence",
    fmt("50 instances (%.0f capped), worst relative gap %.2e, %.1fs", capped, worst, secs) +
      fmt(", %.0f infeasible draws skipped", rejected));
}

void dominance(const District & d, const std::vector<demand::DemandModel> & group_models)
{
  std::mt19937_64 rng(4);
  double worst = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index H = 3 + t % 6;
    const auto models = random_models(rng, 2 + t % 3, H);
    const VectorXd cost = random_cost(rng, H);
    pricing::PricingConfig cfg{.flat_price = 12.0};
    if (t % 2) { cfg.revenue_cap = 0.9 * pricing::solve_uniform(pricing::build_problem(models, cost, cfg)).revenue; }
    const auto pp = pricing::build_problem(models, cost, cfg);
    const auto u = keep(pricing::solve_uniform(pp, {.seed = static_cast<std::uint64_t>(t)}), pp);
    const auto m = keep(pricing::solve_multiple(pp, {.seed = static_cast<std::uint64_t>(t), .warm_start = u.prices}), pp);
    worst = std::min(worst, m.profit - u.profit);
  }
  const pricing::PricingConfig cfg{.p_max = 25.0, .flat_price = d.fixture.elasticity.reference_price, .starts = 8};
  const auto bench = pricing::benchmark(group_models, cfg, {d.fixture.cost_base, d.fixture.cost_noise_sd}, 10, 17);
  report(4, worst >= -1e-6 && bench.mean_improvement > 0.0, "dominance of multiple over uniform pricing",
    fmt("worst profit margin %.3e over 20 instances; fixture mean improvement %.3f%% over 10 runs (min %.3f%%)", worst,
      100.0 * bench.mean_improvement, 100.0 * bench.min_improvement));
}

void price_shapes(const District & d, const segmentation::SegmentationResult & seg,
  const std::vector<demand::DemandModel> & group_models)
{
  const auto pp = pricing::build_problem(group_models, d.fixture.cost_base, {.p_max = 25.0, .flat_price = 10.0});
  const auto s = keep(pricing::solve_multiple(pp), pp);
  const auto type = majority_type(seg, d);
  std::vector<double> var(d.fixture.archetypes.size(), -1.0);
  for (std::size_t g = 0; g < type.size(); ++g) {
    var[type[g]] = hourly_variance(s.prices.row(static_cast<Eigen::Index>(g)).transpose());
  }
  // fixture order is IS, SC, SCS
  report(5, var[2] > var[1] && var[1] > var[0] && var[0] >= 0.0, "price variance ordering SCS > SC > IS",
    fmt("variances SCS %.4f, SC %.4f, IS %.4f", var[2], var[1], var[0]));
}

void clustering_correctness()
{
  std::mt19937_64 rng(31);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_int_distribution<int> nk(2, 6), nn(8, 40), nd(1, 6);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = nn(rng), dim = nd(rng), k = std::min(nk(rng), n - 1);
    MatrixXd X(n, dim);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dim; ++j) { X(i, j) = N(rng) + 3.0 * (i % k); }
    }
    std::vector<std::size_t> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) { labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i < k ? i : rng() % k); }
    const double sc = clustering::silhouette(clustering::distance_matrix(X), labels);
    const double dbi = clustering::davies_bouldin(X, labels);
    worst = std::max({worst, std::abs(sc - oracle::silhouette(X, labels)), std::abs(dbi - oracle::davies_bouldin(X, labels))});
  }
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 g(1000 + trial);
    MatrixXd X(150, 2);
    std::vector<std::size_t> truth;
    const double cx[3] = {0.0, 10.0, 5.0}, cy[3] = {0.0, 0.0, 9.0};
    for (int i = 0; i < 150; ++i) {
      const int c = i / 50;
      X(i, 0) = cx[c] + N(g);
      X(i, 1) = cy[c] + N(g);
      truth.push_back(static_cast<std::size_t>(c));
    }
    clustering::SelectOptions so;
    so.seed = static_cast<std::uint64_t>(trial);
    const auto m = clustering::select_model(X, so);
    if (m.k == 3 && oracle::ari(m.assignments, truth) >= 0.95) { ++hits; }
  }
  report(6, worst <= 1e-12 && hits >= 95, "clustering scores and model selection",
    fmt("worst SC/DBI deviation %.2e over 100 datasets; k=3 with ARI>=0.95 in %.0f/100 trials", worst, hits));
}

void feasibility()
{
  double worst_bound = 0.0, worst_fp = 0.0, worst_cap = -std::numeric_limits<double>::infinity();
  for (const auto & e : all_solutions) {
    const auto & s = e.s;
    for (Eigen::Index g = 0; g < s.prices.rows(); ++g) {
      for (Eigen::Index h = 0; h < s.prices.cols(); ++h) {
        const double lo = s.uniform ? e.pp.p_min.col(h).maxCoeff() : e.pp.p_min(g, h);
        const double hi = s.uniform ? e.pp.p_max.col(h).minCoeff() : e.pp.p_max(g, h);
        worst_bound = std::max({worst_bound, lo - s.prices(g, h), s.prices(g, h) - hi});
      }
      if (e.pp.flat_price) { worst_fp = std::max(worst_fp, std::abs(s.prices.row(g).mean() - *e.pp.flat_price)); }
    }
    if (e.pp.revenue_cap) { worst_cap = std::max(worst_cap, s.revenue - *e.pp.revenue_cap); }
  }
  report(8, worst_bound <= 0.0 && worst_fp <= 1e-8 && worst_cap <= 1e-6, "constraint feasibility",
    fmt("%.0f solutions; worst bound excess %.2e, flat-price error %.2e", static_cast<double>(all_solutions.size()), worst_bound,
      worst_fp) + fmt(", cap excess %.2e", worst_cap));
}

void solver_units()
{
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 6);
  double worst = 0.0;
  int solved = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int n = dim(rng);
    std::uniform_int_distribution<int> rk(1, n), ne(0, std::max(0, n - 2)), ni(0, 3);
    const auto p = oracle::random_qp(rng, n, rk(rng), ne(rng), ni(rng));
    const double ref = oracle::qp_enumerate(p);
    const auto s = optim::solve_qp(p);
    if (s.status != optim::Status::optimal) {
      worst = std::numeric_limits<double>::infinity();
      continue;
    }
    ++solved;
    worst = std::max(worst, std::abs(s.objective - ref) / (1.0 + std::abs(ref)));
  }
  // Lloyd iterations never raise the objective.
  std::size_t runs = 0, increases = 0;
  std::normal_distribution<double> N(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 20 + rep % 30, k = 2 + rep % 6;
    MatrixXd X(n, 3);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) { X(i, j) = N(rng) + (i % k); }
    }
    clustering::KMeansOptions ko;
    ko.seed = static_cast<std::uint64_t>(rep);
    Rng r(ko.seed);
    for (std::size_t restart = 0; restart < 5; ++restart) {
      const auto m = clustering::detail::kmeans_single(X, static_cast<std::size_t>(k), ko, r);
      ++runs;
      for (std::size_t i = 1; i < m.inertia_trace.size(); ++i) {
        if (m.inertia_trace[i] > m.inertia_trace[i - 1] * (1.0 + 1e-12)) { ++increases; }
      }
    }
  }
  report(9, worst <= 1e-6 && solved == 200 && increases == 0, "QP oracle agreement and Lloyd monotonicity",
    fmt("200 QPs, worst relative objective gap %.2e; %.0f k-means runs, %.0f objective increases", worst,
      static_cast<double>(runs), static_cast<double>(increases)));
}

}  // namespace

int main()
{
  try {
    coefficient_recovery();

    // Shared district for the segmentation, dominance and price-shape checks.
    const District d = make_district(200, 90, 5);
    segmentation::CycleConfig cfg;
    cfg.g_final = d.fixture.archetypes.size();
    cfg.seed = 5;
    cfg.lambda = 1.0;
    const auto t0 = std::chrono::steady_clock::now();
    const auto by_centroid = segmentation::run_cycle(d.inputs.readings, d.inputs.tariffs, d.inputs.allocation, cfg);
    cfg.merge = segmentation::MergeStrategy::model;
    const auto by_model = segmentation::run_cycle(d.inputs.readings, d.inputs.tariffs, d.inputs.allocation, cfg);
    const double secs = seconds_since(t0);
    const double ari_c = oracle::ari(labels_of(by_centroid, d.truth.customers), d.truth.labels);
    const double ari_m = oracle::ari(labels_of(by_model, d.truth.customers), d.truth.labels);
    const auto group_models = pipeline::fit_groups(d.inputs, by_centroid, 1.0);
    for (const auto & m : group_models) { all_fits.push_back(m); }
    for (const auto & m : pipeline::fit_groups(d.inputs, by_model, 1.0)) { all_fits.push_back(m); }

    market_consistency();
    oracle_equivalence();
    dominance(d, group_models);
    price_shapes(d, by_centroid, group_models);
    clustering_correctness();
    report(7, ari_c >= 0.9 && ari_m >= 0.9, "segmentation recovery",
      fmt("ARI centroid merge %.4f, model merge %.4f, 600 households, %.1fs", ari_c, ari_m, secs));
    feasibility();
    solver_units();
  } catch (const std::exception & e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
