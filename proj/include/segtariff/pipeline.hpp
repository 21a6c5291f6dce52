#ifndef SEGTARIFF_PIPELINE_HPP_
#define SEGTARIFF_PIPELINE_HPP_

/**
 * @file
 * @brief Batch commands over files: segment, fit, price, benchmark, synth.
 * Each reads a JSON config, runs one stage and writes versioned artifacts.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/ingest.hpp"
#include "segtariff/pricing.hpp"
#include "segtariff/rng.hpp"
#include "segtariff/segmentation.hpp"
#include "segtariff/serialize.hpp"
#include "segtariff/synthgen.hpp"

namespace segtariff::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct PathsConfig
{
  std::string readings, tariffs, allocation;
  std::string out_dir = "out";
  std::string prior_segmentation;  ///< empty: first cycle
};

struct IngestConfig
{
  bool lax = false;
  double max_missing_fraction = 0.2;
  std::optional<std::size_t> slots_per_day;  ///< resample target
};

struct FitConfig
{
  double lambda = 0.98;
  std::optional<std::size_t> horizon;  ///< must match the slot count when given
};

struct BenchmarkConfig
{
  std::size_t runs = 10;
  Eigen::VectorXd cost_base_shape;  ///< empty: pricing.cost_cents
  double cost_noise_sd = 0.1;
};

struct PipelineConfig
{
  PathsConfig paths;
  IngestConfig ingest;
  segmentation::CycleConfig segmentation;
  FitConfig fit;
  pricing::PricingConfig pricing;
  Eigen::VectorXd cost_cents;  ///< per slot, for the price command
  BenchmarkConfig benchmark;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Command-line values that replace config entries.
struct Overrides
{
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<double> lambda;
  std::optional<std::size_t> g_final;
  std::optional<double> flat_price;
  std::optional<double> revenue_cap;
  std::optional<std::size_t> runs;
};

namespace detail {

inline void check_keys(const json & j, const std::string & section, const std::vector<std::string> & known)
{
  if (!j.is_object()) { fail_validation("config: '" + section + "' must be an object"); }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      fail_validation("config: unknown key '" + (section.empty() ? "" : section + ".") + it.key() + "'");
    }
  }
}

inline std::string resolve(const fs::path & base, const std::string & p)
{
  if (p.empty()) { return p; }
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline ingest::AttributeMode attribute_mode_from_string(const std::string & s)
{
  if (s == "hourly_window") { return ingest::AttributeMode::hourly_window; }
  if (s == "monthly_average") { return ingest::AttributeMode::monthly_average; }
  if (s == "tou_segment_average") { return ingest::AttributeMode::tou_segment_average; }
  fail_validation("config: unknown attribute_mode '" + s + "'");
}

template <typename T>
std::optional<T> optional_value(const json & j, const char * key)
{
  if (!j.contains(key) || j[key].is_null()) { return std::nullopt; }
  return j[key].get<T>();
}

}  // namespace detail

/// Builds a config from parsed JSON; relative paths resolve against `base_dir`.
inline PipelineConfig parse_config(json j, const fs::path & base_dir, const Overrides & ov = {})
{
  detail::check_keys(j, "", {"format_version", "seed", "paths", "ingest", "segmentation", "fit", "pricing", "benchmark"});
  io::check_version(j, "config");
  if (ov.seed) { j["seed"] = *ov.seed; }
  if (ov.out_dir) { j["paths"]["out_dir"] = *ov.out_dir; }
  if (ov.lambda) { j["fit"]["lambda"] = *ov.lambda; }
  if (ov.g_final) { j["segmentation"]["g_final"] = *ov.g_final; }
  if (ov.flat_price) { j["pricing"]["flat_price"] = *ov.flat_price; }
  if (ov.revenue_cap) { j["pricing"]["revenue_cap"] = *ov.revenue_cap; }
  if (ov.runs) { j["benchmark"]["runs"] = *ov.runs; }

  PipelineConfig c;
  try {
    c.seed = j.value("seed", std::uint64_t{0});

    const json paths = j.value("paths", json::object());
    detail::check_keys(paths, "paths", {"readings", "tariffs", "allocation", "out_dir", "prior_segmentation"});
    c.paths.readings = detail::resolve(base_dir, paths.value("readings", std::string()));
    c.paths.tariffs = detail::resolve(base_dir, paths.value("tariffs", std::string()));
    c.paths.allocation = detail::resolve(base_dir, paths.value("allocation", std::string()));
    c.paths.out_dir = ov.out_dir ? *ov.out_dir : detail::resolve(base_dir, paths.value("out_dir", std::string("out")));
    c.paths.prior_segmentation = detail::resolve(base_dir, paths.value("prior_segmentation", std::string()));

    const json ing = j.value("ingest", json::object());
    detail::check_keys(ing, "ingest", {"lax", "max_missing_fraction", "slots_per_day"});
    c.ingest.lax = ing.value("lax", false);
    c.ingest.max_missing_fraction = ing.value("max_missing_fraction", 0.2);
    c.ingest.slots_per_day = detail::optional_value<std::size_t>(ing, "slots_per_day");
    if (!(c.ingest.max_missing_fraction >= 0.0 && c.ingest.max_missing_fraction <= 1.0)) {
      fail_validation("config: ingest.max_missing_fraction must lie in [0, 1]");
    }

    const json seg = j.value("segmentation", json::object());
    detail::check_keys(seg, "segmentation", {"k_min", "k_max", "algorithms", "restarts", "g_final", "merge", "weight_by_size",
                                              "attribute_mode", "window_days", "segments", "period"});
    auto & s = c.segmentation;
    s.select.k_min = seg.value("k_min", std::size_t{2});
    s.select.k_max = seg.value("k_max", std::size_t{8});
    s.select.restarts = seg.value("restarts", std::size_t{10});
    if (seg.contains("algorithms")) {
      s.select.algorithms.clear();
      for (const auto & a : seg["algorithms"]) { s.select.algorithms.push_back(clustering::algorithm_from_string(a.get<std::string>())); }
    }
    if (s.select.k_min < 2 || s.select.k_max < s.select.k_min) { fail_validation("config: need 2 <= k_min <= k_max"); }
    if (s.select.algorithms.empty()) { fail_validation("config: segmentation.algorithms is empty"); }
    s.g_final = seg.value("g_final", std::size_t{4});
    if (s.g_final < 1) { fail_validation("config: segmentation.g_final must be >= 1"); }
    s.merge = segmentation::merge_strategy_from_string(seg.value("merge", std::string("centroid")));
    s.weight_by_size = seg.value("weight_by_size", false);
    s.attributes.mode = detail::attribute_mode_from_string(seg.value("attribute_mode", std::string("monthly_average")));
    s.attributes.window_days = seg.value("window_days", std::size_t{0});
    if (seg.contains("segments")) {
      for (const auto & r : seg["segments"]) {
        if (!r.is_array() || r.size() != 2) { fail_validation("config: segments are [begin, end) slot pairs"); }
        s.attributes.segments.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>()});
      }
    }
    s.period = seg.value("period", std::string());
    s.seed = c.seed;

    const json fit = j.value("fit", json::object());
    detail::check_keys(fit, "fit", {"lambda", "horizon"});
    c.fit.lambda = fit.value("lambda", 0.98);
    c.fit.horizon = detail::optional_value<std::size_t>(fit, "horizon");
    if (!(c.fit.lambda > 0.0 && c.fit.lambda <= 1.0)) { fail_validation("config: fit.lambda must lie in (0, 1]"); }
    s.lambda = c.fit.lambda;

    const json pr = j.value("pricing", json::object());
    detail::check_keys(pr, "pricing", {"p_max", "p_min", "flat_price", "revenue_cap", "starts", "cost_cents"});
    c.pricing.p_max = pr.value("p_max", 25.0);
    c.pricing.p_min = detail::optional_value<double>(pr, "p_min");
    c.pricing.flat_price = detail::optional_value<double>(pr, "flat_price");
    c.pricing.revenue_cap = detail::optional_value<double>(pr, "revenue_cap");
    c.pricing.starts = pr.value("starts", std::size_t{32});
    c.pricing.seed = c.seed;
    if (c.pricing.starts < 1) { fail_validation("config: pricing.starts must be >= 1"); }
    if (pr.contains("cost_cents")) { c.cost_cents = synthgen::to_vector(pr["cost_cents"], "pricing.cost_cents"); }

    const json bm = j.value("benchmark", json::object());
    detail::check_keys(bm, "benchmark", {"runs", "cost_base_shape", "cost_noise_sd"});
    c.benchmark.runs = bm.value("runs", std::size_t{10});
    if (bm.contains("cost_base_shape")) {
      c.benchmark.cost_base_shape = synthgen::to_vector(bm["cost_base_shape"], "benchmark.cost_base_shape");
    }
    c.benchmark.cost_noise_sd = bm.value("cost_noise_sd", 0.1);
    if (c.benchmark.runs < 1) { fail_validation("config: benchmark.runs must be >= 1"); }
    if (c.benchmark.cost_noise_sd < 0.0) { fail_validation("config: benchmark.cost_noise_sd must be >= 0"); }
  } catch (const json::exception & e) {
    fail_validation(std::string("config: ") + e.what());
  }

  // The output location does not change results, so it stays out of the hash.
  json hashed = j;
  if (hashed.contains("paths") && hashed["paths"].is_object()) { hashed["paths"].erase("out_dir"); }
  c.config_hash = io::fnv1a_hex(hashed.dump());
  return c;
}

inline PipelineConfig load_config(const std::string & path, const Overrides & ov = {})
{
  const json j = io::read_json(path);
  return parse_config(j, fs::path(path).parent_path(), ov);
}

struct Inputs
{
  ingest::ReadingSet readings;
  std::map<std::string, ingest::TariffSeries> tariffs;
  std::map<std::string, std::string> allocation;
  std::vector<std::string> warnings;
};

inline Inputs load_inputs(const PipelineConfig & c)
{
  if (c.paths.readings.empty() || c.paths.tariffs.empty() || c.paths.allocation.empty()) {
    fail_validation("config: paths.readings, paths.tariffs and paths.allocation are required");
  }
  const ingest::LoadOptions lo{c.ingest.lax, c.ingest.max_missing_fraction};
  Inputs in;
  ingest::IngestLog log;
  in.readings = ingest::load_readings(c.paths.readings, lo, &log);
  in.tariffs = ingest::load_tariffs(c.paths.tariffs, lo);
  in.allocation = ingest::load_allocation(c.paths.allocation, lo);
  for (const auto & id : log.dropped) { in.warnings.push_back("dropped customer '" + id + "' (too many missing readings)"); }
  in.warnings.insert(in.warnings.end(), log.warnings.begin(), log.warnings.end());
  if (c.ingest.slots_per_day) {
    in.readings = ingest::resample(in.readings, *c.ingest.slots_per_day);
    for (auto & [g, ts] : in.tariffs) { ts = ingest::resample(ts, *c.ingest.slots_per_day); }
  }
  if (c.fit.horizon && *c.fit.horizon != in.readings.slots_per_day) {
    fail_validation("config: fit.horizon " + std::to_string(*c.fit.horizon) + " differs from the " +
                    std::to_string(in.readings.slots_per_day) + " slots per day of the readings");
  }
  return in;
}

inline std::string output_path(const PipelineConfig & c, const std::string & name)
{
  std::error_code ec;
  fs::create_directories(c.paths.out_dir, ec);
  if (ec) { fail_io("cannot create output directory '" + c.paths.out_dir + "': " + ec.message()); }
  return (fs::path(c.paths.out_dir) / name).string();
}

struct CommandResult
{
  std::vector<std::string> written;
  std::vector<std::string> warnings;
};

/// Ingest and one adaptive segmentation cycle; writes segmentation.json.
inline CommandResult cmd_segment(const PipelineConfig & c)
{
  Inputs in = load_inputs(c);
  std::optional<segmentation::SegmentationResult> prior;
  if (!c.paths.prior_segmentation.empty()) {
    prior = io::segmentation_from_json(io::read_json(c.paths.prior_segmentation));
  }
  const auto res = segmentation::run_cycle(in.readings, in.tariffs, in.allocation, c.segmentation, prior ? &*prior : nullptr);
  CommandResult out;
  out.warnings = std::move(in.warnings);
  out.warnings.insert(out.warnings.end(), res.warnings.begin(), res.warnings.end());
  if (prior) {
    out.warnings.push_back("churn against the prior period: " + std::to_string(segmentation::churn(*prior, res)));
  }
  const std::string path = output_path(c, "segmentation.json");
  io::write_json(path, io::to_json(res, c.config_hash));
  out.written.push_back(path);
  return out;
}

/// Group demand models from a segmentation. Members of one group may sit on
/// different tariffs, so each (group, tariff) part is fitted against its own
/// price history and the parts are summed.
inline std::vector<demand::DemandModel> fit_groups(const Inputs & in, const segmentation::SegmentationResult & seg,
  double lambda, std::vector<std::string> * warnings = nullptr)
{
  std::vector<std::map<std::string, std::vector<std::size_t>>> parts(seg.final_groups);
  std::size_t unsegmented = 0;
  for (std::size_t n = 0; n < in.readings.num_customers(); ++n) {
    const std::string & id = in.readings.customers[n];
    auto g = seg.membership.find(id);
    if (g == seg.membership.end()) {
      ++unsegmented;
      continue;
    }
    auto t = in.allocation.find(id);
    if (t == in.allocation.end()) { fail_validation("fit: customer '" + id + "' has no tariff group"); }
    parts[g->second - 1][t->second].push_back(n);
  }
  if (unsegmented > 0 && warnings) {
    warnings->push_back(std::to_string(unsegmented) + " customers with readings are not in the segmentation and were skipped");
  }
  std::vector<demand::DemandModel> models;
  for (std::size_t g = 0; g < seg.final_groups; ++g) {
    const std::string name = "G" + std::to_string(g + 1);
    if (parts[g].empty()) { fail_validation("fit: group " + name + " has no customers with readings"); }
    std::vector<demand::DemandModel> fitted;
    for (const auto & [tg, rows] : parts[g]) {
      auto ts = in.tariffs.find(tg);
      if (ts == in.tariffs.end()) { fail_validation("fit: no tariff series for group '" + tg + "'"); }
      const demand::FitHistory hist{ts->second.prices_for(in.readings.days), in.readings.subset(rows).aggregate()};
      fitted.push_back(demand::fit_demand_model(hist, lambda, name + "/" + tg));
    }
    demand::DemandModel m = demand::aggregate_models(fitted, name);
    auto & d = m.diagnostics;
    for (const auto & f : fitted) {
      const auto & fd = f.diagnostics;
      d.weighted_rss += fd.weighted_rss;
      d.rank_deficient = d.rank_deficient || fd.rank_deficient;
      d.regularized = d.regularized || fd.regularized;
      d.effective_observations += fd.effective_observations;
      d.kkt_residual = std::max(d.kkt_residual, fd.kkt_residual);
      d.iterations += fd.iterations;
      for (const auto & a : fd.active_constraints) { d.active_constraints.push_back(f.group + ": " + a); }
      if (fd.rank_deficient && warnings) { warnings->push_back("fit " + f.group + ": rank-deficient design"); }
    }
    if (fitted.size() == 1) { d.r_squared = fitted.front().diagnostics.r_squared; }
    models.push_back(std::move(m));
  }
  return models;
}

/// Fits per-group models; writes models.json.
inline CommandResult cmd_fit(const PipelineConfig & c, const std::string & segmentation_path)
{
  Inputs in = load_inputs(c);
  const auto seg = io::segmentation_from_json(io::read_json(segmentation_path));
  CommandResult out;
  out.warnings = std::move(in.warnings);
  const auto models = fit_groups(in, seg, c.fit.lambda, &out.warnings);
  const std::string path = output_path(c, "models.json");
  io::write_json(path, io::models_json(models, c.fit.lambda, c.config_hash));
  out.written.push_back(path);
  return out;
}

enum class PriceVariant { multiple, multiple_and_uniform, uniform_only };

/// Optimal tariffs for the configured cost; writes pricing.json and prices.csv.
inline CommandResult cmd_price(const PipelineConfig & c, const std::string & models_path, PriceVariant variant)
{
  const auto models = io::models_from_json(io::read_json(models_path));
  if (c.cost_cents.size() == 0) { fail_validation("config: pricing.cost_cents is required to price"); }
  const pricing::PricingProblem pp = pricing::build_problem(models, c.cost_cents, c.pricing);
  const pricing::SolveOptions so{.starts = c.pricing.starts, .seed = c.seed};
  json j{{"format_version", io::format_version}, {"config_hash", c.config_hash}};
  CommandResult out;
  std::optional<pricing::PricingSolution> multi, uni;
  if (variant != PriceVariant::multiple) { uni = pricing::solve_uniform(pp, so); }
  if (variant != PriceVariant::uniform_only) { multi = pricing::solve_multiple(pp, so); }
  std::vector<const pricing::PricingSolution *> rows;
  for (const auto * s : {multi ? &*multi : nullptr, uni ? &*uni : nullptr}) {
    if (!s) { continue; }
    j[s->uniform ? "uniform" : "multiple"] = io::to_json(*s);
    for (const auto & w : s->warnings) { out.warnings.push_back((s->uniform ? "uniform: " : "multiple: ") + w); }
    rows.push_back(s);
  }
  const std::string path = output_path(c, "pricing.json");
  io::write_json(path, j);
  const std::string csv = output_path(c, "prices.csv");
  io::write_prices_csv(csv, rows);
  out.written = {path, csv};
  return out;
}

/// Uniform versus multiple pricing over freshly drawn costs; writes
/// benchmark.json. When both a flat price and a revenue cap are configured,
/// each constraint is also benchmarked alone.
inline CommandResult cmd_benchmark(const PipelineConfig & c, const std::string & models_path)
{
  const auto models = io::models_from_json(io::read_json(models_path));
  pricing::CostModel cm{c.benchmark.cost_base_shape.size() ? c.benchmark.cost_base_shape : c.cost_cents,
    c.benchmark.cost_noise_sd};
  if (cm.base_shape.size() == 0) { fail_validation("config: benchmark.cost_base_shape or pricing.cost_cents is required"); }
  std::vector<std::pair<std::string, pricing::PricingConfig>> variants{{"configured", c.pricing}};
  if (c.pricing.flat_price && c.pricing.revenue_cap) {
    auto fp = c.pricing;
    fp.revenue_cap.reset();
    auto cap = c.pricing;
    cap.flat_price.reset();
    variants.emplace_back("flat_price_only", fp);
    variants.emplace_back("revenue_cap_only", cap);
  }
  json reports = json::array();
  for (const auto & [name, pc] : variants) {
    reports.push_back(io::to_json(pricing::benchmark(models, pc, cm, c.benchmark.runs, c.seed, name)));
  }
  CommandResult out;
  const std::string path = output_path(c, "benchmark.json");
  io::write_json(path, {{"format_version", io::format_version}, {"config_hash", c.config_hash}, {"reports", reports}});
  out.written.push_back(path);
  return out;
}

struct SynthOptions
{
  std::string fixture;
  std::string out_dir;
  std::size_t n_per_type = 200;
  std::size_t days = 90;
  std::string first_day = "2024-01-01";
  std::uint64_t seed = 0;
};

/// Synthetic district from a fixture: readings, tariffs and allocation CSVs,
/// the ground truth, and a config that runs the pipeline on them.
inline CommandResult cmd_synth(const SynthOptions & o)
{
  const synthgen::Fixture f = synthgen::load_fixture(o.fixture);
  const auto first = ingest::parse_date(o.first_day);
  if (!first) { fail_validation("synth: bad start date '" + o.first_day + "'"); }
  if (o.days < 1) { fail_validation("synth: days must be >= 1"); }
  synthgen::SyntheticTruth t =
    synthgen::generate_population(f.archetypes, o.n_per_type, derive_seed(o.seed, "population"), f.elasticity);
  std::vector<std::string> groups = f.tariff_groups.empty() ? std::vector<std::string>{"T"} : f.tariff_groups;
  synthgen::assign_tariff_groups(t, groups, o.seed);
  const Eigen::VectorXd tariff_base = f.tariff_base.size() ? f.tariff_base
                                                           : Eigen::VectorXd::Constant(f.archetypes.front().base_profile.size(),
                                                               f.elasticity.reference_price);
  std::map<std::string, ingest::TariffSeries> tariffs;
  for (const auto & g : groups) {
    tariffs[g] = synthgen::generate_tariff(g, *first, o.days, tariff_base, f.tariff_variation, derive_seed(o.seed, "tariffs"));
  }
  const ingest::ReadingSet rs = synthgen::generate_readings(t, tariffs, o.days, derive_seed(o.seed, "readings"));

  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) { fail_io("cannot create output directory '" + o.out_dir + "': " + ec.message()); }
  const fs::path dir(o.out_dir);
  CommandResult out;
  auto emit = [&](const std::string & name) { return out.written.emplace_back((dir / name).string()); };
  ingest::write_readings_csv(emit("readings.csv"), rs);
  ingest::write_tariffs_csv(emit("tariffs.csv"), tariffs);
  ingest::write_allocation_csv(emit("allocation.csv"), synthgen::allocation(t));

  json truth_models = json::array();
  for (const auto & m : t.models) { truth_models.push_back(io::to_json(m)); }
  json labels = json::object();
  for (std::size_t i = 0; i < t.customers.size(); ++i) { labels[t.customers[i]] = t.specs[t.labels[i]].name; }
  io::write_json(emit("truth.json"), {{"format_version", io::format_version}, {"seed", o.seed}, {"n_per_type", o.n_per_type},
                                       {"labels", labels}, {"models", truth_models}});

  json cfg{{"format_version", io::format_version}, {"seed", o.seed},
    {"paths", {{"readings", "readings.csv"}, {"tariffs", "tariffs.csv"}, {"allocation", "allocation.csv"}, {"out_dir", "out"}}},
    {"segmentation", {{"g_final", f.archetypes.size()}}}, {"fit", {{"lambda", 1.0}}},
    {"pricing", {{"p_max", 25.0}, {"flat_price", f.elasticity.reference_price}}}};
  if (f.cost_base.size()) {
    cfg["pricing"]["cost_cents"] = io::vec_json(f.cost_base);
    cfg["benchmark"] = {{"runs", 10}, {"cost_noise_sd", f.cost_noise_sd}};
  }
  io::write_json(emit("config.json"), cfg);
  return out;
}

}  // namespace segtariff::pipeline

#endif  // SEGTARIFF_PIPELINE_HPP_
