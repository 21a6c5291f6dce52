#ifndef SEGTARIFF_SYNTHGEN_HPP_
#define SEGTARIFF_SYNTHGEN_HPP_

/**
 * @file
 * @brief Synthetic households with known linear demand models, meter readings
 * under given tariffs, wholesale cost series and tariff series.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/ingest.hpp"
#include "segtariff/rng.hpp"

namespace segtariff::synthgen {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One customer type. base_profile is per-household kWh per slot at the
/// reference price; the scales multiply the population-wide elasticities.
struct ArchetypeSpec
{
  std::string name;
  VectorXd base_profile;
  double self_scale = 1.0;
  double cross_scale = 1.0;
  double noise_sd = 0.0;
};

struct ElasticityParams
{
  double reference_price = 10.0;  ///< cents
  double self_elasticity = 0.1;
  double cross_elasticity = 0.05;
  double cross_bandwidth = 4.0;   ///< slots; decay of shifting with time distance
};

struct SyntheticTruth
{
  std::vector<ArchetypeSpec> specs;
  std::vector<demand::DemandModel> models;  ///< per archetype, for all n_per_type members
  std::vector<std::string> customers;
  std::vector<std::size_t> labels;          ///< archetype index per customer
  std::vector<std::string> tariff_group;    ///< per customer; empty = not assigned
  std::size_t n_per_type = 0;
  std::uint64_t seed = 0;
};

/// Per-household coefficients for a spec. Self terms are proportional to the
/// base profile; shifted demand favours low-consumption slots near the price
/// change, and is scaled down per column when it would exceed the self term.
inline demand::DemandModel household_model(const ArchetypeSpec & spec, const ElasticityParams & ep = {})
{
  const Eigen::Index H = spec.base_profile.size();
  if (H == 0) { fail_validation("archetype '" + spec.name + "': empty base profile"); }
  if ((spec.base_profile.array() <= 0.0).any() || !spec.base_profile.allFinite()) {
    fail_validation("archetype '" + spec.name + "': base profile must be positive");
  }
  if (spec.self_scale < 0.0 || spec.cross_scale < 0.0 || spec.noise_sd < 0.0) {
    fail_validation("archetype '" + spec.name + "': scales and noise must be >= 0");
  }
  const VectorXd & base = spec.base_profile;
  MatrixXd beta = MatrixXd::Zero(H, H);
  for (Eigen::Index l = 0; l < H; ++l) {
    beta(l, l) = -spec.self_scale * ep.self_elasticity * base[l] / ep.reference_price;
    if (H == 1) { continue; }
    VectorXd w = VectorXd::Zero(H);
    for (Eigen::Index h = 0; h < H; ++h) {
      if (h == l) { continue; }
      const Eigen::Index gap = std::min(std::abs(h - l), H - std::abs(h - l));
      w[h] = std::exp(-static_cast<double>(gap) / ep.cross_bandwidth) / base[h];
    }
    w /= w.sum();
    const double shifted = spec.cross_scale * ep.cross_elasticity * base[l] / ep.reference_price;
    const double limit = -beta(l, l);
    beta.col(l) += (shifted > limit ? limit : shifted) * w;
  }
  demand::DemandModel m;
  m.group = spec.name;
  m.beta = beta;
  m.alpha = base - beta * VectorXd::Constant(H, ep.reference_price);
  return m;
}

/// Ground truth and customer list: n_per_type households per spec, ids
/// "<name>-<index>", labels in spec order.
inline SyntheticTruth generate_population(const std::vector<ArchetypeSpec> & specs, std::size_t n_per_type,
  std::uint64_t seed, const ElasticityParams & ep = {})
{
  if (specs.empty()) { fail_validation("generate_population: no archetypes"); }
  if (n_per_type < 1) { fail_validation("generate_population: n_per_type must be >= 1"); }
  const Eigen::Index H = specs.front().base_profile.size();
  SyntheticTruth t;
  t.specs = specs;
  t.n_per_type = n_per_type;
  t.seed = seed;
  for (std::size_t a = 0; a < specs.size(); ++a) {
    if (specs[a].base_profile.size() != H) { fail_validation("generate_population: archetypes differ in slot count"); }
    demand::DemandModel m = household_model(specs[a], ep);
    m.alpha *= static_cast<double>(n_per_type);
    m.beta *= static_cast<double>(n_per_type);
    t.models.push_back(std::move(m));
    for (std::size_t i = 0; i < n_per_type; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "-%05zu", i);
      t.customers.push_back(specs[a].name + buf);
      t.labels.push_back(a);
    }
  }
  return t;
}

/// Random balanced assignment of customers to tariff groups (round robin over a
/// seeded permutation).
inline void assign_tariff_groups(SyntheticTruth & t, const std::vector<std::string> & groups, std::uint64_t seed)
{
  if (groups.empty()) { fail_validation("assign_tariff_groups: no groups"); }
  std::vector<std::size_t> order(t.customers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "tariff-assignment"));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  t.tariff_group.assign(t.customers.size(), "");
  for (std::size_t k = 0; k < order.size(); ++k) { t.tariff_group[order[k]] = groups[k % groups.size()]; }
}

inline std::map<std::string, std::string> allocation(const SyntheticTruth & t)
{
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < t.customers.size(); ++i) {
    out[t.customers[i]] = t.tariff_group.empty() ? std::string() : t.tariff_group[i];
  }
  return out;
}

/// Meter readings over the first `days` days of the tariffs. Each household
/// consumes its archetype model divided by n_per_type at its group's prices,
/// times mean-one lognormal noise, floored at 0. When only one tariff is given
/// it applies to every customer.
inline ingest::ReadingSet generate_readings(const SyntheticTruth & t,
  const std::map<std::string, ingest::TariffSeries> & tariffs, std::size_t days, std::uint64_t seed)
{
  if (tariffs.empty()) { fail_validation("generate_readings: no tariffs"); }
  const std::size_t H = static_cast<std::size_t>(t.models.front().horizon());
  const auto & first = tariffs.begin()->second;
  if (first.days.size() < days) { fail_validation("generate_readings: tariffs cover fewer than the requested days"); }
  ingest::ReadingSet rs;
  rs.customers = t.customers;
  rs.days.assign(first.days.begin(), first.days.begin() + static_cast<std::ptrdiff_t>(days));
  rs.slots_per_day = H;
  rs.values.assign(t.customers.size() * days * H, 0.0);
  const double n = static_cast<double>(t.n_per_type);

  std::map<std::string, MatrixXd> prices;
  for (const auto & [name, ts] : tariffs) {
    ts.validate();
    if (ts.slots_per_day != H) { fail_validation("generate_readings: tariff '" + name + "' slot count differs from the models"); }
    prices[name] = ts.prices_for(rs.days);
  }
  for (std::size_t i = 0; i < t.customers.size(); ++i) {
    std::string group = tariffs.size() == 1 ? tariffs.begin()->first : std::string();
    if (tariffs.size() > 1) {
      if (t.tariff_group.size() != t.customers.size() || t.tariff_group[i].empty()) {
        fail_validation("generate_readings: customer '" + t.customers[i] + "' has no tariff group");
      }
      group = t.tariff_group[i];
    }
    auto pit = prices.find(group);
    if (pit == prices.end()) { fail_validation("generate_readings: missing tariff for group '" + group + "'"); }
    const auto & model = t.models[t.labels[i]];
    const double sd = t.specs[t.labels[i]].noise_sd;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    for (std::size_t d = 0; d < days; ++d) {
      const VectorXd mean = (model.alpha + model.beta * pit->second.row(static_cast<Eigen::Index>(d)).transpose()) / n;
      for (std::size_t h = 0; h < H; ++h) {
        double v = mean[static_cast<Eigen::Index>(h)];
        if (sd > 0.0) { v *= std::exp(sd * standard_normal(rng) - 0.5 * sd * sd); }
        rs.at(i, d, h) = std::max(0.0, v);
      }
    }
  }
  return rs;
}

/// days × H wholesale costs: base shape times independent lognormal factors
/// exp(noise_sd * z) per day and slot.
inline MatrixXd generate_costs(std::size_t days, const VectorXd & base_shape, double noise_sd, std::uint64_t seed)
{
  if (base_shape.size() == 0 || (base_shape.array() <= 0.0).any()) {
    fail_validation("generate_costs: base shape must be positive");
  }
  if (noise_sd < 0.0) { fail_validation("generate_costs: noise_sd must be >= 0"); }
  MatrixXd out(static_cast<Eigen::Index>(days), base_shape.size());
  Rng rng(derive_seed(seed, "costs"));
  for (Eigen::Index d = 0; d < out.rows(); ++d) {
    for (Eigen::Index h = 0; h < out.cols(); ++h) {
      out(d, h) = base_shape[h] * (noise_sd > 0.0 ? std::exp(noise_sd * standard_normal(rng)) : 1.0);
    }
  }
  return out;
}

/// Daily tariff: base shape times independent uniform factors in
/// [1 - variation, 1 + variation], so every slot price moves day to day.
inline ingest::TariffSeries generate_tariff(const std::string & group, ingest::Day first_day, std::size_t days,
  const VectorXd & base_shape, double variation, std::uint64_t seed)
{
  if (base_shape.size() == 0 || (base_shape.array() <= 0.0).any()) {
    fail_validation("generate_tariff: base shape must be positive");
  }
  if (!(variation >= 0.0 && variation < 1.0)) { fail_validation("generate_tariff: variation must lie in [0, 1)"); }
  ingest::TariffSeries ts;
  ts.group = group;
  ts.slots_per_day = static_cast<std::size_t>(base_shape.size());
  ts.prices.resize(static_cast<Eigen::Index>(days), base_shape.size());
  Rng rng(derive_seed(seed, group));
  for (std::size_t d = 0; d < days; ++d) {
    ts.days.push_back(first_day + std::chrono::days(static_cast<int>(d)));
    for (Eigen::Index h = 0; h < base_shape.size(); ++h) {
      ts.prices(static_cast<Eigen::Index>(d), h) = base_shape[h] * (1.0 + variation * (2.0 * uniform01(rng) - 1.0));
    }
  }
  return ts;
}

/// Contents of a fixture file describing a synthetic district.
struct Fixture
{
  std::vector<ArchetypeSpec> archetypes;
  ElasticityParams elasticity;
  VectorXd cost_base;
  double cost_noise_sd = 0.0;
  VectorXd tariff_base;
  double tariff_variation = 0.2;
  std::vector<std::string> tariff_groups;
};

inline VectorXd to_vector(const nlohmann::json & j, const std::string & what)
{
  if (!j.is_array() || j.empty()) { fail_validation(what + " must be a nonempty array"); }
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) { fail_validation(what + " must hold numbers"); }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Fixture parse_fixture(const nlohmann::json & j)
{
  static const std::vector<std::string> known{"format_version", "description", "reference_price_cents",
    "self_elasticity", "cross_elasticity", "cross_bandwidth_slots", "archetypes", "cost_base_shape", "cost_noise_sd",
    "tariff_base_shape", "tariff_variation", "tariff_groups"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      fail_validation("fixture: unknown key '" + it.key() + "'");
    }
  }
  Fixture f;
  f.elasticity.reference_price = j.value("reference_price_cents", 10.0);
  f.elasticity.self_elasticity = j.value("self_elasticity", 0.1);
  f.elasticity.cross_elasticity = j.value("cross_elasticity", 0.05);
  f.elasticity.cross_bandwidth = j.value("cross_bandwidth_slots", 4.0);
  if (!j.contains("archetypes") || !j["archetypes"].is_array()) { fail_validation("fixture: 'archetypes' array required"); }
  for (const auto & a : j["archetypes"]) {
    ArchetypeSpec s;
    s.name = a.at("name").get<std::string>();
    s.base_profile = to_vector(a.at("base_profile"), "base_profile of " + s.name);
    s.self_scale = a.value("self_scale", 1.0);
    s.cross_scale = a.value("cross_scale", 1.0);
    s.noise_sd = a.value("noise_sd", 0.0);
    f.archetypes.push_back(std::move(s));
  }
  if (j.contains("cost_base_shape")) { f.cost_base = to_vector(j["cost_base_shape"], "cost_base_shape"); }
  f.cost_noise_sd = j.value("cost_noise_sd", 0.0);
  if (j.contains("tariff_base_shape")) { f.tariff_base = to_vector(j["tariff_base_shape"], "tariff_base_shape"); }
  f.tariff_variation = j.value("tariff_variation", 0.2);
  if (j.contains("tariff_groups")) { f.tariff_groups = j["tariff_groups"].get<std::vector<std::string>>(); }
  return f;
}

inline Fixture load_fixture(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { fail_io("cannot open fixture '" + path + "'"); }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    fail_validation("fixture '" + path + "': " + e.what());
  }
  try {
    return parse_fixture(j);
  } catch (const nlohmann::json::exception & e) {
    fail_validation("fixture '" + path + "': " + e.what());
  }
}

}  // namespace segtariff::synthgen

#endif  // SEGTARIFF_SYNTHGEN_HPP_
