// segtariff: command-line driver for the segmentation and pricing pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "segtariff.hpp"

namespace {

using namespace segtariff;

struct Common
{
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App * cmd, Common & c)
{
  cmd->add_option("--config", c.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory");
}

pipeline::PipelineConfig load(const Common & c, pipeline::Overrides ov)
{
  ov.seed = c.seed;
  ov.out_dir = c.out;
  return pipeline::load_config(c.config, ov);
}

int report(const pipeline::CommandResult & r)
{
  for (const auto & w : r.warnings) { std::cerr << "warning: " << w << '\n'; }
  for (const auto & p : r.written) { std::cout << p << '\n'; }
  return 0;
}

std::string in_out(const pipeline::PipelineConfig & c, const std::string & given, const char * name)
{
  return given.empty() ? (std::filesystem::path(c.paths.out_dir) / name).string() : given;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Customer segmentation and multiple dynamic tariff pricing"};
  app.require_subcommand(1);

  Common common;
  pipeline::Overrides ov;
  std::string segmentation_path, models_path;
  bool uniform = false, uniform_only = false;
  pipeline::SynthOptions synth;

  auto * segment = app.add_subcommand("segment", "ingest readings and run one segmentation cycle");
  add_common(segment, common);
  segment->add_option("--g-final", ov.g_final, "number of final groups");
  segment->add_option("--lambda", ov.lambda, "forgetting factor for model-based merging");

  auto * fit = app.add_subcommand("fit", "fit a demand model per final group");
  add_common(fit, common);
  fit->add_option("--segmentation", segmentation_path, "segmentation.json (default: <out>/segmentation.json)");
  fit->add_option("--lambda", ov.lambda, "forgetting factor in (0, 1]");

  auto * price = app.add_subcommand("price", "optimize per-group tariffs");
  add_common(price, common);
  price->add_option("--models", models_path, "models.json (default: <out>/models.json)");
  price->add_option("--flat-price", ov.flat_price, "required mean price per group, cents");
  price->add_option("--revenue-cap", ov.revenue_cap, "total revenue bound, cents");
  auto * u = price->add_flag("--uniform", uniform, "also solve the single-tariff problem");
  price->add_flag("--uniform-only", uniform_only, "solve only the single-tariff problem")->excludes(u);

  auto * bench = app.add_subcommand("benchmark", "compare multiple with uniform pricing over random costs");
  add_common(bench, common);
  bench->add_option("--models", models_path, "models.json (default: <out>/models.json)");
  bench->add_option("--runs", ov.runs, "number of cost draws")->check(CLI::PositiveNumber);
  bench->add_option("--flat-price", ov.flat_price, "required mean price per group, cents");
  bench->add_option("--revenue-cap", ov.revenue_cap, "total revenue bound, cents");

  auto * syn = app.add_subcommand("synth", "generate a synthetic district from a fixture");
  syn->add_option("--fixture", synth.fixture, "fixture JSON")->required();
  syn->add_option("--out", synth.out_dir, "output directory")->required();
  syn->add_option("--n-per-type", synth.n_per_type, "households per archetype");
  syn->add_option("--days", synth.days, "days of readings");
  syn->add_option("--start", synth.first_day, "first day, YYYY-MM-DD");
  syn->add_option("--seed", synth.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::validation);
  }

  try {
    if (*segment) { return report(pipeline::cmd_segment(load(common, ov))); }
    if (*fit) {
      const auto c = load(common, ov);
      return report(pipeline::cmd_fit(c, in_out(c, segmentation_path, "segmentation.json")));
    }
    if (*price) {
      const auto c = load(common, ov);
      const auto variant = uniform_only ? pipeline::PriceVariant::uniform_only
                           : uniform    ? pipeline::PriceVariant::multiple_and_uniform
                                        : pipeline::PriceVariant::multiple;
      return report(pipeline::cmd_price(c, in_out(c, models_path, "models.json"), variant));
    }
    if (*bench) {
      const auto c = load(common, ov);
      return report(pipeline::cmd_benchmark(c, in_out(c, models_path, "models.json")));
    }
    if (*syn) { return report(pipeline::cmd_synth(synth)); }
  } catch (const Error & e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::solver);
  }
  return 0;
}
