#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "segtariff/ingest.hpp"

using namespace segtariff;
using namespace segtariff::ingest;
namespace fs = std::filesystem;

namespace {

Day day(int y, unsigned m, unsigned d) { return std::chrono::sys_days{std::chrono::year{y} / m / d}; }

fs::path scratch(const std::string & name)
{
  const fs::path dir = fs::temp_directory_path() / "segtariff_test_ingest";
  fs::create_directories(dir);
  return dir / name;
}

std::string write_text(const std::string & name, const std::string & text)
{
  const fs::path p = scratch(name);
  std::ofstream(p) << text;
  return p.string();
}

/// customers × days × slots with values from `f`.
ReadingSet make_set(std::size_t N, std::size_t D, std::size_t H, Day first, auto f)
{
  ReadingSet rs;
  rs.slots_per_day = H;
  for (std::size_t n = 0; n < N; ++n) { rs.customers.push_back("c" + std::to_string(n)); }
  for (std::size_t d = 0; d < D; ++d) { rs.days.push_back(first + std::chrono::days(static_cast<int>(d))); }
  rs.values.resize(N * D * H);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) { rs.at(n, d, h) = f(n, d, h); }
    }
  }
  return rs;
}

ReadingSet random_set(std::size_t N, std::size_t D, std::size_t H, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  return make_set(N, D, H, day(2024, 1, 1), [&](auto, auto, auto) { return u(rng); });
}

std::string readings_csv(const ReadingSet & rs)
{
  std::ostringstream out;
  out << "customer_id,date,slot,kwh\n";
  out.precision(17);
  for (std::size_t n = 0; n < rs.num_customers(); ++n) {
    for (std::size_t d = 0; d < rs.num_days(); ++d) {
      for (std::size_t h = 0; h < rs.slots_per_day; ++h) {
        out << rs.customers[n] << ',' << format_date(rs.days[d]) << ',' << h << ',' << rs.at(n, d, h) << '\n';
      }
    }
  }
  return out.str();
}

double day_total(const ReadingSet & rs, std::size_t n, std::size_t d)
{
  double t = 0.0;
  for (std::size_t h = 0; h < rs.slots_per_day; ++h) { t += rs.at(n, d, h); }
  return t;
}

ErrorKind kind_of(auto && f)
{
  try {
    f();
  } catch (const Error & e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::solver;
}

}  // namespace

TEST(Dates, ParseAndFormat)
{
  EXPECT_EQ(format_date(*parse_date("2024-02-29")), "2024-02-29");
  EXPECT_FALSE(parse_date("2023-02-29"));
  EXPECT_FALSE(parse_date("2024-1-01"));
  EXPECT_FALSE(parse_date("yesterday"));
}

TEST(LoadReadings, CompleteFilePassesThrough)
{
  const ReadingSet src = make_set(2, 2, 48, day(2024, 3, 1), [](auto n, auto d, auto h) { return 0.01 * (n + 1) * (d + 1) + 0.001 * h; });
  const ReadingSet rs = load_readings(write_text("complete.csv", readings_csv(src)));
  EXPECT_EQ(rs.num_customers(), 2u);
  EXPECT_EQ(rs.num_days(), 2u);
  EXPECT_EQ(rs.slots_per_day, 48u);
  for (std::size_t i = 0; i < rs.values.size(); ++i) { EXPECT_EQ(rs.values[i], src.values[i]); }
}

TEST(LoadReadings, DropsCustomerAboveMissingThreshold)
{
  ReadingSet src = make_set(2, 10, 24, day(2024, 3, 1), [](auto, auto, auto h) { return 1.0 + h; });
  std::string text = readings_csv(src);
  // remove 30% of c0's rows (72 of 240)
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  std::size_t removed = 0;
  while (std::getline(in, line)) {
    if (line.rfind("c0,", 0) == 0 && removed < 72) {
      ++removed;
      continue;
    }
    out << line << '\n';
  }
  IngestLog log;
  const ReadingSet rs = load_readings(write_text("missing.csv", out.str()), {}, &log);
  ASSERT_EQ(rs.num_customers(), 1u);
  EXPECT_EQ(rs.customers[0], "c1");
  ASSERT_EQ(log.dropped.size(), 1u);
  EXPECT_EQ(log.dropped[0], "c0");
}

TEST(LoadReadings, ImputesSameSlotMedian)
{
  std::ostringstream t;
  t << "customer_id,date,slot,kwh\n";
  const double v[5] = {1.0, 5.0, 2.0, 9.0, 0.0};
  for (int d = 0; d < 5; ++d) {
    for (int h = 0; h < 2; ++h) {
      t << "a,2024-01-0" << d + 1 << ',' << h << ',';
      if (!(d == 4 && h == 0)) { t << (h == 0 ? v[d] : 7.0); }
      t << '\n';
    }
  }
  const ReadingSet rs = load_readings(write_text("impute.csv", t.str()));
  EXPECT_DOUBLE_EQ(rs.at(0, 4, 0), 3.5);  // median of 1, 5, 2, 9
  EXPECT_DOUBLE_EQ(rs.at(0, 4, 1), 7.0);
}

TEST(LoadReadings, ErrorsNameTheProblem)
{
  EXPECT_EQ(kind_of([] { load_readings(scratch("does-not-exist.csv").string()); }), ErrorKind::io);
  EXPECT_EQ(kind_of([] { load_readings(write_text("empty.csv", "")); }), ErrorKind::validation);
  EXPECT_EQ(kind_of([] { load_readings(write_text("header-only.csv", "customer_id,date,slot,kwh\n")); }),
    ErrorKind::validation);
  try {
    load_readings(write_text("bad-row.csv", "customer_id,date,slot,kwh\na,2024-01-01,0,1\na,2024-01-01,x,1\n"));
    FAIL();
  } catch (const Error & e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  try {
    load_readings(write_text("dup.csv", "customer_id,date,slot,kwh\na,2024-01-01,0,1\na,2024-01-01,0,2\n"));
    FAIL();
  } catch (const Error & e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { load_readings(write_text("neg.csv", "customer_id,date,slot,kwh\na,2024-01-01,0,-1\n")); }),
    ErrorKind::validation);
}

TEST(LoadReadings, UnknownColumnNeedsLax)
{
  const std::string p = write_text("extra.csv", "customer_id,date,slot,kwh,meter\na,2024-01-01,0,1.5,x\na,2024-01-01,1,2.5,y\n");
  EXPECT_EQ(kind_of([&] { load_readings(p); }), ErrorKind::validation);
  const ReadingSet rs = load_readings(p, {.lax = true});
  EXPECT_DOUBLE_EQ(rs.at(0, 0, 1), 2.5);
}

TEST(LoadTariffs, RoundTrip)
{
  TariffSeries ts;
  ts.group = "TA";
  ts.slots_per_day = 3;
  ts.days = {day(2024, 1, 1), day(2024, 1, 2)};
  ts.prices = (Eigen::MatrixXd(2, 3) << 8.0, 12.5, 18.0, 8.25, 12.0, 17.75).finished();
  const std::string p = scratch("tariffs.csv").string();
  write_tariffs_csv(p, {{"TA", ts}});
  const auto loaded = load_tariffs(p);
  ASSERT_EQ(loaded.count("TA"), 1u);
  EXPECT_EQ(loaded.at("TA").prices, ts.prices);
  EXPECT_EQ(loaded.at("TA").days, ts.days);
  EXPECT_EQ(kind_of([] { load_tariffs(write_text("zero-price.csv", "group,date,slot,price_cents\nTA,2024-01-01,0,0\n")); }),
    ErrorKind::validation);
}

TEST(LoadAllocation, ReadsMapping)
{
  const auto a = load_allocation(write_text("alloc.csv", "customer_id,group\nx,TA\ny,TB\n"));
  EXPECT_EQ(a.at("x"), "TA");
  EXPECT_EQ(a.at("y"), "TB");
}

TEST(Resample, HalfHoursToHours)
{
  const ReadingSet rs = make_set(1, 1, 48, day(2024, 1, 1), [](auto, auto, auto) { return 0.5; });
  const ReadingSet out = resample(rs, 24);
  ASSERT_EQ(out.slots_per_day, 24u);
  for (double v : out.values) { EXPECT_DOUBLE_EQ(v, 1.0); }
}

TEST(Resample, HoursToHalfHoursSplitsUniformly)
{
  const ReadingSet rs = make_set(1, 1, 24, day(2024, 1, 1), [](auto, auto, auto) { return 1.0; });
  const ReadingSet out = resample(rs, 48);
  ASSERT_EQ(out.slots_per_day, 48u);
  for (double v : out.values) { EXPECT_DOUBLE_EQ(v, 0.5); }
}

TEST(Resample, ConservesDailyEnergy)
{
  const ReadingSet rs = random_set(5, 7, 48, 3);
  for (std::size_t target : {1u, 2u, 4u, 8u, 12u, 16u, 24u, 48u, 96u, 144u}) {
    const ReadingSet out = resample(rs, target);
    for (std::size_t n = 0; n < 5; ++n) {
      for (std::size_t d = 0; d < 7; ++d) {
        EXPECT_NEAR(day_total(out, n, d), day_total(rs, n, d), 1e-9 * day_total(rs, n, d)) << target;
      }
    }
  }
  EXPECT_EQ(kind_of([&] { resample(rs, 36); }), ErrorKind::validation);
}

TEST(Resample, TariffsAverageWhenCoarsened)
{
  TariffSeries ts;
  ts.group = "T";
  ts.slots_per_day = 4;
  ts.days = {day(2024, 1, 1)};
  ts.prices = (Eigen::MatrixXd(1, 4) << 10.0, 12.0, 20.0, 30.0).finished();
  const TariffSeries out = resample(ts, 2);
  EXPECT_DOUBLE_EQ(out.prices(0, 0), 11.0);
  EXPECT_DOUBLE_EQ(out.prices(0, 1), 25.0);
}

TEST(Normalize, ConstantProfileBecomesOnes)
{
  const ReadingSet rs = make_set(2, 3, 24, day(2024, 1, 1), [](auto, auto, auto) { return 2.0; });
  const FeatureMatrix fm = normalize_profiles(rs);
  EXPECT_TRUE((fm.values.array() == 1.0).all());
}

TEST(Normalize, DividesByMean)
{
  const ReadingSet rs = make_set(1, 1, 2, day(2024, 1, 1), [](auto, auto, auto h) { return h == 0 ? 1.0 : 3.0; });
  const FeatureMatrix fm = normalize_profiles(rs);
  EXPECT_DOUBLE_EQ(fm.values(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(fm.values(0, 1), 1.5);
}

TEST(Normalize, RowMeansAreOneAndIdempotent)
{
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ReadingSet rs = random_set(6, 4, 24, seed);
    const ReadingSet once = normalize_readings(rs);
    const FeatureMatrix fm = to_features(once);
    for (Eigen::Index n = 0; n < fm.values.rows(); ++n) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < fm.values.cols(); ++c) { s += fm.values(n, c); }
      EXPECT_NEAR(s / static_cast<double>(fm.values.cols()), 1.0, 1e-12);
    }
    const ReadingSet twice = normalize_readings(once);
    for (std::size_t i = 0; i < once.values.size(); ++i) { EXPECT_NEAR(twice.values[i], once.values[i], 1e-12); }
  }
}

TEST(Normalize, ZeroConsumptionDroppedWithWarning)
{
  const ReadingSet rs = make_set(2, 2, 4, day(2024, 1, 1), [](auto n, auto, auto) { return n == 0 ? 0.0 : 1.0; });
  IngestLog log;
  const FeatureMatrix fm = normalize_profiles(rs, &log);
  ASSERT_EQ(fm.rows(), 1u);
  EXPECT_EQ(fm.row_ids[0], "c1");
  EXPECT_EQ(log.dropped, std::vector<std::string>{"c0"});
  EXPECT_FALSE(log.warnings.empty());
}

TEST(Attributes, MonthlyAverageOverTwoMonths)
{
  // Dec + Jan: 62 days, 24 slots -> 48 attributes
  const ReadingSet rs = normalize_readings(random_set(3, 62, 24, 1));
  ReadingSet shifted = rs;
  for (std::size_t d = 0; d < shifted.days.size(); ++d) { shifted.days[d] = day(2009, 12, 1) + std::chrono::days(static_cast<int>(d)); }
  const FeatureMatrix fm = build_attributes(shifted, {AttributeMode::monthly_average});
  EXPECT_EQ(fm.attribute_length(), 48u);
  double dec0 = 0.0;
  for (std::size_t d = 0; d < 31; ++d) { dec0 += shifted.at(1, d, 5) / 31.0; }
  EXPECT_NEAR(fm.values(1, 5), dec0, 1e-12);
  EXPECT_EQ(fm.attribute_labels[24], "2010-01/0");
}

TEST(Attributes, HourlyWindowAndSegments)
{
  const ReadingSet rs = normalize_readings(random_set(2, 30, 24, 2));
  EXPECT_EQ(build_attributes(rs, {AttributeMode::hourly_window, 7}).attribute_length(), 168u);
  AttributeParams tou{AttributeMode::tou_segment_average, 0, {{0, 8}, {8, 17}, {17, 24}}};
  const FeatureMatrix fm = build_attributes(rs, tou);
  EXPECT_EQ(fm.attribute_length(), 90u);
  double off = 0.0;
  for (std::size_t h = 0; h < 8; ++h) { off += rs.at(0, 0, h) / 8.0; }
  EXPECT_NEAR(fm.values(0, 0), off, 1e-12);
}

TEST(Attributes, ColumnCountClosedFormForAllWindows)
{
  const ReadingSet rs = normalize_readings(random_set(2, 40, 24, 5));  // 2024-01-01 .. 2024-02-09
  for (std::size_t w = 1; w <= 40; ++w) {
    EXPECT_EQ(build_attributes(rs, {AttributeMode::hourly_window, w}).attribute_length(), 24 * w);
    const std::size_t months = w <= 9 ? 1 : 2;
    EXPECT_EQ(build_attributes(rs, {AttributeMode::monthly_average, w}).attribute_length(), 24 * months);
    EXPECT_EQ(build_attributes(rs, {AttributeMode::tou_segment_average, w, {{0, 7}, {7, 24}}}).attribute_length(), 2 * w);
  }
  EXPECT_EQ(kind_of([&] { build_attributes(rs, {AttributeMode::hourly_window, 41}); }), ErrorKind::validation);
}
