#ifndef SEGTARIFF_INGEST_HPP_
#define SEGTARIFF_INGEST_HPP_

/**
 * @file
 * @brief Smart-meter and tariff loading, resampling and profile normalization.
 *
 * Units are fixed across the library: energy in kWh, prices in cents per kWh.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "segtariff/error.hpp"

namespace segtariff::ingest {

using Day = std::chrono::sys_days;

inline std::optional<Day> parse_date(std::string_view s)
{
  // YYYY-MM-DD
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') { return std::nullopt; }
  int y = 0;
  unsigned m = 0, d = 0;
  auto ok = [](std::string_view part, auto & out) {
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc{} && p == part.data() + part.size();
  };
  if (!ok(s.substr(0, 4), y) || !ok(s.substr(5, 2), m) || !ok(s.substr(8, 2), d)) {
    return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) { return std::nullopt; }
  return Day{ymd};
}

inline std::string format_date(Day day)
{
  const std::chrono::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

/// Per-customer, per-day, per-slot energy (kWh), stored dense and customer-major.
struct ReadingSet
{
  std::vector<std::string> customers;
  std::vector<Day> days;
  std::size_t slots_per_day = 0;
  std::vector<double> values;  // customers × days × slots

  std::size_t num_customers() const { return customers.size(); }
  std::size_t num_days() const { return days.size(); }
  std::size_t series_length() const { return days.size() * slots_per_day; }

  double & at(std::size_t n, std::size_t d, std::size_t h)
  {
    return values[(n * days.size() + d) * slots_per_day + h];
  }
  double at(std::size_t n, std::size_t d, std::size_t h) const
  {
    return values[(n * days.size() + d) * slots_per_day + h];
  }

  std::span<const double> series(std::size_t n) const
  {
    return {values.data() + n * series_length(), series_length()};
  }
  std::span<double> series(std::size_t n) { return {values.data() + n * series_length(), series_length()}; }

  /// Rows for the listed customer indices, same days and slots.
  ReadingSet subset(std::span<const std::size_t> rows) const
  {
    ReadingSet out;
    out.days = days;
    out.slots_per_day = slots_per_day;
    out.values.reserve(rows.size() * series_length());
    for (std::size_t n : rows) {
      out.customers.push_back(customers.at(n));
      auto s = series(n);
      out.values.insert(out.values.end(), s.begin(), s.end());
    }
    return out;
  }

  /// Sum over all customers: a days × slots matrix.
  Eigen::MatrixXd aggregate() const
  {
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(days.size()),
      static_cast<Eigen::Index>(slots_per_day));
    for (std::size_t n = 0; n < customers.size(); ++n) {
      for (std::size_t d = 0; d < days.size(); ++d) {
        for (std::size_t h = 0; h < slots_per_day; ++h) {
          total(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) += at(n, d, h);
        }
      }
    }
    return total;
  }

  void validate() const
  {
    if (values.size() != customers.size() * series_length()) {
      fail_validation("ReadingSet: value count does not match customers x days x slots");
    }
    for (std::size_t i = 1; i < days.size(); ++i) {
      if (!(days[i - 1] < days[i])) { fail_validation("ReadingSet: days must be strictly increasing"); }
    }
    for (double v : values) {
      if (!std::isfinite(v) || v < 0.0) { fail_validation("ReadingSet: values must be finite and >= 0"); }
    }
  }
};

/// Prices (cents/kWh) offered to one tariff group, days × slots.
struct TariffSeries
{
  std::string group;
  std::vector<Day> days;
  std::size_t slots_per_day = 0;
  Eigen::MatrixXd prices;

  void validate() const
  {
    if (prices.rows() != static_cast<Eigen::Index>(days.size()) ||
        prices.cols() != static_cast<Eigen::Index>(slots_per_day)) {
      fail_validation("TariffSeries '" + group + "': price matrix shape mismatch");
    }
    if (!prices.allFinite() || (prices.array() <= 0.0).any()) {
      fail_validation("TariffSeries '" + group + "': prices must be finite and > 0");
    }
  }

  /// Rows of `prices` for the requested days; throws if any is absent.
  Eigen::MatrixXd prices_for(std::span<const Day> wanted) const
  {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(wanted.size()), prices.cols());
    for (std::size_t i = 0; i < wanted.size(); ++i) {
      auto it = std::lower_bound(days.begin(), days.end(), wanted[i]);
      if (it == days.end() || *it != wanted[i]) {
        fail_validation("tariff for group '" + group + "' has no prices for " + format_date(wanted[i]));
      }
      out.row(static_cast<Eigen::Index>(i)) = prices.row(it - days.begin());
    }
    return out;
  }
};

/// Clustering input: one row per customer.
struct FeatureMatrix
{
  std::vector<std::string> row_ids;
  std::vector<std::string> attribute_labels;
  Eigen::MatrixXd values;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t attribute_length() const { return static_cast<std::size_t>(values.cols()); }
};

struct LoadOptions
{
  bool lax = false;                    ///< tolerate unknown columns
  double max_missing_fraction = 0.2;   ///< customers above this are dropped
};

/// Side information from loaders and normalizers.
struct IngestLog
{
  std::vector<std::string> dropped;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) { s.remove_prefix(1); }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) { s.remove_suffix(1); }
  return s;
}

inline void split_csv(std::string_view line, std::vector<std::string_view> & out)
{
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline std::string read_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { fail_io("cannot open '" + path + "'"); }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template<typename T>
bool parse_number(std::string_view s, T & out)
{
  if (s.empty()) { return false; }
  if constexpr (std::is_floating_point_v<T>) {
    if (s.front() == '+') { s.remove_prefix(1); }
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline bool is_missing_token(std::string_view s)
{
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

/// Header parsing shared by all loaders: returns the index of each required
/// column, rejecting unknown or duplicated columns unless `lax`.
inline std::vector<std::size_t> map_header(std::string_view header, std::span<const std::string_view> required,
  bool lax, const std::string & path)
{
  std::vector<std::string_view> cols;
  split_csv(header, cols);
  if (!cols.empty() && cols.front().starts_with("\xEF\xBB\xBF")) { cols.front().remove_prefix(3); }
  std::vector<std::size_t> index(required.size(), static_cast<std::size_t>(-1));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    auto it = std::find(required.begin(), required.end(), cols[c]);
    if (it == required.end()) {
      if (!lax) { fail_validation(path + ":1: unknown column '" + std::string(cols[c]) + "'"); }
      continue;
    }
    auto & slot = index[static_cast<std::size_t>(it - required.begin())];
    if (slot != static_cast<std::size_t>(-1)) {
      fail_validation(path + ":1: duplicate column '" + std::string(cols[c]) + "'");
    }
    slot = c;
  }
  for (std::size_t i = 0; i < required.size(); ++i) {
    if (index[i] == static_cast<std::size_t>(-1)) {
      fail_validation(path + ":1: missing column '" + std::string(required[i]) + "'");
    }
  }
  return index;
}

/// Iterates non-empty data lines with 1-based line numbers.
template<typename Fn>
void for_each_line(const std::string & text, Fn && fn)
{
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) { end = text.size(); }
    ++line_no;
    std::string_view line(text.data() + start, end - start);
    if (!trim(line).empty()) { fn(line_no, line); }
    if (end == text.size()) { break; }
    start = end + 1;
  }
}

inline double median(std::vector<double> & v)
{
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) { return hi; }
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/**
 * Load `customer_id,date,slot,kwh` readings.
 *
 * Customers missing more than `max_missing_fraction` of their day × slot cells
 * are dropped; remaining gaps are filled with that customer's median for the
 * same slot. Empty `kwh` cells (or NA) count as missing.
 */
inline ReadingSet load_readings(const std::string & path, const LoadOptions & opts = {}, IngestLog * log = nullptr)
{
  const std::string text = detail::read_file(path);
  static constexpr std::string_view required[] = {"customer_id", "date", "slot", "kwh"};

  struct Row
  {
    std::size_t customer, line;
    Day day;
    std::size_t slot;
    double kwh;  // NaN when missing
  };
  std::vector<Row> rows;
  std::vector<std::string> customers;
  std::unordered_map<std::string, std::size_t> customer_index;
  std::vector<std::size_t> col;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  std::size_t max_slot = 0;

  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (!header_seen) {
      col = detail::map_header(line, required, opts.lax, path);
      header_seen = true;
      return;
    }
    detail::split_csv(line, fields);
    auto where = [&] { return path + ":" + std::to_string(line_no) + ": "; };
    const std::size_t need = *std::max_element(col.begin(), col.end());
    if (fields.size() <= need) { fail_validation(where() + "malformed row (too few fields)"); }
    if (!opts.lax && fields.size() != 4) { fail_validation(where() + "malformed row (expected 4 fields)"); }
    const std::string_view cid = fields[col[0]];
    if (cid.empty()) { fail_validation(where() + "empty customer_id"); }
    auto day = parse_date(fields[col[1]]);
    if (!day) { fail_validation(where() + "invalid date '" + std::string(fields[col[1]]) + "'"); }
    std::size_t slot = 0;
    if (!detail::parse_number(fields[col[2]], slot)) {
      fail_validation(where() + "invalid slot '" + std::string(fields[col[2]]) + "'");
    }
    double kwh = std::numeric_limits<double>::quiet_NaN();
    if (!detail::is_missing_token(fields[col[3]])) {
      if (!detail::parse_number(fields[col[3]], kwh) || !std::isfinite(kwh) || kwh < 0.0) {
        fail_validation(where() + "invalid kwh '" + std::string(fields[col[3]]) + "'");
      }
    }
    auto [it, inserted] = customer_index.try_emplace(std::string(cid), customers.size());
    if (inserted) { customers.emplace_back(cid); }
    max_slot = std::max(max_slot, slot);
    rows.push_back({it->second, line_no, *day, slot, kwh});
  });
  if (!header_seen || rows.empty()) { fail_validation(path + ": empty file"); }

  std::vector<Day> days;
  days.reserve(rows.size());
  for (const auto & r : rows) { days.push_back(r.day); }
  std::sort(days.begin(), days.end());
  days.erase(std::unique(days.begin(), days.end()), days.end());
  const std::size_t D = days.size(), H = max_slot + 1, N = customers.size();

  // 0 = absent, 1 = value, 2 = explicit missing
  std::vector<unsigned char> state(N * D * H, 0);
  std::vector<double> values(N * D * H, 0.0);
  for (const auto & r : rows) {
    const auto d = static_cast<std::size_t>(std::lower_bound(days.begin(), days.end(), r.day) - days.begin());
    const std::size_t idx = (r.customer * D + d) * H + r.slot;
    if (state[idx] != 0) {
      fail_validation(path + ":" + std::to_string(r.line) + ": duplicate key (" + customers[r.customer] + ", " +
                      format_date(r.day) + ", " + std::to_string(r.slot) + ")");
    }
    state[idx] = std::isnan(r.kwh) ? 2 : 1;
    values[idx] = std::isnan(r.kwh) ? 0.0 : r.kwh;
  }

  ReadingSet out;
  out.days = days;
  out.slots_per_day = H;
  std::vector<double> buf;
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t base = n * D * H;
    std::size_t missing = 0;
    for (std::size_t i = 0; i < D * H; ++i) { missing += state[base + i] != 1; }
    const double frac = static_cast<double>(missing) / static_cast<double>(D * H);
    if (frac > opts.max_missing_fraction || missing == D * H) {
      if (log) {
        log->dropped.push_back(customers[n]);
        log->warnings.push_back("dropped customer '" + customers[n] + "': " +
                                std::to_string(static_cast<int>(std::lround(frac * 100))) + "% missing");
      }
      continue;
    }
    std::vector<double> series(values.begin() + static_cast<std::ptrdiff_t>(base),
      values.begin() + static_cast<std::ptrdiff_t>(base + D * H));
    if (missing > 0) {
      std::vector<double> all;
      for (std::size_t i = 0; i < D * H; ++i) {
        if (state[base + i] == 1) { all.push_back(values[base + i]); }
      }
      const double fallback = detail::median(all);
      for (std::size_t h = 0; h < H; ++h) {
        buf.clear();
        for (std::size_t d = 0; d < D; ++d) {
          if (state[base + d * H + h] == 1) { buf.push_back(values[base + d * H + h]); }
        }
        const double fill = buf.empty() ? fallback : detail::median(buf);
        for (std::size_t d = 0; d < D; ++d) {
          if (state[base + d * H + h] != 1) { series[d * H + h] = fill; }
        }
      }
    }
    out.customers.push_back(customers[n]);
    out.values.insert(out.values.end(), series.begin(), series.end());
  }
  if (out.customers.empty()) { fail_validation(path + ": no customer passed the missing-data filter"); }
  return out;
}

/// Load `group,date,slot,price_cents`. Every (group, date, slot) cell must be present.
inline std::map<std::string, TariffSeries> load_tariffs(const std::string & path, const LoadOptions & opts = {})
{
  const std::string text = detail::read_file(path);
  static constexpr std::string_view required[] = {"group", "date", "slot", "price_cents"};
  struct Row
  {
    std::string group;
    Day day;
    std::size_t slot, line;
    double price;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> col;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (!header_seen) {
      col = detail::map_header(line, required, opts.lax, path);
      header_seen = true;
      return;
    }
    detail::split_csv(line, fields);
    auto where = [&] { return path + ":" + std::to_string(line_no) + ": "; };
    if (fields.size() <= *std::max_element(col.begin(), col.end()) || (!opts.lax && fields.size() != 4)) {
      fail_validation(where() + "malformed row");
    }
    Row r;
    r.group = std::string(fields[col[0]]);
    r.line = line_no;
    if (r.group.empty()) { fail_validation(where() + "empty group"); }
    auto day = parse_date(fields[col[1]]);
    if (!day) { fail_validation(where() + "invalid date '" + std::string(fields[col[1]]) + "'"); }
    r.day = *day;
    if (!detail::parse_number(fields[col[2]], r.slot)) { fail_validation(where() + "invalid slot"); }
    if (!detail::parse_number(fields[col[3]], r.price) || !std::isfinite(r.price) || r.price <= 0.0) {
      fail_validation(where() + "invalid price_cents '" + std::string(fields[col[3]]) + "'");
    }
    rows.push_back(std::move(r));
  });
  if (!header_seen || rows.empty()) { fail_validation(path + ": empty file"); }

  std::map<std::string, std::vector<const Row *>> by_group;
  for (const auto & r : rows) { by_group[r.group].push_back(&r); }
  std::map<std::string, TariffSeries> out;
  for (auto & [name, grows] : by_group) {
    TariffSeries ts;
    ts.group = name;
    std::size_t max_slot = 0;
    for (const Row * r : grows) {
      ts.days.push_back(r->day);
      max_slot = std::max(max_slot, r->slot);
    }
    std::sort(ts.days.begin(), ts.days.end());
    ts.days.erase(std::unique(ts.days.begin(), ts.days.end()), ts.days.end());
    ts.slots_per_day = max_slot + 1;
    const auto D = static_cast<Eigen::Index>(ts.days.size()), H = static_cast<Eigen::Index>(ts.slots_per_day);
    ts.prices = Eigen::MatrixXd::Constant(D, H, std::numeric_limits<double>::quiet_NaN());
    for (const Row * r : grows) {
      const auto d = std::lower_bound(ts.days.begin(), ts.days.end(), r->day) - ts.days.begin();
      double & cell = ts.prices(d, static_cast<Eigen::Index>(r->slot));
      if (!std::isnan(cell)) {
        fail_validation(path + ":" + std::to_string(r->line) + ": duplicate key (" + name + ", " +
                        format_date(r->day) + ", " + std::to_string(r->slot) + ")");
      }
      cell = r->price;
    }
    if (!ts.prices.allFinite()) { fail_validation(path + ": tariff for group '" + name + "' has missing cells"); }
    out.emplace(name, std::move(ts));
  }
  return out;
}

/// Load a `customer_id,group` allocation of customers to tariff groups.
inline std::map<std::string, std::string> load_allocation(const std::string & path, const LoadOptions & opts = {})
{
  const std::string text = detail::read_file(path);
  static constexpr std::string_view required[] = {"customer_id", "group"};
  std::map<std::string, std::string> out;
  std::vector<std::size_t> col;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (!header_seen) {
      col = detail::map_header(line, required, opts.lax, path);
      header_seen = true;
      return;
    }
    detail::split_csv(line, fields);
    const auto where = path + ":" + std::to_string(line_no) + ": ";
    if (fields.size() <= std::max(col[0], col[1]) || (!opts.lax && fields.size() != 2)) {
      fail_validation(where + "malformed row");
    }
    if (fields[col[0]].empty() || fields[col[1]].empty()) { fail_validation(where + "empty field"); }
    if (!out.emplace(std::string(fields[col[0]]), std::string(fields[col[1]])).second) {
      fail_validation(where + "duplicate customer '" + std::string(fields[col[0]]) + "'");
    }
  });
  if (!header_seen || out.empty()) { fail_validation(path + ": empty file"); }
  return out;
}

inline void write_readings_csv(const std::string & path, const ReadingSet & rs)
{
  std::ofstream out(path);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out << "customer_id,date,slot,kwh\n";
  char buf[64];
  for (std::size_t n = 0; n < rs.num_customers(); ++n) {
    for (std::size_t d = 0; d < rs.num_days(); ++d) {
      const std::string date = format_date(rs.days[d]);
      for (std::size_t h = 0; h < rs.slots_per_day; ++h) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), rs.at(n, d, h));
        out << rs.customers[n] << ',' << date << ',' << h << ',' << std::string_view(buf, p - buf) << '\n';
      }
    }
  }
}

inline void write_tariffs_csv(const std::string & path, const std::map<std::string, TariffSeries> & tariffs)
{
  std::ofstream out(path);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out << "group,date,slot,price_cents\n";
  char buf[64];
  for (const auto & [name, ts] : tariffs) {
    for (std::size_t d = 0; d < ts.days.size(); ++d) {
      const std::string date = format_date(ts.days[d]);
      for (std::size_t h = 0; h < ts.slots_per_day; ++h) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf),
          ts.prices(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)));
        out << name << ',' << date << ',' << h << ',' << std::string_view(buf, p - buf) << '\n';
      }
    }
  }
}

inline void write_allocation_csv(const std::string & path, const std::map<std::string, std::string> & allocation)
{
  std::ofstream out(path);
  if (!out) { fail_io("cannot write '" + path + "'"); }
  out << "customer_id,group\n";
  for (const auto & [c, g] : allocation) { out << c << ',' << g << '\n'; }
}

/// Change slot resolution. Downsampling sums adjacent slots; upsampling splits
/// each slot uniformly, so per-day totals are conserved.
inline ReadingSet resample(const ReadingSet & rs, std::size_t target_slots)
{
  const std::size_t H = rs.slots_per_day;
  if (target_slots == 0 || H == 0) { fail_validation("resample: slot counts must be positive"); }
  if (target_slots == H) { return rs; }
  ReadingSet out;
  out.customers = rs.customers;
  out.days = rs.days;
  out.slots_per_day = target_slots;
  out.values.assign(rs.num_customers() * rs.num_days() * target_slots, 0.0);
  if (H % target_slots == 0) {
    const std::size_t f = H / target_slots;
    for (std::size_t n = 0; n < rs.num_customers(); ++n) {
      for (std::size_t d = 0; d < rs.num_days(); ++d) {
        for (std::size_t h = 0; h < H; ++h) { out.at(n, d, h / f) += rs.at(n, d, h); }
      }
    }
  } else if (target_slots % H == 0) {
    const std::size_t f = target_slots / H;
    const double share = 1.0 / static_cast<double>(f);
    for (std::size_t n = 0; n < rs.num_customers(); ++n) {
      for (std::size_t d = 0; d < rs.num_days(); ++d) {
        for (std::size_t h = 0; h < target_slots; ++h) { out.at(n, d, h) = rs.at(n, d, h / f) * share; }
      }
    }
  } else {
    fail_validation("resample: cannot convert " + std::to_string(H) + " slots to " + std::to_string(target_slots));
  }
  return out;
}

inline TariffSeries resample(const TariffSeries & ts, std::size_t target_slots)
{
  // Prices are intensive: averaging on downsample, repetition on upsample.
  const std::size_t H = ts.slots_per_day;
  if (target_slots == H) { return ts; }
  TariffSeries out = ts;
  out.slots_per_day = target_slots;
  out.prices = Eigen::MatrixXd::Zero(ts.prices.rows(), static_cast<Eigen::Index>(target_slots));
  if (target_slots != 0 && H % target_slots == 0) {
    const auto f = static_cast<Eigen::Index>(H / target_slots);
    for (Eigen::Index j = 0; j < out.prices.cols(); ++j) {
      out.prices.col(j) = ts.prices.middleCols(j * f, f).rowwise().mean();
    }
  } else if (H != 0 && target_slots % H == 0) {
    const auto f = static_cast<Eigen::Index>(target_slots / H);
    for (Eigen::Index j = 0; j < out.prices.cols(); ++j) { out.prices.col(j) = ts.prices.col(j / f); }
  } else {
    fail_validation("resample: cannot convert tariff of " + std::to_string(H) + " slots to " +
                    std::to_string(target_slots));
  }
  return out;
}

/// Divide each customer's series by its mean per-slot consumption over the
/// window. Customers with zero consumption are dropped with a warning.
inline ReadingSet normalize_readings(const ReadingSet & rs, IngestLog * log = nullptr)
{
  ReadingSet out;
  out.days = rs.days;
  out.slots_per_day = rs.slots_per_day;
  const std::size_t L = rs.series_length();
  for (std::size_t n = 0; n < rs.num_customers(); ++n) {
    auto s = rs.series(n);
    double total = 0.0;
    for (double v : s) { total += v; }
    const double mean = total / static_cast<double>(L);
    if (!(mean > 0.0) || !std::isfinite(mean)) {
      if (log) {
        log->dropped.push_back(rs.customers[n]);
        log->warnings.push_back("dropped customer '" + rs.customers[n] + "': zero consumption");
      }
      continue;
    }
    out.customers.push_back(rs.customers[n]);
    for (double v : s) { out.values.push_back(v / mean); }
  }
  return out;
}

/// Flatten a ReadingSet into one row per customer (day-major, slot-minor).
inline FeatureMatrix to_features(const ReadingSet & rs)
{
  FeatureMatrix fm;
  fm.row_ids = rs.customers;
  const std::size_t L = rs.series_length();
  fm.values.resize(static_cast<Eigen::Index>(rs.num_customers()), static_cast<Eigen::Index>(L));
  for (std::size_t n = 0; n < rs.num_customers(); ++n) {
    auto s = rs.series(n);
    for (std::size_t i = 0; i < L; ++i) {
      fm.values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i)) = s[i];
    }
  }
  for (Day d : rs.days) {
    const std::string date = format_date(d);
    for (std::size_t h = 0; h < rs.slots_per_day; ++h) { fm.attribute_labels.push_back(date + "/" + std::to_string(h)); }
  }
  return fm;
}

inline FeatureMatrix normalize_profiles(const ReadingSet & rs, IngestLog * log = nullptr)
{
  return to_features(normalize_readings(rs, log));
}

enum class AttributeMode { hourly_window, monthly_average, tou_segment_average };

struct SlotRange
{
  std::size_t begin = 0;  ///< first slot
  std::size_t end = 0;    ///< one past the last slot
};

struct AttributeParams
{
  AttributeMode mode = AttributeMode::monthly_average;
  /// Trailing days used; 0 means the whole set.
  std::size_t window_days = 0;
  /// Price segments for `tou_segment_average`.
  std::vector<SlotRange> segments;
};

inline FeatureMatrix build_attributes(const ReadingSet & rs, const AttributeParams & params)
{
  const std::size_t D = rs.num_days(), H = rs.slots_per_day;
  const std::size_t window = params.window_days == 0 ? D : params.window_days;
  if (window > D) {
    fail_validation("build_attributes: window of " + std::to_string(window) + " days exceeds the " +
                    std::to_string(D) + " available");
  }
  if (window == 0) { fail_validation("build_attributes: no days available"); }
  const std::size_t first = D - window;
  const auto N = static_cast<Eigen::Index>(rs.num_customers());

  FeatureMatrix fm;
  fm.row_ids = rs.customers;
  switch (params.mode) {
  case AttributeMode::hourly_window: {
    fm.values.resize(N, static_cast<Eigen::Index>(window * H));
    for (Eigen::Index n = 0; n < N; ++n) {
      for (std::size_t d = 0; d < window; ++d) {
        for (std::size_t h = 0; h < H; ++h) {
          fm.values(n, static_cast<Eigen::Index>(d * H + h)) = rs.at(static_cast<std::size_t>(n), first + d, h);
        }
      }
    }
    for (std::size_t d = first; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        fm.attribute_labels.push_back(format_date(rs.days[d]) + "/" + std::to_string(h));
      }
    }
    break;
  }
  case AttributeMode::monthly_average: {
    std::vector<std::chrono::year_month> months;
    std::vector<std::size_t> month_of(D, 0);
    for (std::size_t d = first; d < D; ++d) {
      const std::chrono::year_month_day ymd{rs.days[d]};
      const std::chrono::year_month ym{ymd.year(), ymd.month()};
      if (months.empty() || months.back() != ym) { months.push_back(ym); }
      month_of[d] = months.size() - 1;
    }
    const std::size_t M = months.size();
    std::vector<double> count(M, 0.0);
    for (std::size_t d = first; d < D; ++d) { count[month_of[d]] += 1.0; }
    fm.values = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(M * H));
    for (Eigen::Index n = 0; n < N; ++n) {
      for (std::size_t d = first; d < D; ++d) {
        for (std::size_t h = 0; h < H; ++h) {
          fm.values(n, static_cast<Eigen::Index>(month_of[d] * H + h)) +=
            rs.at(static_cast<std::size_t>(n), d, h) / count[month_of[d]];
        }
      }
    }
    for (const auto & ym : months) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%04d-%02u", static_cast<int>(ym.year()), static_cast<unsigned>(ym.month()));
      for (std::size_t h = 0; h < H; ++h) { fm.attribute_labels.push_back(std::string(buf) + "/" + std::to_string(h)); }
    }
    break;
  }
  case AttributeMode::tou_segment_average: {
    if (params.segments.empty()) { fail_validation("build_attributes: no price segments given"); }
    for (const auto & s : params.segments) {
      if (s.begin >= s.end || s.end > H) { fail_validation("build_attributes: invalid price segment"); }
    }
    const std::size_t S = params.segments.size();
    fm.values.resize(N, static_cast<Eigen::Index>(window * S));
    for (Eigen::Index n = 0; n < N; ++n) {
      for (std::size_t d = 0; d < window; ++d) {
        for (std::size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (std::size_t h = params.segments[s].begin; h < params.segments[s].end; ++h) {
            acc += rs.at(static_cast<std::size_t>(n), first + d, h);
          }
          fm.values(n, static_cast<Eigen::Index>(d * S + s)) =
            acc / static_cast<double>(params.segments[s].end - params.segments[s].begin);
        }
      }
    }
    for (std::size_t d = first; d < D; ++d) {
      for (std::size_t s = 0; s < S; ++s) {
        fm.attribute_labels.push_back(format_date(rs.days[d]) + "/seg" + std::to_string(s));
      }
    }
    break;
  }
  }
  return fm;
}

}  // namespace segtariff::ingest

#endif  // SEGTARIFF_INGEST_HPP_
