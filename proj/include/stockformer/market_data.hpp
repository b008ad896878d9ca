#pragma once

// Daily per-ticker market rows: CSV ingestion with validation, CSV output,
// business-day alignment and a deterministic synthetic generator.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stockformer/autodiff/rng.hpp"
#include "stockformer/csv.hpp"
#include "stockformer/error.hpp"

namespace stockformer {

struct Indicators {
  double rsi = 0.0;
  double ema = 0.0;
  double sma = 0.0;
  double macd = 0.0;
  bool operator==(const Indicators&) const = default;
};

/// One ticker-day. Prices are raw currency units until normalized.
struct MarketEntry {
  std::string date;  // YYYY-MM-DD
  std::string ticker;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  std::optional<std::string> headline;
  std::optional<double> sentiment;                     // [-1, 1]
  std::optional<std::array<double, 3>> sentiment_probs;  // p_pos, p_neu, p_neg when known
  std::optional<Indicators> indicators;                // absent during warm-up

  bool operator==(const MarketEntry&) const = default;
};

struct MarketSeries {
  std::string ticker;
  std::vector<MarketEntry> entries;
  // Set by apply_norm; price invariants no longer hold once z-scored.
  bool normalized = false;

  std::size_t size() const noexcept { return entries.size(); }
  bool operator==(const MarketSeries&) const = default;
};

enum class Regime { trend, mean_revert, mix };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::trend: return "trend";
    case Regime::mean_revert: return "mean_revert";
    default: return "mix";
  }
}

inline Regime parse_regime(std::string_view s) {
  if (s == "trend") return Regime::trend;
  if (s == "mean_revert") return Regime::mean_revert;
  if (s == "mix") return Regime::mix;
  throw InvalidArgument("unknown regime '" + std::string(s) + "' (expected trend, mean_revert or mix)");
}

// --- dates ---------------------------------------------------------------------

inline std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  }
  const int y = std::stoi(std::string(s.substr(0, 4)));
  const unsigned m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
  const unsigned d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

inline std::string format_date(std::chrono::year_month_day ymd) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline bool is_weekend(std::chrono::year_month_day ymd) {
  const std::chrono::weekday wd{std::chrono::sys_days{ymd}};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

// --- validation ----------------------------------------------------------------

/// Reason the entry breaks a MarketEntry invariant, or nullopt if it is valid.
inline std::optional<std::string> check_entry(const MarketEntry& e) {
  if (!parse_date(e.date)) return "invalid date '" + e.date + "'";
  if (e.ticker.empty()) return "empty ticker";
  for (double p : {e.open, e.high, e.low, e.close}) {
    if (!std::isfinite(p)) return "non-finite price";
    if (p <= 0.0) return "non-positive price";
  }
  if (e.low > e.high) return "low " + csv::format(e.low) + " > high " + csv::format(e.high);
  if (e.open < e.low || e.open > e.high) return "open outside [low, high]";
  if (e.close < e.low || e.close > e.high) return "close outside [low, high]";
  if (e.sentiment && !(*e.sentiment >= -1.0 && *e.sentiment <= 1.0)) return "sentiment outside [-1, 1]";
  return std::nullopt;
}

/// Throws InvariantViolation if the series is unsorted, has duplicate dates,
/// mixes tickers or carries an invalid entry.
inline void validate_series(const MarketSeries& s) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    const auto& e = s.entries[i];
    if (e.ticker != s.ticker) throw InvariantViolation(i, "ticker " + e.ticker + " in series " + s.ticker);
    if (!s.normalized) {
      if (auto why = check_entry(e)) throw InvariantViolation(i, *why);
    }
    if (i > 0 && !(s.entries[i - 1].date < e.date)) throw InvariantViolation(i, "dates not strictly increasing at " + e.date);
  }
}

// --- CSV -----------------------------------------------------------------------

inline const std::vector<std::string>& market_columns() {
  static const std::vector<std::string> cols{"date",      "ticker", "open", "high", "low", "close",
                                             "headline",  "sentiment", "rsi", "ema", "sma", "macd"};
  return cols;
}

/// Canonical column name -> header name used in the file. Unlisted columns
/// keep their canonical name.
using ColumnMap = std::map<std::string, std::string>;

struct LoadOptions {
  ColumnMap schema;
  // Throw on the first rejected row instead of collecting it.
  bool strict = false;
  double max_reject_fraction = 0.10;
};

struct RowIssue {
  enum class Kind { malformed, invariant };
  std::size_t line = 0;  // 1-based line number in the file (header is line 1)
  Kind kind = Kind::malformed;
  std::string reason;
};

struct LoadResult {
  std::vector<MarketSeries> series;  // in order of first appearance
  std::vector<RowIssue> rejected;
  std::size_t rows_parsed = 0;
  std::size_t rows_loaded = 0;
};

namespace detail {

inline void reject(LoadResult& result, const LoadOptions& opts, std::size_t line, RowIssue::Kind kind,
                   const std::string& reason) {
  if (opts.strict) {
    if (kind == RowIssue::Kind::malformed) throw MalformedRow(line, reason);
    throw InvariantViolation(line, reason);
  }
  result.rejected.push_back({line, kind, reason});
}

}  // namespace detail

inline LoadResult load_csv(std::istream& in, const LoadOptions& opts = {}) {
  std::string line;
  if (!std::getline(in, line) || csv::trim(line).empty()) throw EmptyFile("no header row");
  auto header = csv::split(line);
  if (!header) throw EmptyFile("unreadable header row");
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header->size(); ++i) position[std::string(csv::trim((*header)[i]))] = i;

  auto column_of = [&](const std::string& canonical) -> std::optional<std::size_t> {
    auto mapped = opts.schema.find(canonical);
    const std::string& name = mapped == opts.schema.end() ? canonical : mapped->second;
    auto it = position.find(name);
    if (it == position.end()) return std::nullopt;
    return it->second;
  };
  std::map<std::string, std::optional<std::size_t>> col;
  for (const auto& name : market_columns()) col[name] = column_of(name);
  for (const char* required : {"date", "ticker", "open", "high", "low", "close"}) {
    if (!col[required]) throw MissingColumn(required);
  }

  LoadResult result;
  struct Pending {
    MarketEntry entry;
    std::size_t line;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Pending>> by_ticker;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty() || csv::trim(line) == "\r") continue;
    ++result.rows_parsed;
    auto fields = csv::split(line);
    if (!fields) {
      detail::reject(result, opts, line_no, RowIssue::Kind::malformed, "unterminated quote");
      continue;
    }
    auto field = [&](const std::string& name) -> std::optional<std::string_view> {
      const auto& c = col[name];
      if (!c || *c >= fields->size()) return std::nullopt;
      return csv::trim((*fields)[*c]);
    };
    if (fields->size() < header->size()) {
      detail::reject(result, opts, line_no, RowIssue::Kind::malformed,
                     "expected " + std::to_string(header->size()) + " fields, got " + std::to_string(fields->size()));
      continue;
    }

    MarketEntry e;
    e.date = std::string(*field("date"));
    e.ticker = std::string(*field("ticker"));
    std::string bad;
    auto number = [&](const char* name, double& dst) {
      auto v = csv::parse_double(*field(name));
      if (!v) bad = std::string("non-numeric ") + name;
      else dst = *v;
    };
    number("open", e.open);
    number("high", e.high);
    number("low", e.low);
    number("close", e.close);
    auto optional_number = [&](const char* name) -> std::optional<double> {
      auto f = field(name);
      if (!f || f->empty()) return std::nullopt;
      auto v = csv::parse_double(*f);
      if (!v) bad = std::string("non-numeric ") + name;
      return v;
    };
    if (auto h = field("headline"); h && !h->empty()) e.headline = std::string(*h);
    e.sentiment = optional_number("sentiment");
    std::array<std::optional<double>, 4> ind{optional_number("rsi"), optional_number("ema"), optional_number("sma"),
                                             optional_number("macd")};
    if (!bad.empty()) {
      detail::reject(result, opts, line_no, RowIssue::Kind::malformed, bad);
      continue;
    }
    const auto present = std::count_if(ind.begin(), ind.end(), [](const auto& v) { return v.has_value(); });
    if (present == 4) {
      e.indicators = Indicators{*ind[0], *ind[1], *ind[2], *ind[3]};
    } else if (present != 0) {
      detail::reject(result, opts, line_no, RowIssue::Kind::malformed, "indicator columns partially filled");
      continue;
    }
    if (auto why = check_entry(e)) {
      detail::reject(result, opts, line_no, RowIssue::Kind::invariant, *why);
      continue;
    }
    if (!by_ticker.contains(e.ticker)) order.push_back(e.ticker);
    by_ticker[e.ticker].push_back({std::move(e), line_no});
  }

  if (result.rows_parsed == 0) throw EmptyFile("no data rows");

  for (const auto& ticker : order) {
    auto& rows = by_ticker[ticker];
    std::stable_sort(rows.begin(), rows.end(), [](const Pending& a, const Pending& b) { return a.entry.date < b.entry.date; });
    MarketSeries s{ticker, {}, false};
    for (auto& r : rows) {
      if (!s.entries.empty() && s.entries.back().date == r.entry.date) {
        detail::reject(result, opts, r.line, RowIssue::Kind::invariant, "duplicate date " + r.entry.date + " for " + ticker);
        continue;
      }
      s.entries.push_back(std::move(r.entry));
    }
    result.rows_loaded += s.entries.size();
    result.series.push_back(std::move(s));
  }

  std::sort(result.rejected.begin(), result.rejected.end(), [](const RowIssue& a, const RowIssue& b) { return a.line < b.line; });
  const double fraction = static_cast<double>(result.rejected.size()) / static_cast<double>(result.rows_parsed);
  if (fraction > opts.max_reject_fraction) {
    throw EmptyFile(std::to_string(result.rejected.size()) + " of " + std::to_string(result.rows_parsed) +
                    " rows rejected (first: line " + std::to_string(result.rejected.front().line) + ", " +
                    result.rejected.front().reason + ")");
  }
  return result;
}

inline LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load_csv(in, opts);
}

inline void write_csv(std::ostream& out, const std::vector<MarketSeries>& series) {
  const auto& cols = market_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? csv::format(*v) : std::string(); };
  for (const auto& s : series) {
    for (const auto& e : s.entries) {
      out << e.date << ',' << csv::quote(e.ticker) << ',' << csv::format(e.open) << ',' << csv::format(e.high) << ','
          << csv::format(e.low) << ',' << csv::format(e.close) << ',' << (e.headline ? csv::quote(*e.headline) : "")
          << ',' << opt(e.sentiment);
      if (e.indicators) {
        out << ',' << csv::format(e.indicators->rsi) << ',' << csv::format(e.indicators->ema) << ','
            << csv::format(e.indicators->sma) << ',' << csv::format(e.indicators->macd);
      } else {
        out << ",,,,";
      }
      out << '\n';
    }
  }
}

inline void write_csv(const std::filesystem::path& path, const std::vector<MarketSeries>& series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(out, series);
  if (!out) throw IoError("failed writing " + path.string());
}

// --- business days -------------------------------------------------------------

/// Drops entries dated on a weekend and orders the rest by date. Missing
/// trading days stay missing; downstream code windows over entry position.
inline MarketSeries align_business_days(MarketSeries series) {
  std::erase_if(series.entries, [](const MarketEntry& e) {
    auto ymd = parse_date(e.date);
    return ymd && is_weekend(*ymd);
  });
  std::stable_sort(series.entries.begin(), series.entries.end(),
                   [](const MarketEntry& a, const MarketEntry& b) { return a.date < b.date; });
  return series;
}

/// `count` consecutive business days starting at `first` (itself moved
/// forward to a business day if needed).
inline std::vector<std::string> business_days(std::chrono::year_month_day first, std::size_t count) {
  std::vector<std::string> out;
  out.reserve(count);
  std::chrono::sys_days day{first};
  while (out.size() < count) {
    std::chrono::year_month_day ymd{day};
    if (!is_weekend(ymd)) out.push_back(format_date(ymd));
    day += std::chrono::days{1};
  }
  return out;
}

}  // namespace stockformer
