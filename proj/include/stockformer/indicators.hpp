#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stockformer/csv.hpp"
#include "stockformer/error.hpp"
#include "stockformer/market_data.hpp"

namespace stockformer {

struct IndicatorConfig {
  std::size_t rsi_window = 50;
  std::size_t sma_window = 50;
  std::size_t ema_window = 50;
  std::size_t macd_fast = 12;
  std::size_t macd_slow = 26;
  // Keep indicator values that arrived with the input instead of recomputing.
  bool trust_input = false;

  void validate() const {
    if (rsi_window == 0 || sma_window == 0 || ema_window == 0 || macd_fast == 0 || macd_slow == 0) {
      throw InvalidArgument("indicator windows must be >= 1");
    }
    if (macd_fast >= macd_slow) throw InvalidArgument("macd_fast must be < macd_slow");
  }

  /// Number of leading entries left unannotated.
  std::size_t warmup() const { return std::max({rsi_window + 1, sma_window, macd_slow}); }
};

/// 100 - 100 / (1 + RS) over the trailing `window` close-to-close changes,
/// RS = mean of the positive changes / mean magnitude of the negative ones.
/// Flat changes join neither mean. No losses gives 100, no gains gives 0,
/// and an entirely flat window gives 50.
inline double rsi(std::span<const double> closes, std::size_t window) {
  if (window == 0) throw InvalidArgument("rsi: window must be >= 1");
  if (closes.size() < window + 1) {
    throw InsufficientHistory("rsi: need " + std::to_string(window + 1) + " closes, got " + std::to_string(closes.size()));
  }
  double gain = 0.0, loss = 0.0;
  std::size_t ups = 0, downs = 0;
  for (std::size_t i = closes.size() - window; i < closes.size(); ++i) {
    const double d = closes[i] - closes[i - 1];
    if (d > 0.0) {
      gain += d;
      ++ups;
    } else if (d < 0.0) {
      loss -= d;
      ++downs;
    }
  }
  if (downs == 0) return ups == 0 ? 50.0 : 100.0;
  if (ups == 0) return 0.0;
  const double rs = (gain / static_cast<double>(ups)) / (loss / static_cast<double>(downs));
  return 100.0 - 100.0 / (1.0 + rs);
}

/// out[0] = closes[0]; out[t] = j * closes[t] + (1 - j) * out[t-1], j = 2 / (period + 1).
/// Evaluated as out[t-1] + j * (closes[t] - out[t-1]) so a constant input
/// stays exactly constant (and MACD of it exactly 0).
inline std::vector<double> ema_series(std::span<const double> closes, std::size_t period) {
  if (period == 0) throw InvalidArgument("ema: period must be >= 1");
  if (closes.empty()) throw InvalidArgument("ema: empty input");
  if (period == 1) return {closes.begin(), closes.end()};  // j = 1
  const double j = 2.0 / (static_cast<double>(period) + 1.0);
  std::vector<double> out(closes.size());
  out[0] = closes[0];
  for (std::size_t t = 1; t < closes.size(); ++t) {
    // c*j + p*(1-j) can round away from p when c == p; keep the fixed point
    // exact so a flat series gives MACD of exactly 0
    out[t] = closes[t] == out[t - 1] ? out[t - 1] : closes[t] * j + out[t - 1] * (1.0 - j);
  }
  return out;
}

inline double sma(std::span<const double> closes, std::size_t window) {
  if (window == 0) throw InvalidArgument("sma: window must be >= 1");
  if (closes.size() < window) {
    throw InsufficientHistory("sma: need " + std::to_string(window) + " closes, got " + std::to_string(closes.size()));
  }
  double total = 0.0;
  for (std::size_t i = closes.size() - window; i < closes.size(); ++i) total += closes[i];
  return total / static_cast<double>(window);
}

inline double macd(std::span<const double> closes, std::size_t fast, std::size_t slow) {
  if (fast >= slow) throw InvalidArgument("macd: fast period must be < slow period");
  return ema_series(closes, fast).back() - ema_series(closes, slow).back();
}

/// Fills indicators for every entry at index >= cfg.warmup() and clears them
/// before it. With cfg.trust_input, entries that already carry indicators
/// are left untouched.
inline MarketSeries annotate(MarketSeries series, const IndicatorConfig& cfg) {
  cfg.validate();
  const std::size_t warm = cfg.warmup();
  if (series.entries.size() <= warm) {
    throw InsufficientHistory("annotate: " + series.ticker + " has " + std::to_string(series.entries.size()) +
                              " entries, warm-up needs more than " + std::to_string(warm));
  }
  std::vector<double> closes;
  closes.reserve(series.entries.size());
  for (const auto& e : series.entries) closes.push_back(e.close);
  // EMA is causal, so one pass gives the value over closes[0..t] at every t.
  const auto ema = ema_series(closes, cfg.ema_window);
  const auto fast = ema_series(closes, cfg.macd_fast);
  const auto slow = ema_series(closes, cfg.macd_slow);
  for (std::size_t t = 0; t < series.entries.size(); ++t) {
    auto& e = series.entries[t];
    if (cfg.trust_input && e.indicators) continue;
    if (t < warm) {
      e.indicators.reset();
      continue;
    }
    const std::span<const double> history(closes.data(), t + 1);
    e.indicators = Indicators{rsi(history, cfg.rsi_window), ema[t], sma(history, cfg.sma_window), fast[t] - slow[t]};
  }
  return series;
}

// --- normalization -------------------------------------------------------------

/// Fields that are z-scored. Sentiment is already bounded and stays raw.
inline const std::vector<std::string>& normalized_features() {
  static const std::vector<std::string> names{"open", "high", "low", "close", "rsi", "ema", "sma", "macd"};
  return names;
}

inline std::optional<double> feature_value(const MarketEntry& e, std::string_view feature) {
  if (feature == "open") return e.open;
  if (feature == "high") return e.high;
  if (feature == "low") return e.low;
  if (feature == "close") return e.close;
  if (feature == "sentiment") return e.sentiment;
  if (!e.indicators) {
    if (feature == "rsi" || feature == "ema" || feature == "sma" || feature == "macd") return std::nullopt;
  } else {
    if (feature == "rsi") return e.indicators->rsi;
    if (feature == "ema") return e.indicators->ema;
    if (feature == "sma") return e.indicators->sma;
    if (feature == "macd") return e.indicators->macd;
  }
  throw UnknownKey("unknown feature '" + std::string(feature) + "'");
}

struct FeatureStats {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const FeatureStats&) const = default;
};

/// Per (ticker, feature) mean and population standard deviation.
class NormStats {
 public:
  void set(const std::string& ticker, const std::string& feature, FeatureStats s) {
    if (!(s.std > 0.0)) throw DegenerateFeature("std must be > 0 for " + ticker + "/" + feature);
    stats_[{ticker, feature}] = s;
  }
  const FeatureStats& get(const std::string& ticker, const std::string& feature) const {
    auto it = stats_.find({ticker, feature});
    if (it == stats_.end()) throw UnknownKey("no normalization stats for " + ticker + "/" + feature);
    return it->second;
  }
  bool contains(const std::string& ticker, const std::string& feature) const { return stats_.contains({ticker, feature}); }
  std::size_t size() const noexcept { return stats_.size(); }
  const auto& entries() const noexcept { return stats_; }
  bool operator==(const NormStats&) const = default;

  /// `ticker,feature,mean,std`
  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ticker,feature,mean,std\n";
    for (const auto& [key, s] : stats_) {
      out << csv::quote(key.first) << ',' << key.second << ',' << csv::format(s.mean) << ',' << csv::format(s.std) << '\n';
    }
  }

  static NormStats load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw EmptyFile("empty normalization file " + path.string());
    NormStats out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (csv::trim(line).empty()) continue;
      auto f = csv::split(line);
      if (!f || f->size() != 4) throw MalformedRow(line_no, "expected ticker,feature,mean,std");
      auto m = csv::parse_double((*f)[2]);
      auto s = csv::parse_double((*f)[3]);
      if (!m || !s) throw MalformedRow(line_no, "non-numeric statistic");
      out.set((*f)[0], (*f)[1], {*m, *s});
    }
    return out;
  }

 private:
  std::map<std::pair<std::string, std::string>, FeatureStats> stats_;
};

/// Fits stats on the chronologically first `split` fraction of each
/// ticker's entries that carry the feature (split = 1 uses everything).
inline NormStats fit_norm(const std::vector<MarketSeries>& series, const std::vector<std::string>& features, double split) {
  if (!(split > 0.0 && split <= 1.0)) throw InvalidArgument("fit_norm: split must be in (0, 1]");
  NormStats stats;
  for (const auto& s : series) {
    for (const auto& feature : features) {
      std::vector<double> values;
      for (const auto& e : s.entries) {
        if (auto v = feature_value(e, feature)) values.push_back(*v);
      }
      const auto n = static_cast<std::size_t>(std::floor(split * static_cast<double>(values.size())));
      if (n < 2) {
        throw DegenerateFeature(s.ticker + "/" + feature + ": training slice has " + std::to_string(n) + " values");
      }
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += values[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (values[i] - mean) * (values[i] - mean);
      var /= static_cast<double>(n);
      if (!(var > 0.0)) throw DegenerateFeature(s.ticker + "/" + feature + " is constant over its training slice");
      stats.set(s.ticker, feature, {mean, std::sqrt(var)});
    }
  }
  return stats;
}

inline double apply_norm(double x, const FeatureStats& s) { return (x - s.mean) / s.std; }

inline double invert_norm(double z, const std::string& ticker, const std::string& feature, const NormStats& stats) {
  const auto& s = stats.get(ticker, feature);
  return z * s.std + s.mean;
}

/// z-scores every price and indicator of the series.
inline MarketSeries apply_norm(MarketSeries series, const NormStats& stats) {
  if (series.normalized) throw InvalidArgument("apply_norm: series " + series.ticker + " is already normalized");
  const auto& t = series.ticker;
  const FeatureStats so = stats.get(t, "open"), sh = stats.get(t, "high"), sl = stats.get(t, "low"), sc = stats.get(t, "close");
  const FeatureStats sr = stats.get(t, "rsi"), se = stats.get(t, "ema"), ss = stats.get(t, "sma"), sm = stats.get(t, "macd");
  for (auto& e : series.entries) {
    e.open = apply_norm(e.open, so);
    e.high = apply_norm(e.high, sh);
    e.low = apply_norm(e.low, sl);
    e.close = apply_norm(e.close, sc);
    if (e.indicators) {
      e.indicators->rsi = apply_norm(e.indicators->rsi, sr);
      e.indicators->ema = apply_norm(e.indicators->ema, se);
      e.indicators->sma = apply_norm(e.indicators->sma, ss);
      e.indicators->macd = apply_norm(e.indicators->macd, sm);
    }
  }
  series.normalized = true;
  return series;
}

}  // namespace stockformer
