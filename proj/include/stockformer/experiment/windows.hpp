#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stockformer/error.hpp"
#include "stockformer/market_data.hpp"
#include "stockformer/models/sample.hpp"

namespace stockformer {

/// open, high, low, close, rsi, ema, sma, macd, then sentiment as one score
/// or as (p_pos, p_neu, p_neg).
inline void append_day_features(const MarketEntry& e, std::size_t sentiment_channels, std::vector<double>& out) {
  if (!e.indicators) throw InvalidArgument("day " + e.date + " of " + e.ticker + " has no indicators");
  if (!e.sentiment) throw InvalidArgument("day " + e.date + " of " + e.ticker + " has no sentiment attached");
  const auto& ind = *e.indicators;
  out.insert(out.end(), {e.open, e.high, e.low, e.close, ind.rsi, ind.ema, ind.sma, ind.macd});
  if (sentiment_channels == 1) {
    out.push_back(*e.sentiment);
  } else if (sentiment_channels == 3) {
    if (!e.sentiment_probs) throw InvalidArgument("day " + e.date + " of " + e.ticker + " has no sentiment probabilities");
    out.insert(out.end(), e.sentiment_probs->begin(), e.sentiment_probs->end());
  } else {
    throw InvalidArgument("sentiment_channels must be 1 or 3");
  }
}

/// Contiguous [begin, end) runs of entries that carry indicators.
inline std::vector<std::pair<std::size_t, std::size_t>> annotated_runs(const MarketSeries& s) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < s.entries.size();) {
    if (!s.entries[i].indicators) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.entries.size() && s.entries[j].indicators) ++j;
    runs.emplace_back(i, j);
    i = j;
  }
  return runs;
}

/// Inputs are days t-lag+1 .. t, the label is day t+1's open. A run of L
/// annotated days yields L - lag samples; a window never reaches into the
/// warm-up or across another gap in the annotations.
inline std::vector<WindowSample> make_windows(const MarketSeries& s, std::size_t lag, std::size_t sentiment_channels = 1) {
  if (lag < 1) throw InvalidArgument("make_windows: lag must be >= 1");
  const auto runs = annotated_runs(s);
  if (runs.empty()) throw InsufficientHistory("make_windows: " + s.ticker + " has no annotated days");
  std::vector<WindowSample> out;
  for (auto [begin, end] : runs) {
    for (std::size_t t = begin + lag - 1; t + 1 < end; ++t) {
      WindowSample w;
      w.ticker = s.ticker;
      w.features.reserve(lag * (8 + sentiment_channels));
      for (std::size_t d = t + 1 - lag; d <= t; ++d) {
        append_day_features(s.entries[d], sentiment_channels, w.features);
        w.prior_opens.push_back(s.entries[d].open);
      }
      w.label = s.entries[t + 1].open;
      w.label_date = s.entries[t + 1].date;
      out.push_back(std::move(w));
    }
  }
  return out;
}

struct Split {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
};

/// Per ticker, the first floor(split * count) samples by label date train
/// and the rest test. Tickers keep their order of first appearance.
inline Split chrono_split(std::vector<WindowSample> samples, double split) {
  if (!(split >= 0.0 && split <= 1.0)) throw InvalidArgument("chrono_split: split must be in [0, 1]");
  std::vector<std::string> order;
  std::map<std::string, std::vector<WindowSample>> by_ticker;
  for (auto& s : samples) {
    auto [it, inserted] = by_ticker.try_emplace(s.ticker);
    if (inserted) order.push_back(s.ticker);
    it->second.push_back(std::move(s));
  }
  Split out;
  for (const auto& ticker : order) {
    auto& group = by_ticker[ticker];
    std::stable_sort(group.begin(), group.end(),
                     [](const WindowSample& a, const WindowSample& b) { return a.label_date < b.label_date; });
    const auto n_train = static_cast<std::size_t>(split * static_cast<double>(group.size()));
    for (std::size_t i = 0; i < group.size(); ++i) (i < n_train ? out.train : out.test).push_back(std::move(group[i]));
  }
  return out;
}

}  // namespace stockformer
