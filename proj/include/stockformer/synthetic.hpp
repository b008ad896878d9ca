#pragma once

// Deterministic stand-in for a real ticker history.
//
// Each business day draws a news shock z. The headline printed that day is
// worded from z's sign, and the log move from today's open to tomorrow's open
// is drift + kNewsBeta * z + noise, so headline polarity leads the next open.
// Part of the move is already realized in today's close.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stockformer/autodiff/rng.hpp"
#include "stockformer/market_data.hpp"

namespace stockformer {

namespace synth {

inline constexpr double kNewsBeta = 0.012;      // log-move per unit news shock
inline constexpr double kMoveNoise = 0.007;     // idiosyncratic open-to-open noise
inline constexpr double kCloseShare = 0.5;      // share of the next move visible in today's close
inline constexpr double kCloseNoise = 0.004;
inline constexpr double kWick = 0.004;          // scale of high/low excursions
inline constexpr double kNeutralBand = 0.35;    // |z| below this prints a neutral headline
inline constexpr double kMisleadingRate = 0.10; // headline polarity opposite to z

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& words) {
  return words[static_cast<std::size_t>(rng.below(N))];
}

inline std::string headline(const std::string& ticker, int polarity, Rng& rng) {
  static constexpr std::array<const char*, 7> up_verbs{"surge", "rally", "soar", "climb", "jump", "rise", "gain"};
  static constexpr std::array<const char*, 6> good{"strong growth", "record profits", "an analyst upgrade",
                                                   "a product breakthrough", "bullish guidance", "revenue that tops estimates"};
  static constexpr std::array<const char*, 7> down_verbs{"plunge", "slump", "tumble", "sink", "drop", "fall", "decline"};
  static constexpr std::array<const char*, 6> bad{"weak demand", "quarterly losses", "an analyst downgrade",
                                                  "a regulatory probe", "a product recall", "a sales warning"};
  static constexpr std::array<const char*, 6> neutral{"holds annual shareholder meeting", "schedules earnings call",
                                                      "names new board member", "updates investor relations site",
                                                      "trades ahead of index rebalance", "files routine disclosure"};
  const double form = rng.uniform();
  if (polarity > 0) {
    if (form < 0.15) return ticker + " says demand is not " + std::string(rng.bernoulli(0.5) ? "weak" : "bad");
    if (form < 0.6) return ticker + " shares " + pick(rng, up_verbs) + " on " + pick(rng, good);
    return ticker + " reports " + pick(rng, good);
  }
  if (polarity < 0) {
    if (form < 0.15) return ticker + " says outlook is not " + std::string(rng.bernoulli(0.5) ? "strong" : "good");
    if (form < 0.6) return ticker + " shares " + pick(rng, down_verbs) + " on " + pick(rng, bad);
    return ticker + " faces " + pick(rng, bad);
  }
  return ticker + " " + pick(rng, neutral);
}

}  // namespace synth

inline constexpr std::chrono::year_month_day kSynthStart{std::chrono::year{2019}, std::chrono::month{3}, std::chrono::day{18}};

/// Geometric random walk over `days` business days from 2019-03-18.
/// Pure function of its arguments.
inline MarketSeries synth_series(const std::string& ticker, std::size_t days, std::uint64_t seed, Regime regime) {
  if (days == 0) throw InvalidArgument("synth_series: days must be >= 1");
  if (ticker.empty()) throw InvalidArgument("synth_series: empty ticker");
  Rng rng(mix_seed(seed, synth::fnv1a(ticker) ^ (static_cast<std::uint64_t>(regime) + 1)));

  const auto dates = business_days(kSynthStart, days);
  double log_open = std::log(rng.uniform(40.0, 400.0));
  const double anchor = log_open;

  // mix cycles through up-trend, mean reversion and down-trend segments
  Regime active = regime == Regime::mix ? Regime::trend : regime;
  double trend_sign = regime == Regime::mix ? (rng.bernoulli(0.5) ? 1.0 : -1.0) : 1.0;
  std::size_t segment_left = 60 + static_cast<std::size_t>(rng.below(120));

  MarketSeries series{ticker, {}, false};
  series.entries.reserve(days);
  for (std::size_t t = 0; t < days; ++t) {
    if (regime == Regime::mix && --segment_left == 0) {
      if (active == Regime::trend) {
        active = Regime::mean_revert;
      } else {
        active = Regime::trend;
        trend_sign = -trend_sign;
      }
      segment_left = 60 + static_cast<std::size_t>(rng.below(120));
    }
    const double drift = active == Regime::trend ? trend_sign * 0.0008 : -0.03 * (log_open - anchor);

    const double z = rng.normal();
    int polarity = std::abs(z) < synth::kNeutralBand ? 0 : (z > 0 ? 1 : -1);
    if (polarity != 0 && rng.bernoulli(synth::kMisleadingRate)) polarity = -polarity;
    const double move = drift + synth::kNewsBeta * z + synth::kMoveNoise * rng.normal();

    MarketEntry e;
    e.date = dates[t];
    e.ticker = ticker;
    e.open = std::exp(log_open);
    e.close = e.open * std::exp(synth::kCloseShare * move + synth::kCloseNoise * rng.normal());
    e.high = std::max(e.open, e.close) * std::exp(synth::kWick * std::abs(rng.normal()));
    e.low = std::min(e.open, e.close) * std::exp(-synth::kWick * std::abs(rng.normal()));
    e.headline = synth::headline(ticker, polarity, rng);
    series.entries.push_back(std::move(e));

    log_open += move;
  }
  return series;
}

}  // namespace stockformer
