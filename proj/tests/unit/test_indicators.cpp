#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "stockformer/indicators.hpp"
#include "stockformer/synthetic.hpp"
#include "support/oracles.hpp"

using namespace stockformer;

namespace {

std::vector<double> random_walk(Rng& rng, std::size_t n) {
  std::vector<double> v{100.0};
  while (v.size() < n) v.push_back(v.back() * std::exp(0.02 * rng.normal()));
  return v;
}

}  // namespace

TEST(Rsi, StrictlyIncreasingIsHundred) {
  std::vector<double> c(20);
  std::iota(c.begin(), c.end(), 1.0);
  EXPECT_EQ(rsi(c, 14), 100.0);
}

TEST(Rsi, StrictlyDecreasingIsZero) {
  std::vector<double> c{5, 4, 3, 2, 1};
  EXPECT_EQ(rsi(c, 4), 0.0);
}

TEST(Rsi, AlternatingIsFifty) {
  std::vector<double> c{10, 11, 10, 11, 10, 11, 10};
  EXPECT_DOUBLE_EQ(rsi(c, 6), 50.0);
}

TEST(Rsi, InsufficientHistory) {
  std::vector<double> c{1, 2, 3};
  EXPECT_THROW(rsi(c, 3), InsufficientHistory);
}

TEST(Rsi, MatchesOracleOnRandomWalk) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_walk(rng, 40);
    const double v = rsi(c, 14);
    EXPECT_NEAR(v, testkit::oracle_rsi(c, 14), 1e-10 * std::max(1.0, v));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(Ema, PeriodOneIsIdentity) {
  std::vector<double> c{3, 1, 4, 1, 5};
  EXPECT_EQ(ema_series(c, 1), c);
}

TEST(Ema, ConstantIsFixedPoint) {
  std::vector<double> c(30, 7.25);
  for (double v : ema_series(c, 10)) EXPECT_EQ(v, 7.25);
}

TEST(Ema, HandUnrolled) {
  std::vector<double> c{1, 2, 3};
  auto e = ema_series(c, 3);
  EXPECT_DOUBLE_EQ(e[0], 1.0);
  EXPECT_DOUBLE_EQ(e[1], 1.5);
  EXPECT_DOUBLE_EQ(e[2], 2.25);
}

TEST(Ema, ZeroPeriodRejected) {
  std::vector<double> c{1, 2};
  EXPECT_THROW(ema_series(c, 0), InvalidArgument);
}

TEST(Ema, BoundedByInputRange) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_walk(rng, 100);
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
    for (double v : ema_series(c, 1 + rng.below(60))) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
  }
}

TEST(Sma, Basics) {
  std::vector<double> c{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(sma(c, 2), 3.5);
  std::vector<double> k(10, 2.5);
  EXPECT_DOUBLE_EQ(sma(k, 5), 2.5);
  EXPECT_THROW(sma(c, 5), InsufficientHistory);
}

TEST(Sma, MatchesNaiveSum) {
  Rng rng(4);
  auto c = random_walk(rng, 120);
  const double v = sma(c, 50);
  EXPECT_NEAR(v, testkit::oracle_sma(c, 50), 1e-12 * v);
}

TEST(Macd, ConstantIsZero) {
  std::vector<double> c(60, 42.0);
  EXPECT_EQ(macd(c, 12, 26), 0.0);
}

TEST(Macd, RequiresFastBelowSlow) {
  std::vector<double> c(60, 42.0);
  EXPECT_THROW(macd(c, 26, 26), InvalidArgument);
}

TEST(Macd, MatchesEmaDifferenceOnRamp) {
  std::vector<double> c(40);
  std::iota(c.begin(), c.end(), 1.0);
  const double expected = testkit::oracle_ema(c, 12).back() - testkit::oracle_ema(c, 26).back();
  EXPECT_NEAR(macd(c, 12, 26), expected, 1e-12);
}

TEST(Annotate, WarmupBoundary) {
  auto s = synth_series("T", 60, 1, Regime::trend);
  IndicatorConfig cfg;
  EXPECT_EQ(cfg.warmup(), 51u);
  auto a = annotate(s, cfg);
  for (std::size_t t = 0; t < 60; ++t) EXPECT_EQ(a.entries[t].indicators.has_value(), t >= 51) << t;
  std::vector<double> closes;
  for (const auto& e : s.entries) closes.push_back(e.close);
  const auto& last = *a.entries[59].indicators;
  EXPECT_NEAR(last.rsi, testkit::oracle_rsi(closes, 50), 1e-10);
  EXPECT_NEAR(last.sma, testkit::oracle_sma(closes, 50), 1e-10);
  EXPECT_NEAR(last.ema, testkit::oracle_ema(closes, 50).back(), 1e-10);
  EXPECT_NEAR(last.macd, testkit::oracle_ema(closes, 12).back() - testkit::oracle_ema(closes, 26).back(), 1e-10);
}

TEST(Annotate, ShortSeriesRejected) {
  EXPECT_THROW(annotate(synth_series("T", 10, 1, Regime::trend), IndicatorConfig{}), InsufficientHistory);
}

TEST(Annotate, TrustInputKeepsSuppliedValues) {
  auto s = synth_series("T", 60, 1, Regime::trend);
  s.entries[55].indicators = Indicators{1, 2, 3, 4};
  s.entries[5].indicators = Indicators{5, 6, 7, 8};
  IndicatorConfig cfg;
  cfg.trust_input = true;
  auto a = annotate(s, cfg);
  EXPECT_EQ(*a.entries[55].indicators, (Indicators{1, 2, 3, 4}));
  EXPECT_EQ(*a.entries[5].indicators, (Indicators{5, 6, 7, 8}));
  cfg.trust_input = false;
  auto b = annotate(s, cfg);
  EXPECT_NE(*b.entries[55].indicators, (Indicators{1, 2, 3, 4}));
  EXPECT_FALSE(b.entries[5].indicators);
}

TEST(Annotate, Idempotent) {
  auto a = annotate(synth_series("T", 200, 2, Regime::mix), IndicatorConfig{});
  EXPECT_EQ(annotate(a, IndicatorConfig{}), a);
}

TEST(FitNorm, PopulationStd) {
  MarketSeries s{"T", {}, false};
  for (double v : {1.0, 2.0, 3.0, 4.0}) s.entries.push_back({"2021-01-0" + std::to_string(static_cast<int>(v) + 3), "T", v, v, v, v, {}, {}, {}, {}});
  auto stats = fit_norm({s}, {"open"}, 1.0);
  EXPECT_DOUBLE_EQ(stats.get("T", "open").mean, 2.5);
  EXPECT_NEAR(stats.get("T", "open").std, std::sqrt(1.25), 1e-15);
}

TEST(FitNorm, ConstantFeatureIsDegenerate) {
  MarketSeries s{"T", {}, false};
  for (int d = 4; d < 8; ++d) s.entries.push_back({"2021-01-0" + std::to_string(d), "T", 3, 3, 3, 3, {}, {}, {}, {}});
  EXPECT_THROW(fit_norm({s}, {"open"}, 1.0), DegenerateFeature);
}

TEST(FitNorm, StatsArePerTicker) {
  auto a = annotate(synth_series("A", 200, 1, Regime::trend), IndicatorConfig{});
  auto b = annotate(synth_series("B", 200, 1, Regime::trend), IndicatorConfig{});
  for (auto& e : b.entries) {
    e.open *= 100;
    e.high *= 100;
    e.low *= 100;
    e.close *= 100;
  }
  auto stats = fit_norm({a, b}, normalized_features(), 0.8);
  EXPECT_GT(stats.get("B", "open").mean, 10 * stats.get("A", "open").mean);
  const auto single = fit_norm({a}, normalized_features(), 0.8);
  EXPECT_EQ(single.get("A", "open"), stats.get("A", "open"));
}

TEST(FitNorm, UsesTrainingPrefixOnly) {
  auto a = annotate(synth_series("A", 300, 1, Regime::mix), IndicatorConfig{});
  auto stats = fit_norm({a}, normalized_features(), 0.8);
  auto poisoned = a;
  for (std::size_t t = 241; t < poisoned.size(); ++t) poisoned.entries[t].open *= 10;
  EXPECT_EQ(fit_norm({poisoned}, normalized_features(), 0.8), stats);
}

TEST(ApplyNorm, TrainingSliceIsStandardized) {
  auto a = annotate(synth_series("A", 400, 6, Regime::mix), IndicatorConfig{});
  auto stats = fit_norm({a}, normalized_features(), 0.8);
  auto z = apply_norm(a, stats);
  for (const auto& f : normalized_features()) {
    std::vector<double> v;
    for (const auto& e : z.entries) {
      if (auto x = feature_value(e, f)) v.push_back(*x);
    }
    const std::size_t n = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(v.size())));
    double m = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) m += v[i];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (v[i] - m) * (v[i] - m);
    EXPECT_LT(std::abs(m), 1e-9) << f;
    EXPECT_LT(std::abs(std::sqrt(var / static_cast<double>(n)) - 1.0), 1e-9) << f;
  }
}

TEST(ApplyNorm, MeanAndOneStd) {
  NormStats stats;
  stats.set("T", "open", {10.0, 2.0});
  EXPECT_EQ(apply_norm(10.0, stats.get("T", "open")), 0.0);
  EXPECT_EQ(apply_norm(12.0, stats.get("T", "open")), 1.0);
  EXPECT_THROW(invert_norm(0.0, "T", "close", stats), UnknownKey);
}

TEST(ApplyNorm, InvertRoundTrip) {
  Rng rng(77);
  NormStats stats;
  stats.set("T", "open", {rng.uniform(-50, 500), rng.uniform(0.1, 80)});
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-1000, 1000);
    const double back = invert_norm(apply_norm(x, stats.get("T", "open")), "T", "open", stats);
    worst = std::max(worst, std::abs(back - x) / std::max(1.0, std::abs(x)));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(NormStats, CsvRoundTrip) {
  auto a = annotate(synth_series("A", 200, 1, Regime::trend), IndicatorConfig{});
  auto stats = fit_norm({a}, normalized_features(), 0.8);
  auto path = std::filesystem::temp_directory_path() / "stockformer_norm.csv";
  stats.save_csv(path);
  EXPECT_EQ(NormStats::load_csv(path), stats);
}
