#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stockformer/experiment/config.hpp"
#include "stockformer/experiment/windows.hpp"
#include "stockformer/indicators.hpp"
#include "stockformer/market_data.hpp"
#include "stockformer/sentiment.hpp"
#include "stockformer/synthetic.hpp"

namespace stockformer {

/// Raw, unannotated market series named by the config.
inline std::vector<MarketSeries> load_market(const ExperimentConfig& cfg) {
  if (!cfg.data_csv.empty()) {
    auto loaded = load_csv(std::filesystem::path(cfg.data_csv));
    for (auto& s : loaded.series) s = align_business_days(std::move(s));
    return std::move(loaded.series);
  }
  std::vector<MarketSeries> out;
  for (const auto& t : cfg.synth_tickers) out.push_back(synth_series(t, cfg.synth_days, cfg.seed, cfg.synth_regime));
  return out;
}

struct PreparedData {
  std::vector<MarketSeries> series;  // annotated, sentiment attached, normalized
  NormStats stats;
};

/// Indicators and sentiment on the raw prices.
inline std::vector<MarketSeries> annotate_all(std::vector<MarketSeries> raw, const ExperimentConfig& cfg) {
  std::optional<ScoreMap> scores;
  if (!cfg.scores_csv.empty()) scores = load_scores(std::filesystem::path(cfg.scores_csv));
  std::optional<LexiconScorer> custom;
  if (!cfg.lexicon.empty()) custom = LexiconScorer::from_file(cfg.lexicon);
  const LexiconScorer& lex = custom ? *custom : LexiconScorer::builtin();
  for (auto& s : raw) {
    s = annotate(std::move(s), cfg.indicators);
    s = attach(std::move(s), scores ? &*scores : nullptr, lex);
  }
  return raw;
}

/// Annotates, then z-scores with stats fit on each ticker's leading `split`
/// fraction (or every row when normalize_whole is set).
inline PreparedData prepare(std::vector<MarketSeries> raw, const ExperimentConfig& cfg) {
  PreparedData out;
  out.series = annotate_all(std::move(raw), cfg);
  out.stats = fit_norm(out.series, normalized_features(), cfg.normalize_whole ? 1.0 : cfg.split);
  for (auto& s : out.series) s = apply_norm(std::move(s), out.stats);
  return out;
}

/// Pooled samples of every series, ticker by ticker.
inline std::vector<WindowSample> windows_of(const std::vector<MarketSeries>& series, std::size_t lag, std::size_t channels) {
  std::vector<WindowSample> out;
  for (const auto& s : series) {
    auto w = make_windows(s, lag, channels);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

}  // namespace stockformer
