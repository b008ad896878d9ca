#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stockformer/error.hpp"
#include "stockformer/indicators.hpp"
#include "stockformer/market_data.hpp"
#include "stockformer/models/config.hpp"

namespace stockformer {

struct ExperimentConfig {
  std::vector<std::size_t> lags{4, 9, 14, 24, 29};
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::size_t batch = 32;
  double split = 0.8;  // train fraction, per ticker
  std::uint64_t seed = 0;
  std::vector<ModelKind> models{ModelKind::stockformer, ModelKind::bilstm};

  // Market data: a CSV path, or synthetic tickers when empty.
  std::string data_csv;
  std::vector<std::string> synth_tickers{"AAPL", "AMZN", "GOOG", "META", "NFLX"};
  std::size_t synth_days = 750;
  Regime synth_regime = Regime::mix;

  // Precomputed class probabilities; headlines fall back to the lexicon.
  std::string scores_csv;
  std::string lexicon;  // empty: built-in word lists
  std::size_t sentiment_channels = 1;  // 1: p_pos - p_neg, 3: the three probabilities

  bool per_ticker = false;
  // Fit z-score stats on every row instead of the training slice only.
  bool normalize_whole = false;

  IndicatorConfig indicators;
  // lag and feature_dim are filled in per run.
  ModelConfig model;

  std::size_t feature_dim() const noexcept { return 8 + sentiment_channels; }

  void validate() const {
    if (lags.empty()) throw InvalidArgument("lags must not be empty");
    for (auto l : lags) {
      if (l < 1) throw InvalidArgument("lags must all be >= 1");
    }
    if (!(split > 0.0 && split < 1.0)) throw InvalidArgument("split must be in (0, 1)");
    if (batch < 1) throw InvalidArgument("batch must be >= 1");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be > 0");
    if (models.empty()) throw InvalidArgument("models must not be empty");
    if (sentiment_channels != 1 && sentiment_channels != 3) throw InvalidArgument("sentiment_channels must be 1 or 3");
    if (data_csv.empty() && (synth_tickers.empty() || synth_days == 0)) {
      throw InvalidArgument("no data: set data_csv or synthetic tickers and days");
    }
    indicators.validate();
    ModelConfig probe = model;
    probe.lag = lags.front();
    probe.feature_dim = feature_dim();
    probe.validate();
  }

  /// Model settings for one run.
  ModelConfig model_for(ModelKind kind, std::size_t lag) const {
    ModelConfig m = model;
    m.lag = lag;
    m.feature_dim = feature_dim();
    m.seed = mix_seed(seed, 1000 * lag + static_cast<std::uint64_t>(kind));
    return m;
  }
};

inline void to_json(nlohmann::json& j, const IndicatorConfig& c) {
  j = nlohmann::json{{"rsi_window", c.rsi_window}, {"sma_window", c.sma_window}, {"ema_window", c.ema_window},
                     {"macd_fast", c.macd_fast},   {"macd_slow", c.macd_slow},   {"trust_input", c.trust_input}};
}

inline void from_json(const nlohmann::json& j, IndicatorConfig& c) {
  if (!j.is_object()) throw InvalidArgument("indicator config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "rsi_window") c.rsi_window = value.get<std::size_t>();
    else if (key == "sma_window") c.sma_window = value.get<std::size_t>();
    else if (key == "ema_window") c.ema_window = value.get<std::size_t>();
    else if (key == "macd_fast") c.macd_fast = value.get<std::size_t>();
    else if (key == "macd_slow") c.macd_slow = value.get<std::size_t>();
    else if (key == "trust_input") c.trust_input = value.get<bool>();
    else throw UnknownKey("unknown indicator config key '" + key + "'");
  }
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> models;
  for (auto m : c.models) models.push_back(to_string(m));
  j = nlohmann::json{{"lags", c.lags},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"batch", c.batch},
                     {"split", c.split},
                     {"seed", c.seed},
                     {"models", models},
                     {"data_csv", c.data_csv},
                     {"synth_tickers", c.synth_tickers},
                     {"synth_days", c.synth_days},
                     {"synth_regime", to_string(c.synth_regime)},
                     {"scores_csv", c.scores_csv},
                     {"lexicon", c.lexicon},
                     {"sentiment_channels", c.sentiment_channels},
                     {"per_ticker", c.per_ticker},
                     {"normalize_whole", c.normalize_whole},
                     {"indicators", c.indicators},
                     {"model", c.model}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw InvalidArgument("experiment config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lags") c.lags = value.get<std::vector<std::size_t>>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "batch") c.batch = value.get<std::size_t>();
      else if (key == "split") c.split = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "models") {
        c.models.clear();
        for (const auto& m : value) c.models.push_back(parse_model_kind(m.get<std::string>()));
      } else if (key == "data_csv") c.data_csv = value.get<std::string>();
      else if (key == "synth_tickers") c.synth_tickers = value.get<std::vector<std::string>>();
      else if (key == "synth_days") c.synth_days = value.get<std::size_t>();
      else if (key == "synth_regime") c.synth_regime = parse_regime(value.get<std::string>());
      else if (key == "scores_csv") c.scores_csv = value.get<std::string>();
      else if (key == "lexicon") c.lexicon = value.get<std::string>();
      else if (key == "sentiment_channels") c.sentiment_channels = value.get<std::size_t>();
      else if (key == "per_ticker") c.per_ticker = value.get<bool>();
      else if (key == "normalize_whole") c.normalize_whole = value.get<bool>();
      else if (key == "indicators") from_json(value, c.indicators);
      else if (key == "model") from_json(value, c.model);
      else throw UnknownKey("unknown experiment config key '" + key + "'");
    }
  } catch (const nlohmann::json::type_error& e) {
    throw InvalidArgument(std::string("experiment config: ") + e.what());
  }
}

}  // namespace stockformer
