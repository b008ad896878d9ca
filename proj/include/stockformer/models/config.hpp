#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"
#include "stockformer/error.hpp"

namespace stockformer {

enum class ModelKind { stockformer, bilstm };

inline std::string to_string(ModelKind k) { return k == ModelKind::stockformer ? "stockformer" : "bilstm"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "stockformer") return ModelKind::stockformer;
  if (s == "bilstm") return ModelKind::bilstm;
  throw InvalidArgument("unknown model '" + std::string(s) + "' (expected stockformer or bilstm)");
}

/// Per-day inputs: open, high, low, close, rsi, ema, sma, macd, sentiment.
inline constexpr std::size_t kFeatureDim = 9;

struct ModelConfig {
  std::size_t lag = 4;
  std::size_t feature_dim = kFeatureDim;
  std::size_t d_model = 80;
  std::size_t heads = 8;
  std::size_t enc_layers = 6;
  std::size_t dec_layers = 6;
  double dropout = 0.1;
  std::size_t ffn_dim = 0;  // 0 means 4 * d_model
  double pe_n = 10000.0;
  std::size_t lstm_hidden = 10;  // per direction
  std::size_t lstm_layers = 2;
  bool lstm_bidirectional = true;
  bool use_layer_norm = true;
  // one embedding matrix per lag position instead of a shared one
  bool per_day_embedder = false;
  std::uint64_t seed = 0;

  std::size_t ffn() const noexcept { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }

  void validate() const {
    if (lag < 1) throw InvalidArgument("lag must be >= 1");
    if (feature_dim < 1) throw InvalidArgument("feature_dim must be >= 1");
    if (d_model < 1 || heads < 1) throw InvalidArgument("d_model and heads must be >= 1");
    if (d_model % heads != 0) {
      throw InvalidArgument("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
    }
    if (d_model % 2 != 0) throw InvalidArgument("d_model must be even for the positional encoding");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0, 1)");
    if (enc_layers < 1 || dec_layers < 1) throw InvalidArgument("encoder and decoder need at least one layer");
    if (lstm_hidden < 1 || lstm_layers < 1) throw InvalidArgument("lstm_hidden and lstm_layers must be >= 1");
    if (!(pe_n > 0.0)) throw InvalidArgument("pe_n must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"lag", c.lag},
                     {"feature_dim", c.feature_dim},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"dropout", c.dropout},
                     {"ffn_dim", c.ffn_dim},
                     {"pe_n", c.pe_n},
                     {"lstm_hidden", c.lstm_hidden},
                     {"lstm_layers", c.lstm_layers},
                     {"lstm_bidirectional", c.lstm_bidirectional},
                     {"use_layer_norm", c.use_layer_norm},
                     {"per_day_embedder", c.per_day_embedder},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw InvalidArgument("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "lag") c.lag = value.get<std::size_t>();
    else if (key == "feature_dim") c.feature_dim = value.get<std::size_t>();
    else if (key == "d_model") c.d_model = value.get<std::size_t>();
    else if (key == "heads") c.heads = value.get<std::size_t>();
    else if (key == "enc_layers") c.enc_layers = value.get<std::size_t>();
    else if (key == "dec_layers") c.dec_layers = value.get<std::size_t>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "ffn_dim") c.ffn_dim = value.get<std::size_t>();
    else if (key == "pe_n") c.pe_n = value.get<double>();
    else if (key == "lstm_hidden") c.lstm_hidden = value.get<std::size_t>();
    else if (key == "lstm_layers") c.lstm_layers = value.get<std::size_t>();
    else if (key == "lstm_bidirectional") c.lstm_bidirectional = value.get<bool>();
    else if (key == "use_layer_norm") c.use_layer_norm = value.get<bool>();
    else if (key == "per_day_embedder") c.per_day_embedder = value.get<bool>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw UnknownKey("unknown model config key '" + key + "'");
  }
}

}  // namespace stockformer
