#pragma once

#include <vector>

#include "stockformer/models.hpp"
#include "support/gradcheck.hpp"

namespace stockformer::testkit {

/// d_model 8, one encoder and one decoder layer, 2 heads, lag 3, hidden 4.
inline ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.lag = 3;
  c.d_model = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.lstm_hidden = 4;
  c.seed = seed;
  return c;
}

inline std::vector<WindowSample> random_samples(Rng& rng, std::size_t count, std::size_t lag, std::size_t feature_dim) {
  std::vector<WindowSample> out;
  for (std::size_t s = 0; s < count; ++s) {
    WindowSample w;
    for (std::size_t i = 0; i < lag * feature_dim; ++i) w.features.push_back(rng.normal());
    for (std::size_t i = 0; i < lag; ++i) w.prior_opens.push_back(rng.normal());
    w.label = rng.normal();
    w.ticker = "T";
    w.label_date = "2021-01-04";
    out.push_back(std::move(w));
  }
  return out;
}

/// Finite differences over every parameter of a model in eval mode, with
/// an MSE loss against the batch labels.
inline GradCheckResult check_model_gradients(Model& model, const Batch& batch) {
  std::vector<std::string> names;
  for (const auto& [path, _] : model.params().entries()) names.push_back(path);
  auto loss = [&] {
    Rng unused(0);
    return ad::mse_loss(model.forward(batch, false, unused), batch.labels);
  };
  return check_gradients(loss, model.params().tensors(), names);
}

}  // namespace stockformer::testkit
