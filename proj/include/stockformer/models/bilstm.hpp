#pragma once

#include <vector>

#include "stockformer/models/model.hpp"

namespace stockformer {

/// Stacked (optionally bidirectional) LSTM over embedded days. The last
/// forward state and the backward state at day 0 feed the linear head.
class BiLstm final : public Model {
 public:
  explicit BiLstm(ModelConfig cfg) : Model(std::move(cfg)) {
    Rng rng(mix_seed(cfg_.seed, 0x157));
    const std::size_t h = cfg_.lstm_hidden;
    embed_ = DayEmbedder(params_, "embed", cfg_.lag, cfg_.feature_dim, cfg_.d_model, cfg_.per_day_embedder, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    auto uniform = [&](Shape shape) {
      std::vector<double> v(ad::numel(shape));
      for (double& x : v) x = rng.uniform(-bound, bound);
      return Tensor(std::move(shape), std::move(v));
    };
    for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
      const std::size_t in = l == 0 ? cfg_.d_model : h * directions();
      std::vector<Cell> cells;
      for (std::size_t dir = 0; dir < directions(); ++dir) {
        const std::string p = "lstm." + std::to_string(l) + (dir == 0 ? ".fwd" : ".bwd");
        cells.push_back({params_.add(p + ".w_ih", uniform({in, 4 * h})), params_.add(p + ".w_hh", uniform({h, 4 * h})),
                         params_.add(p + ".b", uniform({4 * h}))});
      }
      layers_.push_back(std::move(cells));
    }
    head_ = Linear(params_, "head.w", "head.b", h * directions(), 1, rng);
  }

  ModelKind kind() const noexcept override { return ModelKind::bilstm; }

  std::size_t directions() const noexcept { return cfg_.lstm_bidirectional ? 2 : 1; }

  Tensor forward(const Batch& batch, bool training, Rng& rng, ForwardTrace* = nullptr) const override {
    check_batch(batch);
    const std::size_t b = batch.size(), n = cfg_.lag, h = cfg_.lstm_hidden;
    Tensor x = embed_(batch.features);  // [B, n, d]
    Tensor final_state;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (l > 0) x = ad::dropout(x, cfg_.dropout, rng, training);
      std::vector<Tensor> outputs, finals;
      for (std::size_t dir = 0; dir < directions(); ++dir) {
        auto states = run(layers_[l][dir], x, dir == 1, b, n, h);
        // forward direction ends at day n-1, backward at day 0
        finals.push_back(dir == 0 ? states.back() : states.front());
        std::vector<Tensor> steps;
        for (const auto& s : states) steps.push_back(ad::reshape(s, {b, 1, h}));
        outputs.push_back(ad::concat(steps, 1));
      }
      x = outputs.size() == 1 ? outputs[0] : ad::concat(outputs, -1);
      final_state = finals.size() == 1 ? finals[0] : ad::concat(finals, -1);
    }
    return head_(final_state);
  }

 private:
  struct Cell {
    Tensor w_ih, w_hh, b;
  };

  /// Hidden states indexed by day, whichever direction they were computed in.
  static std::vector<Tensor> run(const Cell& c, const Tensor& x, bool reverse, std::size_t b, std::size_t n, std::size_t h) {
    const Tensor projected = ad::matmul(x, c.w_ih) + c.b;  // [B, n, 4h]
    std::vector<Tensor> states(n);
    Tensor hs({b, h}, 0.0), cs({b, h}, 0.0);
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t t = reverse ? n - 1 - step : step;
      const Tensor gates = ad::reshape(ad::slice(projected, 1, t, 1), {b, 4 * h}) + ad::matmul(hs, c.w_hh);
      const Tensor i = ad::sigmoid(ad::slice(gates, 1, 0, h));
      const Tensor f = ad::sigmoid(ad::slice(gates, 1, h, h));
      const Tensor g = ad::tanh(ad::slice(gates, 1, 2 * h, h));
      const Tensor o = ad::sigmoid(ad::slice(gates, 1, 3 * h, h));
      cs = f * cs + i * g;
      hs = o * ad::tanh(cs);
      states[t] = hs;
    }
    return states;
  }

  DayEmbedder embed_;
  std::vector<std::vector<Cell>> layers_;
  Linear head_;
};

}  // namespace stockformer
