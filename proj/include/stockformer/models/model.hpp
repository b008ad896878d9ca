#pragma once

#include <memory>

#include "stockformer/autodiff/params.hpp"
#include "stockformer/autodiff/rng.hpp"
#include "stockformer/models/config.hpp"
#include "stockformer/models/layers.hpp"
#include "stockformer/models/sample.hpp"

namespace stockformer {

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual ModelKind kind() const noexcept = 0;

  /// Predictions [B, 1]. Dropout draws from `rng` only when training.
  virtual Tensor forward(const Batch& batch, bool training, Rng& rng, ForwardTrace* trace = nullptr) const = 0;

  const ModelConfig& config() const noexcept { return cfg_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  /// Single-sample convenience wrapper in eval mode.
  double predict(const WindowSample& s) const {
    ad::NoGradGuard guard;
    Rng unused(0);
    return forward(make_batch(std::vector<WindowSample>{s}, cfg_.feature_dim), false, unused)[0];
  }

 protected:
  void check_batch(const Batch& b) const {
    if (b.features.rank() != 3 || b.features.dim(1) != cfg_.lag || b.features.dim(2) != cfg_.feature_dim) {
      throw ShapeMismatch("batch features " + ad::to_string(b.features.shape()) + " do not match lag " + std::to_string(cfg_.lag) +
                          " and feature_dim " + std::to_string(cfg_.feature_dim));
    }
    if (b.prior_opens.shape() != Shape{b.features.dim(0), cfg_.lag, 1}) {
      throw ShapeMismatch("batch prior opens " + ad::to_string(b.prior_opens.shape()) + " do not match features " +
                          ad::to_string(b.features.shape()));
    }
  }

  ModelConfig cfg_;
  ad::ParamStore params_;
};

}  // namespace stockformer
