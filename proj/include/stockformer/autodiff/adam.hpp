#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stockformer/autodiff/tensor.hpp"

namespace stockformer::ad {

/// Moment buffers for Adam. Buffers are sized on the first step.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update, applied in place; grads are zeroed after.
inline void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw MissingGrad("adam_step: parameter " + std::to_string(i) + " of shape " + to_string(params[i].shape()) +
                        " has no gradient");
    }
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw ShapeMismatch("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ShapeMismatch("adam_step: moment buffer does not match parameter " + std::to_string(i));
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
      g[j] = 0.0;
    }
  }
}

}  // namespace stockformer::ad
