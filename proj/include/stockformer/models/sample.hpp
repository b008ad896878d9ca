#pragma once

#include <span>
#include <string>
#include <vector>

#include "stockformer/autodiff/tensor.hpp"
#include "stockformer/error.hpp"

namespace stockformer {

/// One training example: `lag` consecutive days of features, the normalized
/// opens of those days, and the normalized open of the following day.
struct WindowSample {
  std::vector<double> features;  // lag x feature_dim, row-major by day
  std::vector<double> prior_opens;
  double label = 0.0;
  std::string ticker;
  std::string label_date;

  std::size_t lag() const noexcept { return prior_opens.size(); }
  /// Normalized open of the last input day, the reference for direction.
  double prior() const { return prior_opens.back(); }
};

struct Batch {
  ad::Tensor features;     // [B, n, f]
  ad::Tensor prior_opens;  // [B, n, 1]
  ad::Tensor labels;       // [B, 1]
  std::size_t size() const { return labels.dim(0); }
};

inline Batch make_batch(std::span<const WindowSample* const> samples, std::size_t feature_dim) {
  if (samples.empty()) throw InvalidArgument("make_batch: empty batch");
  const std::size_t b = samples.size();
  const std::size_t n = samples.front()->lag();
  std::vector<double> f, p, y;
  f.reserve(b * n * feature_dim);
  p.reserve(b * n);
  y.reserve(b);
  for (const WindowSample* s : samples) {
    if (s->lag() != n || s->features.size() != n * feature_dim) {
      throw ShapeMismatch("make_batch: sample for " + s->ticker + " " + s->label_date + " has " +
                          std::to_string(s->features.size()) + " feature values, expected " + std::to_string(n * feature_dim));
    }
    f.insert(f.end(), s->features.begin(), s->features.end());
    p.insert(p.end(), s->prior_opens.begin(), s->prior_opens.end());
    y.push_back(s->label);
  }
  return Batch{ad::Tensor({b, n, feature_dim}, std::move(f)), ad::Tensor({b, n, 1}, std::move(p)), ad::Tensor({b, 1}, std::move(y))};
}

inline Batch make_batch(const std::vector<WindowSample>& samples, std::size_t feature_dim) {
  std::vector<const WindowSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(std::span<const WindowSample* const>(ptrs), feature_dim);
}

}  // namespace stockformer
