#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stockformer/autodiff/ops.hpp"
#include "stockformer/autodiff/params.hpp"
#include "stockformer/autodiff/rng.hpp"

namespace stockformer {

using ad::Shape;
using ad::Tensor;

inline Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v));
}

/// y = x W + b over the last axis. W is [in, out].
struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(ad::ParamStore& store, const std::string& w_path, const std::string& b_path, std::size_t in, std::size_t out, Rng& rng)
      : w(store.add(w_path, xavier({in, out}, in, out, rng))), b(store.add(b_path, Tensor({out}, 0.0))) {}

  Tensor operator()(const Tensor& x) const { return ad::matmul(x, w) + b; }
};

/// Maps [B, n, in] to [B, n, out], either with one shared matrix or one
/// matrix per position.
struct DayEmbedder {
  Tensor w, b;
  bool per_day = false;

  DayEmbedder() = default;
  DayEmbedder(ad::ParamStore& store, const std::string& prefix, std::size_t lag, std::size_t in, std::size_t out, bool per_day_,
              Rng& rng)
      : per_day(per_day_) {
    if (per_day) {
      w = store.add(prefix + ".w", xavier({lag, in, out}, in, out, rng));
      b = store.add(prefix + ".b", Tensor({lag, out}, 0.0));
    } else {
      w = store.add(prefix + ".w", xavier({in, out}, in, out, rng));
      b = store.add(prefix + ".b", Tensor({out}, 0.0));
    }
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != w.shape()[w.rank() - 2]) {
      throw ShapeMismatch("embed: input " + ad::to_string(x.shape()) + " does not match weight " + ad::to_string(w.shape()));
    }
    if (!per_day) return ad::matmul(x, w) + b;
    if (x.dim(1) != w.dim(0)) {
      throw ShapeMismatch("embed: input " + ad::to_string(x.shape()) + " does not match weight " + ad::to_string(w.shape()));
    }
    // [B, n, in] -> [n, B, in] so each day meets its own matrix
    const Tensor by_day = ad::matmul(ad::transpose(x, 0, 1), w);
    return ad::transpose(by_day, 0, 1) + b;
  }
};

/// PE[k, 2i] = sin(k / pe_n^(2i/d)), PE[k, 2i+1] = cos(k / pe_n^(2i/d)).
inline Tensor positional_encoding(std::size_t seq_len, std::size_t d_model, double pe_n) {
  if (d_model % 2 != 0) throw InvalidArgument("positional encoding needs an even d_model, got " + std::to_string(d_model));
  std::vector<double> v(seq_len * d_model);
  for (std::size_t k = 0; k < seq_len; ++k) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(k) / std::pow(pe_n, static_cast<double>(2 * i) / static_cast<double>(d_model));
      v[k * d_model + 2 * i] = std::sin(angle);
      v[k * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({seq_len, d_model}, std::move(v));
}

/// [n, n] additive mask: 0 on and below the diagonal, -inf above.
inline Tensor causal_mask(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = -std::numeric_limits<double>::infinity();
  }
  return Tensor({n, n}, std::move(v));
}

/// Optional capture of intermediate values during a forward pass.
struct ForwardTrace {
  struct Weights {
    std::string name;
    Tensor value;  // [B, H, n_q, n_k]
  };
  std::vector<Weights> attention;
  std::vector<Tensor> decoder_self_attention;  // per decoder layer, [B, n, d]
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;
  std::string name;

  MultiHeadAttention() = default;
  MultiHeadAttention(ad::ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t heads_, Rng& rng)
      : wq(store, prefix + ".wq", prefix + ".bq", d_model, d_model, rng),
        wk(store, prefix + ".wk", prefix + ".bk", d_model, d_model, rng),
        wv(store, prefix + ".wv", prefix + ".bv", d_model, d_model, rng),
        wo(store, prefix + ".wo", prefix + ".bo", d_model, d_model, rng),
        heads(heads_),
        name(prefix) {}

  /// queries [B, n_q, d]; keys and values [B, n_k, d]; mask [n_q, n_k] added
  /// to the scaled scores.
  Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values, const std::optional<Tensor>& mask,
                    ForwardTrace* trace = nullptr) const {
    if (queries.rank() != 3 || keys.rank() != 3 || values.rank() != 3 || keys.shape() != values.shape() ||
        queries.dim(0) != keys.dim(0) || queries.dim(2) != keys.dim(2)) {
      throw ShapeMismatch("attention: queries " + ad::to_string(queries.shape()) + ", keys " + ad::to_string(keys.shape()) +
                          ", values " + ad::to_string(values.shape()));
    }
    const std::size_t b = queries.dim(0), nq = queries.dim(1), nk = keys.dim(1), d = queries.dim(2);
    const std::size_t dh = d / heads;
    auto split_heads = [&](const Tensor& t, std::size_t n) { return ad::transpose(ad::reshape(t, {b, n, heads, dh}), 1, 2); };
    const Tensor q = split_heads(wq(queries), nq);
    const Tensor k = split_heads(wk(keys), nk);
    const Tensor v = split_heads(wv(values), nk);
    Tensor weights;
    const Tensor heads_out = ad::attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(dh)), mask ? &*mask : nullptr,
                                           trace ? &weights : nullptr);
    if (trace) trace->attention.push_back({name, weights});
    const Tensor merged = ad::reshape(ad::transpose(heads_out, 1, 2), {b, nq, d});
    return wo(merged);
  }
};

struct FeedForward {
  Linear l1, l2;

  FeedForward() = default;
  FeedForward(ad::ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t hidden, Rng& rng)
      : l1(store, prefix + ".w1", prefix + ".b1", d_model, hidden, rng), l2(store, prefix + ".w2", prefix + ".b2", hidden, d_model, rng) {}

  Tensor operator()(const Tensor& x) const { return l2(ad::relu(l1(x))); }
};

struct LayerNorm {
  Tensor gain, bias;
  bool enabled = true;

  LayerNorm() = default;
  LayerNorm(ad::ParamStore& store, const std::string& prefix, std::size_t d, bool enabled_) : enabled(enabled_) {
    if (enabled) {
      gain = store.add(prefix + ".g", Tensor({d}, 1.0));
      bias = store.add(prefix + ".b", Tensor({d}, 0.0));
    }
  }

  Tensor operator()(const Tensor& x) const { return enabled ? ad::layer_norm(x, gain, bias) : x; }
};

}  // namespace stockformer
