#pragma once

// Encoder-decoder Transformer over a lag window. The encoder reads the
// per-day features; the decoder reads the same days' opens under a causal
// mask plus cross-attention to the encoder, and the last decoder position
// feeds a linear head that predicts the next open.

#include <vector>

#include "stockformer/models/model.hpp"

namespace stockformer {

class StockFormer final : public Model {
 public:
  explicit StockFormer(ModelConfig cfg) : Model(std::move(cfg)) {
    Rng rng(mix_seed(cfg_.seed, 0x5f0));
    const std::size_t d = cfg_.d_model;
    embed_ = DayEmbedder(params_, "embed", cfg_.lag, cfg_.feature_dim, d, cfg_.per_day_embedder, rng);
    dec_embed_ = DayEmbedder(params_, "dec_embed", cfg_.lag, 1, d, cfg_.per_day_embedder, rng);
    for (std::size_t i = 0; i < cfg_.enc_layers; ++i) {
      const std::string p = "enc." + std::to_string(i);
      encoder_.push_back({MultiHeadAttention(params_, p + ".attn", d, cfg_.heads, rng), FeedForward(params_, p + ".ffn", d, cfg_.ffn(), rng),
                          LayerNorm(params_, p + ".ln1", d, cfg_.use_layer_norm), LayerNorm(params_, p + ".ln2", d, cfg_.use_layer_norm)});
    }
    for (std::size_t i = 0; i < cfg_.dec_layers; ++i) {
      const std::string p = "dec." + std::to_string(i);
      decoder_.push_back({MultiHeadAttention(params_, p + ".self_attn", d, cfg_.heads, rng),
                          MultiHeadAttention(params_, p + ".cross_attn", d, cfg_.heads, rng), FeedForward(params_, p + ".ffn", d, cfg_.ffn(), rng),
                          LayerNorm(params_, p + ".ln1", d, cfg_.use_layer_norm), LayerNorm(params_, p + ".ln2", d, cfg_.use_layer_norm),
                          LayerNorm(params_, p + ".ln3", d, cfg_.use_layer_norm)});
    }
    head_ = Linear(params_, "head.w", "head.b", d, 1, rng);
    pe_ = positional_encoding(cfg_.lag, d, cfg_.pe_n);
    mask_ = causal_mask(cfg_.lag);
  }

  ModelKind kind() const noexcept override { return ModelKind::stockformer; }

  Tensor forward(const Batch& batch, bool training, Rng& rng, ForwardTrace* trace = nullptr) const override {
    check_batch(batch);
    const double p = cfg_.dropout;
    auto drop = [&](const Tensor& t) { return ad::dropout(t, p, rng, training); };

    Tensor x = drop(embed_(batch.features) + pe_);
    for (const auto& l : encoder_) {
      x = l.ln1(x + drop(l.attn(x, x, x, std::nullopt, trace)));
      x = l.ln2(x + drop(l.ffn(x)));
    }
    const Tensor memory = x;

    Tensor y = drop(dec_embed_(batch.prior_opens) + pe_);
    for (const auto& l : decoder_) {
      const Tensor self = l.self_attn(y, y, y, mask_, trace);
      if (trace) trace->decoder_self_attention.push_back(self);
      y = l.ln1(y + drop(self));
      y = l.ln2(y + drop(l.cross_attn(y, memory, memory, std::nullopt, trace)));
      y = l.ln3(y + drop(l.ffn(y)));
    }
    const std::size_t b = batch.size();
    const Tensor last = ad::reshape(ad::slice(y, 1, cfg_.lag - 1, 1), {b, cfg_.d_model});
    return head_(last);
  }

 private:
  struct EncoderLayer {
    MultiHeadAttention attn;
    FeedForward ffn;
    LayerNorm ln1, ln2;
  };
  struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;
    LayerNorm ln1, ln2, ln3;
  };

  DayEmbedder embed_, dec_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Linear head_;
  Tensor pe_, mask_;
};

}  // namespace stockformer
