#pragma once

// Encoder-decoder transformer for direct multi-step forecasting.
//
//   encoder: Pre-Layer MLP (features -> d_prelayer -> d_model) + positional
//            encoding, then n_encoder_blocks x [self-attention, FFN]
//   decoder: Pre-Layer MLP (1 -> d_prelayer -> d_model) + positional
//            encoding, then n_decoder_blocks x [causal self-attention,
//            encoder-decoder attention, FFN]
//   output:  Post-Layer MLP (d_model -> d_postlayer -> 1) per decoder position
//
// The decoder input is the last encoder target value followed by the target
// sequence shifted by one position. With Pre-LN placement each stack ends in
// a final layer normalization.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/error.hpp"
#include "tsf/layers.hpp"
#include "tsf/models/forecaster.hpp"
#include "tsf/rng.hpp"

namespace tsf {

/// How the decoder is fed at inference for horizon > 1.
enum class DecoderInference { Autoregressive, ZeroPad };

inline std::string_view to_string(DecoderInference d) {
  return d == DecoderInference::Autoregressive ? "autoregressive" : "zero";
}

inline DecoderInference parse_decoder_inference(std::string_view s) {
  if (s == "autoregressive") return DecoderInference::Autoregressive;
  if (s == "zero" || s == "zeropad") return DecoderInference::ZeroPad;
  throw ConfigError("unknown decoder_inference '" + std::string(s) + "'");
}

struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t n_encoder_blocks = 2;
  std::size_t n_decoder_blocks = 2;
  std::size_t n_heads = 1;
  std::size_t d_ff = 100;
  std::size_t d_prelayer = 50;
  std::size_t d_postlayer = 50;
  double dropout = 0.2;
  double attention_dropout = 0.0;
  NormPlacement norm_placement = NormPlacement::PreLN;
  std::size_t time_lag = 7;
  std::size_t horizon = 1;
  std::size_t n_features = 1;
  DecoderInference inference = DecoderInference::Autoregressive;
  double layer_norm_eps = 1e-5;

  void validate() const {
    for (auto [name, v] : {std::pair<const char*, std::size_t>{"d_model", d_model},
                           {"n_encoder_blocks", n_encoder_blocks},
                           {"n_decoder_blocks", n_decoder_blocks},
                           {"n_heads", n_heads},
                           {"d_ff", d_ff},
                           {"d_prelayer", d_prelayer},
                           {"d_postlayer", d_postlayer},
                           {"time_lag", time_lag},
                           {"horizon", horizon},
                           {"n_features", n_features}}) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (d_model % 2 != 0) throw ConfigError("d_model must be even for the positional encoding");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
      throw ConfigError("attention_dropout must lie in [0, 1)");
    }
    if (n_features > 3) throw ConfigError("n_features must be at most 3");
    if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  }
};

/// Two dense layers with ReLU and dropout between them.
struct ProjectionMlp {
  Linear hidden;
  Linear out;

  ProjectionMlp() = default;
  ProjectionMlp(std::size_t in, std::size_t width, std::size_t out_dim, const std::string& name, Rng& rng)
      : hidden(in, width, name + ".hidden", rng), out(width, out_dim, name + ".out", rng) {}

  Var forward(ForwardContext& ctx, const Var& x, double dropout_p) {
    return out(ctx.graph, ctx.dropout(ad::relu(hidden(ctx.graph, x)), dropout_p));
  }

  void collect(std::vector<Parameter*>& ps) {
    hidden.collect(ps);
    out.collect(ps);
  }
};

struct EncoderBlock {
  MultiHeadAttention self_attn;
  FeedForward ffn;
  LayerNormParams norm_attn;
  LayerNormParams norm_ffn;

  void collect(std::vector<Parameter*>& ps) {
    self_attn.collect(ps);
    norm_attn.collect(ps);
    ffn.collect(ps);
    norm_ffn.collect(ps);
  }
};

struct DecoderBlock {
  MultiHeadAttention causal_attn;
  MultiHeadAttention cross_attn;
  FeedForward ffn;
  LayerNormParams norm_causal;
  LayerNormParams norm_cross;
  LayerNormParams norm_ffn;

  void collect(std::vector<Parameter*>& ps) {
    causal_attn.collect(ps);
    norm_causal.collect(ps);
    cross_attn.collect(ps);
    norm_cross.collect(ps);
    ffn.collect(ps);
    norm_ffn.collect(ps);
  }
};

class DeepTransformer final : public Forecaster {
 public:
  DeepTransformer(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const double eps = cfg_.layer_norm_eps;
    enc_in_ = ProjectionMlp(cfg_.n_features, cfg_.d_prelayer, cfg_.d_model, "encoder.input", rng);
    dec_in_ = ProjectionMlp(1, cfg_.d_prelayer, cfg_.d_model, "decoder.input", rng);
    for (std::size_t i = 0; i < cfg_.n_encoder_blocks; ++i) {
      const std::string p = "encoder.block" + std::to_string(i);
      enc_.push_back(EncoderBlock{
          MultiHeadAttention(cfg_.d_model, cfg_.n_heads, p + ".self_attn", rng, cfg_.attention_dropout),
          FeedForward(cfg_.d_model, cfg_.d_ff, p + ".ffn", rng), LayerNormParams(cfg_.d_model, p + ".norm_attn", eps),
          LayerNormParams(cfg_.d_model, p + ".norm_ffn", eps)});
    }
    for (std::size_t i = 0; i < cfg_.n_decoder_blocks; ++i) {
      const std::string p = "decoder.block" + std::to_string(i);
      dec_.push_back(DecoderBlock{
          MultiHeadAttention(cfg_.d_model, cfg_.n_heads, p + ".causal_attn", rng, cfg_.attention_dropout),
          MultiHeadAttention(cfg_.d_model, cfg_.n_heads, p + ".cross_attn", rng, cfg_.attention_dropout),
          FeedForward(cfg_.d_model, cfg_.d_ff, p + ".ffn", rng), LayerNormParams(cfg_.d_model, p + ".norm_causal", eps),
          LayerNormParams(cfg_.d_model, p + ".norm_cross", eps), LayerNormParams(cfg_.d_model, p + ".norm_ffn", eps)});
    }
    if (cfg_.norm_placement == NormPlacement::PreLN) {
      enc_final_ = LayerNormParams(cfg_.d_model, "encoder.final_norm", eps);
      dec_final_ = LayerNormParams(cfg_.d_model, "decoder.final_norm", eps);
    }
    post_ = ProjectionMlp(cfg_.d_model, cfg_.d_postlayer, 1, "output", rng);
  }

  using Forecaster::predict;

  std::string_view family() const override { return "transformer"; }
  std::size_t time_lag() const override { return cfg_.time_lag; }
  std::size_t horizon() const override { return cfg_.horizon; }
  std::size_t n_features() const override { return cfg_.n_features; }
  const TransformerConfig& config() const { return cfg_; }

  std::vector<EncoderBlock>& encoder_blocks() { return enc_; }
  std::vector<DecoderBlock>& decoder_blocks() { return dec_; }
  ProjectionMlp& output_layer() { return post_; }

  /// Teacher-forced decoder input: [last encoder target, y_0, ..., y_{h-2}] per window.
  Tensor shifted_targets(const Tensor& inputs, const Tensor& targets, std::size_t count) const {
    const std::size_t h = cfg_.horizon, lag = cfg_.time_lag;
    Tensor dec(Shape{count * h, 1});
    for (std::size_t b = 0; b < count; ++b) {
      dec[b * h] = inputs(b * lag + lag - 1, 0);
      for (std::size_t k = 1; k < h; ++k) dec[b * h + k] = targets[b * h + k - 1];
    }
    return dec;
  }

  Var forward(ForwardContext& ctx, const Batch& batch) override {
    return forward(ctx, batch.inputs, shifted_targets(batch.inputs, batch.targets, batch.count), batch.count);
  }

  /// Full pass with explicit decoder input [count*L x 1], L >= 1; returns [count*L x 1].
  Var forward(ForwardContext& ctx, const Tensor& inputs, const Tensor& decoder_inputs, std::size_t count) {
    const Var memory = encode(ctx, inputs, count);
    return decode(ctx, memory, decoder_inputs, count);
  }

  Var encode(ForwardContext& ctx, const Tensor& inputs, std::size_t count) {
    check_inputs(inputs, count);
    Graph& g = ctx.graph;
    const double p = cfg_.dropout;
    Var x = enc_in_.forward(ctx, g.constant(inputs), p);
    x = ad::add(x, g.constant(positional_encoding(count, cfg_.time_lag, cfg_.d_model)));
    for (EncoderBlock& blk : enc_) {
      x = residual_block(
          ctx, x, [&](const Var& in) { return blk.self_attn.forward(ctx, in, in, in, count, false); },
          cfg_.norm_placement, blk.norm_attn, p);
      x = residual_block(ctx, x, [&](const Var& in) { return blk.ffn(g, in); }, cfg_.norm_placement, blk.norm_ffn, p);
    }
    if (enc_final_) x = layer_norm(g, x, *enc_final_);
    return x;
  }

  Var decode(ForwardContext& ctx, const Var& memory, const Tensor& decoder_inputs, std::size_t count) {
    if (decoder_inputs.rank() != 2 || decoder_inputs.cols() != 1 || decoder_inputs.rows() % count != 0) {
      throw ContractError("decoder input must be [count*len x 1], got " + to_string(decoder_inputs.shape()));
    }
    Graph& g = ctx.graph;
    const double p = cfg_.dropout;
    const std::size_t len = decoder_inputs.rows() / count;
    Var y = dec_in_.forward(ctx, g.constant(decoder_inputs), p);
    y = ad::add(y, g.constant(positional_encoding(count, len, cfg_.d_model)));
    for (DecoderBlock& blk : dec_) {
      y = residual_block(
          ctx, y, [&](const Var& in) { return blk.causal_attn.forward(ctx, in, in, in, count, true); },
          cfg_.norm_placement, blk.norm_causal, p);
      y = residual_block(
          ctx, y, [&](const Var& in) { return blk.cross_attn.forward(ctx, in, memory, memory, count, false); },
          cfg_.norm_placement, blk.norm_cross, p);
      y = residual_block(ctx, y, [&](const Var& in) { return blk.ffn(g, in); }, cfg_.norm_placement, blk.norm_ffn, p);
    }
    if (dec_final_) y = layer_norm(g, y, *dec_final_);
    return post_.forward(ctx, y, p);
  }

  Tensor predict(const Tensor& inputs, std::size_t count) override {
    check_inputs(inputs, count);
    const std::size_t h = cfg_.horizon, lag = cfg_.time_lag;
    Graph g(false);
    ForwardContext ctx{g, false, nullptr};
    const Var memory = encode(ctx, inputs, count);

    if (cfg_.inference == DecoderInference::ZeroPad || h == 1) {
      Tensor dec(Shape{count * h, 1}, 0.0);
      for (std::size_t b = 0; b < count; ++b) dec[b * h] = inputs(b * lag + lag - 1, 0);
      return decode(ctx, memory, dec, count).value().reshaped(Shape{count, h});
    }

    // Autoregressive: position k is fed the forecast made at position k-1.
    std::vector<std::vector<double>> fed(count);
    for (std::size_t b = 0; b < count; ++b) fed[b].push_back(inputs(b * lag + lag - 1, 0));
    Tensor last;
    for (std::size_t len = 1; len <= h; ++len) {
      Tensor dec(Shape{count * len, 1});
      for (std::size_t b = 0; b < count; ++b)
        for (std::size_t k = 0; k < len; ++k) dec[b * len + k] = fed[b][k];
      last = decode(ctx, memory, dec, count).value();
      if (len < h) {
        for (std::size_t b = 0; b < count; ++b) fed[b].push_back(last[b * len + len - 1]);
      }
    }
    return last.reshaped(Shape{count, h});
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> ps;
    enc_in_.collect(ps);
    for (EncoderBlock& b : enc_) b.collect(ps);
    if (enc_final_) enc_final_->collect(ps);
    dec_in_.collect(ps);
    for (DecoderBlock& b : dec_) b.collect(ps);
    if (dec_final_) dec_final_->collect(ps);
    post_.collect(ps);
    return ps;
  }

 private:
  TransformerConfig cfg_;
  ProjectionMlp enc_in_;
  ProjectionMlp dec_in_;
  std::vector<EncoderBlock> enc_;
  std::vector<DecoderBlock> dec_;
  std::optional<LayerNormParams> enc_final_;
  std::optional<LayerNormParams> dec_final_;
  ProjectionMlp post_;
};

}  // namespace tsf
