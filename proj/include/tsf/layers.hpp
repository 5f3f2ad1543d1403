#pragma once

// Transformer building blocks on top of the autodiff tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/error.hpp"
#include "tsf/rng.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

/// Where layer normalization sits relative to the residual connection.
enum class NormPlacement { PreLN, PostLN };

inline std::string_view to_string(NormPlacement p) { return p == NormPlacement::PreLN ? "pre" : "post"; }

inline NormPlacement parse_placement(std::string_view s) {
  if (s == "pre" || s == "preln" || s == "pre-ln" || s == "PreLN") return NormPlacement::PreLN;
  if (s == "post" || s == "postln" || s == "post-ln" || s == "PostLN") return NormPlacement::PostLN;
  throw ConfigError("unknown norm placement '" + std::string(s) + "' (expected pre or post)");
}

/// State threaded through a forward pass. `rng` may be null when not training.
struct ForwardContext {
  Graph& graph;
  bool training = false;
  Rng* rng = nullptr;

  Var dropout(const Var& x, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    if (rng == nullptr) throw ContractError("training forward with dropout needs an rng");
    return ad::dropout(x, p, true, *rng);
  }
};

/// Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

/// x W + b with the bias broadcast over rows.
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  return ad::add_bias(ad::matmul(x, weight), bias);
}

struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, const std::string& name, Rng& rng)
      : weight(name + ".weight", xavier_uniform(in, out, rng)), bias(name + ".bias", Tensor(Shape{out}, 0.0)) {}

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  Var operator()(Graph& g, const Var& x) { return linear(x, g.param(weight), g.param(bias)); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Sinusoidal encoding: PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
inline Tensor positional_encoding(std::size_t seq_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("positional encoding needs an even d_model, got " + std::to_string(d_model));
  }
  Tensor pe(Shape{seq_len, d_model});
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(angle);
      pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

/// The encoding repeated for `batch` stacked sequences of length seq_len.
inline Tensor positional_encoding(std::size_t batch, std::size_t seq_len, std::size_t d_model) {
  const Tensor one = positional_encoding(seq_len, d_model);
  Tensor out(Shape{batch * seq_len, d_model});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(one.data().begin(), one.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * one.size()));
  }
  return out;
}

struct LayerNormParams {
  Parameter gain;
  Parameter bias;
  double epsilon = 1e-5;

  LayerNormParams() = default;
  LayerNormParams(std::size_t width, const std::string& name, double eps = 1e-5)
      : gain(name + ".gain", Tensor(Shape{width}, 1.0)), bias(name + ".bias", Tensor(Shape{width}, 0.0)), epsilon(eps) {}

  std::size_t width() const { return gain.value.size(); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

inline Var layer_norm(Graph& g, const Var& x, LayerNormParams& p) {
  return ad::layer_norm(x, g.param(p.gain), g.param(p.bias), p.epsilon);
}

/// Additive look-ahead mask for `batch` stacked sequences: row i of each
/// block may only attend to columns j <= i.
inline Tensor causal_mask(std::size_t batch, std::size_t len, double masked_value = -1e9) {
  Tensor m(Shape{batch * len, len}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = i + 1; j < len; ++j) m(b * len + i, j) = masked_value;
  return m;
}

struct AttentionHead {
  Parameter w_q;
  Parameter w_k;
  Parameter w_v;
  std::size_t d_head = 0;
};

// Scaled dot-product attention run once per head, heads concatenated and
// projected back to d_model. Inputs are `batch` sequences stacked row-wise.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t n_heads, const std::string& name, Rng& rng,
                     double attention_dropout = 0.0)
      : d_model_(d_model), attention_dropout_(attention_dropout) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(n_heads) +
                        " heads");
    }
    const std::size_t d_head = d_model / n_heads;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::string prefix = name + ".head" + std::to_string(h);
      heads_.push_back(AttentionHead{Parameter(prefix + ".w_q", xavier_uniform(d_model, d_head, rng)),
                                     Parameter(prefix + ".w_k", xavier_uniform(d_model, d_head, rng)),
                                     Parameter(prefix + ".w_v", xavier_uniform(d_model, d_head, rng)), d_head});
    }
    out_ = Linear(d_model, d_model, name + ".out", rng);
  }

  std::size_t heads() const { return heads_.size(); }
  std::size_t d_model() const { return d_model_; }
  std::vector<AttentionHead>& head_params() { return heads_; }
  Linear& output_projection() { return out_; }

  /// `weights`, when given, receives one [batch*Lq x Lk] weight matrix per head.
  Var forward(ForwardContext& ctx, const Var& q_in, const Var& k_in, const Var& v_in, std::size_t batch, bool causal,
              std::vector<Tensor>* weights = nullptr) {
    Graph& g = ctx.graph;
    for (const Var* v : {&q_in, &k_in, &v_in}) {
      if (v->value().rank() != 2 || v->value().cols() != d_model_) {
        throw DimensionError("attention input " + to_string(v->shape()) + " does not have width " +
                             std::to_string(d_model_));
      }
    }
    if (k_in.value().rows() != v_in.value().rows()) throw DimensionError("attention keys and values differ in length");
    const std::size_t lq = q_in.value().rows() / batch;
    const std::size_t lk = k_in.value().rows() / batch;
    if (causal && lq != lk) throw DimensionError("causal attention needs equal query and key lengths");
    std::optional<Var> mask;
    if (causal) mask = g.constant(causal_mask(batch, lq));

    if (weights != nullptr) weights->clear();
    std::vector<Var> outputs;
    outputs.reserve(heads_.size());
    for (AttentionHead& head : heads_) {
      const Var q = ad::matmul(q_in, g.param(head.w_q));
      const Var k = ad::matmul(k_in, g.param(head.w_k));
      const Var v = ad::matmul(v_in, g.param(head.w_v));
      Var scores = ad::scale(ad::block_matmul_bt(q, k, batch), 1.0 / std::sqrt(static_cast<double>(head.d_head)));
      if (mask) scores = ad::add(scores, *mask);
      Var attn = ad::softmax(scores, 1);
      if (weights != nullptr) weights->push_back(attn.value());
      attn = ctx.dropout(attn, attention_dropout_);
      outputs.push_back(ad::block_matmul(attn, v, batch));
    }
    return out_(g, ad::concat_cols(outputs));
  }

  void collect(std::vector<Parameter*>& out) {
    for (AttentionHead& h : heads_) {
      out.push_back(&h.w_q);
      out.push_back(&h.w_k);
      out.push_back(&h.w_v);
    }
    out_.collect(out);
  }

 private:
  std::size_t d_model_ = 0;
  double attention_dropout_ = 0.0;
  std::vector<AttentionHead> heads_;
  Linear out_;
};

inline Var multi_head_attention(ForwardContext& ctx, MultiHeadAttention& mha, const Var& q_in, const Var& k_in,
                                const Var& v_in, std::size_t batch = 1, bool causal = false) {
  return mha.forward(ctx, q_in, k_in, v_in, batch, causal);
}

/// Position-wise two-layer network with a ReLU in between.
struct FeedForward {
  Linear expand;
  Linear contract;

  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t d_ff, const std::string& name, Rng& rng)
      : expand(d_model, d_ff, name + ".expand", rng), contract(d_ff, d_model, name + ".contract", rng) {}

  Var operator()(Graph& g, const Var& x) { return contract(g, ad::relu(expand(g, x))); }

  void collect(std::vector<Parameter*>& out) {
    expand.collect(out);
    contract.collect(out);
  }
};

inline Var ffn(Graph& g, FeedForward& f, const Var& x) { return f(g, x); }

using Sublayer = std::function<Var(const Var&)>;

/// PostLN: LN(x + dropout(f(x)));  PreLN: x + dropout(f(LN(x))).
inline Var residual_block(ForwardContext& ctx, const Var& x, const Sublayer& sublayer, NormPlacement placement,
                          LayerNormParams& norm, double dropout_p) {
  auto checked = [&](const Var& in) {
    Var y = sublayer(in);
    if (y.shape() != x.shape()) {
      throw DimensionError("residual sublayer changed shape " + to_string(x.shape()) + " -> " + to_string(y.shape()));
    }
    return ctx.dropout(y, dropout_p);
  };
  if (placement == NormPlacement::PostLN) return layer_norm(ctx.graph, ad::add(x, checked(x)), norm);
  return ad::add(x, checked(layer_norm(ctx.graph, x, norm)));
}

}  // namespace tsf
