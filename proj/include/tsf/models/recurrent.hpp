#pragma once

// Single-layer RNN and LSTM forecasters. The recurrence is unrolled over the
// input window from a zero state and a linear head maps the final hidden
// state to all horizon outputs at once.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/error.hpp"
#include "tsf/layers.hpp"
#include "tsf/models/forecaster.hpp"
#include "tsf/rng.hpp"

namespace tsf {

struct RecurrentConfig {
  std::size_t hidden_size = 16;
  std::size_t time_lag = 7;
  std::size_t horizon = 1;
  std::size_t n_features = 1;

  void validate() const {
    if (hidden_size == 0 || time_lag == 0 || horizon == 0 || n_features == 0) {
      throw ConfigError("recurrent model extents must be positive");
    }
  }
};

namespace detail {

/// Rows t, lag + t, 2*lag + t, ... of the stacked windows: the inputs at step t, [count x features].
inline Tensor step_inputs(const Tensor& inputs, std::size_t count, std::size_t lag, std::size_t t) {
  const std::size_t nf = inputs.cols();
  Tensor x(Shape{count, nf});
  for (std::size_t b = 0; b < count; ++b)
    for (std::size_t f = 0; f < nf; ++f) x(b, f) = inputs(b * lag + t, f);
  return x;
}

inline Tensor zero_bias(std::size_t n) { return Tensor(Shape{n}, 0.0); }

}  // namespace detail

/// H_t = tanh(X_t W_xh + H_{t-1} W_hh + b_h);  output = H_T W_ho + b_o.
struct RnnCell {
  Parameter w_xh, w_hh, b_h;
  Parameter w_ho, b_o;

  RnnCell() = default;
  RnnCell(const RecurrentConfig& c, Rng& rng)
      : w_xh("rnn.w_xh", xavier_uniform(c.n_features, c.hidden_size, rng)),
        w_hh("rnn.w_hh", xavier_uniform(c.hidden_size, c.hidden_size, rng)),
        b_h("rnn.b_h", detail::zero_bias(c.hidden_size)),
        w_ho("rnn.w_ho", xavier_uniform(c.hidden_size, c.horizon, rng)),
        b_o("rnn.b_o", detail::zero_bias(c.horizon)) {}

  std::size_t hidden_size() const { return w_hh.value.rows(); }

  std::vector<Parameter*> parameters() { return {&w_xh, &w_hh, &b_h, &w_ho, &b_o}; }
};

/// Unrolled RNN over `count` stacked windows; returns [count x horizon].
inline Var rnn_forward(Graph& g, RnnCell& cell, const Tensor& inputs, std::size_t count, std::size_t lag) {
  const Var w_xh = g.param(cell.w_xh), w_hh = g.param(cell.w_hh), b_h = g.param(cell.b_h);
  Var h = g.constant(Tensor(Shape{count, cell.hidden_size()}, 0.0));
  for (std::size_t t = 0; t < lag; ++t) {
    const Var x = g.constant(detail::step_inputs(inputs, count, lag, t));
    h = ad::tanh(ad::add_bias(ad::add(ad::matmul(x, w_xh), ad::matmul(h, w_hh)), b_h));
  }
  return linear(h, g.param(cell.w_ho), g.param(cell.b_o));
}

/// Gates I, O, F = sigmoid(X W_x* + H W_h* + b_*), candidate C~ = tanh(...),
/// C_t = F * C_{t-1} + I * C~,  H_t = O * tanh(C_t). Output head on the final H.
struct LstmCell {
  Parameter w_xi, w_hi, b_i;
  Parameter w_xo, w_ho, b_o;
  Parameter w_xf, w_hf, b_f;
  Parameter w_xc, w_hc, b_c;
  Parameter w_out, b_out;

  LstmCell() = default;
  LstmCell(const RecurrentConfig& c, Rng& rng) {
    const std::size_t nf = c.n_features, hs = c.hidden_size;
    auto gate = [&](const char* g, Parameter& wx, Parameter& wh, Parameter& b) {
      wx = Parameter(std::string("lstm.w_x") + g, xavier_uniform(nf, hs, rng));
      wh = Parameter(std::string("lstm.w_h") + g, xavier_uniform(hs, hs, rng));
      b = Parameter(std::string("lstm.b_") + g, detail::zero_bias(hs));
    };
    gate("i", w_xi, w_hi, b_i);
    gate("o", w_xo, w_ho, b_o);
    gate("f", w_xf, w_hf, b_f);
    gate("c", w_xc, w_hc, b_c);
    w_out = Parameter("lstm.w_out", xavier_uniform(hs, c.horizon, rng));
    b_out = Parameter("lstm.b_out", detail::zero_bias(c.horizon));
  }

  std::size_t hidden_size() const { return w_hi.value.rows(); }

  std::vector<Parameter*> parameters() {
    return {&w_xi, &w_hi, &b_i, &w_xo, &w_ho, &b_o, &w_xf, &w_hf, &b_f, &w_xc, &w_hc, &b_c, &w_out, &b_out};
  }
};

struct LstmState {
  Var hidden;
  Var cell;
};

/// One LSTM step from state `s` on inputs x [count x features].
inline LstmState lstm_step(Graph& g, LstmCell& c, const Var& x, const LstmState& s) {
  auto pre = [&](Parameter& wx, Parameter& wh, Parameter& b) {
    return ad::add_bias(ad::add(ad::matmul(x, g.param(wx)), ad::matmul(s.hidden, g.param(wh))), g.param(b));
  };
  const Var in_gate = ad::sigmoid(pre(c.w_xi, c.w_hi, c.b_i));
  const Var out_gate = ad::sigmoid(pre(c.w_xo, c.w_ho, c.b_o));
  const Var forget_gate = ad::sigmoid(pre(c.w_xf, c.w_hf, c.b_f));
  const Var candidate = ad::tanh(pre(c.w_xc, c.w_hc, c.b_c));
  const Var cell = ad::add(ad::mul(forget_gate, s.cell), ad::mul(in_gate, candidate));
  return LstmState{ad::mul(out_gate, ad::tanh(cell)), cell};
}

/// Unrolled LSTM over `count` stacked windows; returns [count x horizon].
inline Var lstm_forward(Graph& g, LstmCell& cell, const Tensor& inputs, std::size_t count, std::size_t lag) {
  const Tensor zeros(Shape{count, cell.hidden_size()}, 0.0);
  LstmState s{g.constant(zeros), g.constant(zeros)};
  for (std::size_t t = 0; t < lag; ++t) {
    s = lstm_step(g, cell, g.constant(detail::step_inputs(inputs, count, lag, t)), s);
  }
  return linear(s.hidden, g.param(cell.w_out), g.param(cell.b_out));
}

template <typename Cell, Var (*Unroll)(Graph&, Cell&, const Tensor&, std::size_t, std::size_t)>
class RecurrentForecaster final : public Forecaster {
 public:
  RecurrentForecaster(const RecurrentConfig& cfg, Rng& rng, std::string_view family)
      : cfg_((cfg.validate(), cfg)), cell_(cfg, rng), family_(family) {}

  using Forecaster::predict;

  std::string_view family() const override { return family_; }
  std::size_t time_lag() const override { return cfg_.time_lag; }
  std::size_t horizon() const override { return cfg_.horizon; }
  std::size_t n_features() const override { return cfg_.n_features; }
  const RecurrentConfig& config() const { return cfg_; }
  Cell& cell() { return cell_; }

  Var forward(ForwardContext& ctx, const Batch& batch) override {
    check_inputs(batch.inputs, batch.count);
    const Var out = Unroll(ctx.graph, cell_, batch.inputs, batch.count, cfg_.time_lag);
    return ad::reshape(out, Shape{batch.count * cfg_.horizon, 1});
  }

  Tensor predict(const Tensor& inputs, std::size_t count) override {
    check_inputs(inputs, count);
    Graph g(false);
    return Unroll(g, cell_, inputs, count, cfg_.time_lag).value();
  }

  std::vector<Parameter*> parameters() override { return cell_.parameters(); }

 private:
  RecurrentConfig cfg_;
  Cell cell_;
  std::string_view family_;
};

using RnnForecaster = RecurrentForecaster<RnnCell, &rnn_forward>;
using LstmForecaster = RecurrentForecaster<LstmCell, &lstm_forward>;

}  // namespace tsf
