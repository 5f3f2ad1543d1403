#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Graph records every operation in creation order; since an operation can
// only consume nodes that already exist, creation order is a topological
// order and backward() is a single reverse sweep over the tape. Parameters
// live outside the graph so that a fresh graph can be built for every
// training step while gradients accumulate into the same Parameter::grad.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tsf/error.hpp"
#include "tsf/rng.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

/// A trainable leaf: value plus a same-shaped gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0) {}

  void zero_grad() { grad.fill(0.0); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  Var constant(Tensor value) { return push({"constant", std::move(value), {}, false, {}, {}, nullptr}); }

  /// Non-parameter leaf; its gradient is readable through grad_of() after backward().
  Var leaf(Tensor value, bool requires_grad = true) {
    return push({"leaf", std::move(value), {}, requires_grad && grad_enabled_, {}, {}, nullptr});
  }

  /// Leaf bound to a parameter. Binding the same parameter twice yields the same node.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
    Var v = push({"param", p.value, {}, grad_enabled_, {}, {}, &p});
    param_ids_.emplace(&p, v.id());
    return v;
  }

  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node n{op, std::move(value), {}, false, {}, {}, nullptr};
    n.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (&in.graph() != this) throw ContractError(std::string(op) + ": operand from another graph");
      n.inputs.push_back(in.id());
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient accumulator of a node, allocated on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  /// Gradient of a node from the last backward(), or nullptr if none reached it.
  const Tensor* grad_of(Var v) const {
    const Tensor& g = nodes_[v.id()].grad;
    return g.empty() ? nullptr : &g;
  }

  /// Propagates d(loss)/d(node) to every node and adds the parameter
  /// gradients into Parameter::grad. Node gradients are reset on each call;
  /// parameter gradients accumulate until zeroed.
  void backward(Var loss) {
    if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    if (loss.value().size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id()).fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // deque: values stay put as the tape grows
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

namespace ad {

namespace detail {

inline void require_rank2(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(v.shape()));
  }
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  Tensor::require_same_shape(a.value(), b.value(), op);
}

template <typename F>
Var map_unary(std::string_view op, const Var& x, F f, std::function<double(double x, double y)> dydx) {
  Graph& g = x.graph();
  Tensor out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return g.record(op, std::move(out), {x}, [dydx = std::move(dydx)](Graph& gr, std::size_t self) {
    const auto& n = gr.node(self);
    const std::size_t a = n.inputs[0];
    if (!gr.requires_grad(a)) return;
    const auto xv = gr.value(a).data();
    const auto yv = n.value.data();
    const auto go = n.grad.data();
    auto ga = gr.grad(a).data();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace detail

/// Standard matrix product a[m x k] * b[k x n].
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner extents differ, " + to_string(A.shape()) + " vs " +
                         to_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out(Shape{m, n});
  kernel::gemm_acc(A.data().data(), B.data().data(), out.data().data(), m, k, n);
  return a.graph().record("matmul", std::move(out), {a, b}, [m, k, n](Graph& g, std::size_t self) {
    const auto& node = g.node(self);
    const std::size_t ia = node.inputs[0], ib = node.inputs[1];
    const double* go = node.grad.data().data();
    if (g.requires_grad(ia)) {
      kernel::gemm_bt_acc(go, g.value(ib).data().data(), g.grad(ia).data().data(), m, n, k);
    }
    if (g.requires_grad(ib)) {
      kernel::gemm_at_acc(g.value(ia).data().data(), go, g.grad(ib).data().data(), m, k, n);
    }
  });
}

inline Var transpose(const Var& x) {
  detail::require_rank2(x, "transpose");
  const auto& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = X(i, j);
  return x.graph().record("transpose", std::move(out), {x}, [r, c](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    Tensor& gx = g.grad(n.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += n.grad(j, i);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return a.graph().record("add", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    for (std::size_t in : n.inputs)
      if (g.requires_grad(in)) g.grad(in) += n.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.graph().record("sub", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    if (g.requires_grad(n.inputs[0])) g.grad(n.inputs[0]) += n.grad;
    if (g.requires_grad(n.inputs[1])) {
      auto gb = g.grad(n.inputs[1]).data();
      const auto go = n.grad.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return a.graph().record("mul", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    const std::size_t ia = n.inputs[0], ib = n.inputs[1];
    const auto go = n.grad.data();
    if (g.requires_grad(ia)) {
      auto ga = g.grad(ia).data();
      const auto bv = g.value(ib).data();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(ib)) {
      auto gb = g.grad(ib).data();
      const auto av = g.value(ia).data();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

/// x[n x d] + bias broadcast over rows; bias has shape [d] or [1 x d].
inline Var add_bias(const Var& x, const Var& bias) {
  detail::require_rank2(x, "add_bias");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  const auto& B = bias.value();
  const bool row_shaped = (B.rank() == 1 && B.shape()[0] == d) ||
                          (B.rank() == 2 && B.rows() == 1 && B.cols() == d);
  if (!row_shaped) {
    throw DimensionError("add_bias: bias " + to_string(B.shape()) + " does not match rows of " +
                         to_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) += B[j];
  return x.graph().record("add_bias", std::move(out), {x, bias}, [n, d](Graph& g, std::size_t self) {
    const auto& node = g.node(self);
    if (g.requires_grad(node.inputs[0])) g.grad(node.inputs[0]) += node.grad;
    if (g.requires_grad(node.inputs[1])) {
      Tensor& gb = g.grad(node.inputs[1]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += node.grad(i, j);
    }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return x.graph().record("scale", std::move(out), {x}, [s](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    auto gx = g.grad(n.inputs[0]).data();
    const auto go = n.grad.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * go[i];
  });
}

inline Var relu(const Var& x) {
  return detail::map_unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(const Var& x) {
  return detail::map_unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& x) {
  return detail::map_unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

enum class Unary { Relu, Tanh, Sigmoid };
enum class Binary { Add, Sub, Mul };

inline Var elementwise(const Var& x, Unary kind) {
  switch (kind) {
    case Unary::Relu: return relu(x);
    case Unary::Tanh: return tanh(x);
    case Unary::Sigmoid: return sigmoid(x);
  }
  throw ContractError("elementwise: unknown unary kind");
}

inline Var elementwise(const Var& a, const Var& b, Binary kind) {
  switch (kind) {
    case Binary::Add: return add(a, b);
    case Binary::Sub: return sub(a, b);
    case Binary::Mul: return mul(a, b);
  }
  throw ContractError("elementwise: unknown binary kind");
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
inline Var softmax(const Var& x, std::size_t axis) {
  const auto& X = x.value();
  if (axis >= X.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(X.shape()));
  }
  if (!X.all_finite()) throw NumericError("softmax: non-finite input");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= X.shape()[i];
  for (std::size_t i = axis + 1; i < X.rank(); ++i) inner *= X.shape()[i];
  const std::size_t len = X.shape()[axis];

  Tensor out(X.shape());
  const auto xv = X.data();
  auto y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  return x.graph().record("softmax", std::move(out), {x}, [outer, inner, len](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    const auto yv = n.value.data();
    const auto go = n.grad.data();
    auto gx = g.grad(n.inputs[0]).data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += go[base + k * inner] * yv[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += yv[idx] * (go[idx] - dot);
        }
      }
    }
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-p) so evaluation is the identity.
inline Var dropout(const Var& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = x.value();
  auto o = out.data();
  const auto mv = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mv[i];
  return x.graph().record("dropout", std::move(out), {x}, [mask = std::move(mask)](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    auto gx = g.grad(n.inputs[0]).data();
    const auto go = n.grad.data();
    const auto mv = mask.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * mv[i];
  });
}

inline Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.graph().record("sum", Tensor::scalar(total), {x}, [](Graph& g, std::size_t self) {
    const double go = g.node(self).grad[0];
    for (double& v : g.grad(g.node(self).inputs[0]).data()) v += go;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean squared error against a fixed target.
inline Var mse_loss(const Var& pred, const Tensor& target) {
  Tensor::require_same_shape(pred.value(), target, "mse_loss");
  const auto pv = pred.value().data();
  const auto tv = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  return pred.graph().record("mse_loss", Tensor::scalar(total * inv_n), {pred},
                             [target, inv_n](Graph& g, std::size_t self) {
                               const auto& n = g.node(self);
                               const std::size_t ip = n.inputs[0];
                               const auto pv = g.value(ip).data();
                               const auto tv = target.data();
                               auto gp = g.grad(ip).data();
                               const double go = n.grad[0];
                               for (std::size_t i = 0; i < gp.size(); ++i) {
                                 gp[i] += go * 2.0 * inv_n * (pv[i] - tv[i]);
                               }
                             });
}

/// Row-wise layer normalization over the last extent with population variance,
/// followed by the affine map gain * x_hat + bias.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t n = x.value().rows(), h = x.value().cols();
  if (gain.value().size() != h || bias.value().size() != h) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                         to_string(bias.shape()) + " do not match width of " + to_string(x.shape()));
  }
  const auto& X = x.value();
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  Tensor x_hat(X.shape());
  std::vector<double> inv_std(n);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < h; ++j) mu += X(i, j);
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
    var /= static_cast<double>(h);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < h; ++j) {
      x_hat(i, j) = (X(i, j) - mu) * inv_std[i];
      out(i, j) = gv[j] * x_hat(i, j) + bv[j];
    }
  }
  return x.graph().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [n, h, x_hat = std::move(x_hat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
        const auto& node = g.node(self);
        const std::size_t ix = node.inputs[0], ig = node.inputs[1], ib = node.inputs[2];
        const Tensor& go = node.grad;
        if (g.requires_grad(ig)) {
          auto gg = g.grad(ig).data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h; ++j) gg[j] += go(i, j) * x_hat(i, j);
        }
        if (g.requires_grad(ib)) {
          auto gb = g.grad(ib).data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h; ++j) gb[j] += go(i, j);
        }
        if (g.requires_grad(ix)) {
          const auto gv = g.value(ig).data();
          Tensor& gx = g.grad(ix);
          std::vector<double> dxh(h);
          for (std::size_t i = 0; i < n; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
              dxh[j] = go(i, j) * gv[j];
              m1 += dxh[j];
              m2 += dxh[j] * x_hat(i, j);
            }
            m1 /= static_cast<double>(h);
            m2 /= static_cast<double>(h);
            for (std::size_t j = 0; j < h; ++j) gx(i, j) += inv_std[i] * (dxh[j] - m1 - x_hat(i, j) * m2);
          }
        }
      });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().record("reshape", std::move(out), {x}, [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    auto gx = g.grad(n.inputs[0]).data();
    const auto go = n.grad.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

/// Columns [begin, begin + count) of a matrix.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (count == 0 || begin + count > c) throw DimensionError("slice_cols: range exceeds " + to_string(x.shape()));
  Tensor out(Shape{r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x.value()(i, begin + j);
  return x.graph().record("slice_cols", std::move(out), {x}, [r, begin, count](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    Tensor& gx = g.grad(n.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx(i, begin + j) += n.grad(i, j);
  });
}

/// Rows [begin, begin + count) of a matrix.
inline Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (count == 0 || begin + count > r) throw DimensionError("slice_rows: range exceeds " + to_string(x.shape()));
  const auto src = x.value().data().subspan(begin * c, count * c);
  Tensor out(Shape{count, c}, std::vector<double>(src.begin(), src.end()));
  return x.graph().record("slice_rows", std::move(out), {x}, [begin, c](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    auto gx = g.grad(n.inputs[0]).data().subspan(begin * c);
    const auto go = n.grad.data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

/// Side-by-side concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t r = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.value().rows() != r) throw DimensionError("concat_cols: row counts differ");
    total += p.value().cols();
  }
  if (parts.size() == 1) return parts.front();
  Tensor out(Shape{r, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const auto& P = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    off += P.cols();
  }
  return parts.front().graph().record("concat_cols", std::move(out), parts,
                                      [r, offsets = std::move(offsets)](Graph& g, std::size_t self) {
                                        const auto& n = g.node(self);
                                        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                                          const std::size_t in = n.inputs[k];
                                          if (!g.requires_grad(in)) continue;
                                          Tensor& gp = g.grad(in);
                                          const std::size_t w = gp.cols();
                                          for (std::size_t i = 0; i < r; ++i)
                                            for (std::size_t j = 0; j < w; ++j) gp(i, j) += n.grad(i, offsets[k] + j);
                                        }
                                      });
}

/// Blockwise a_b * b_b^T for `blocks` stacked row groups:
/// a[B*m x k], b[B*n x k] -> [B*m x n]. Used for per-sequence attention scores.
inline Var block_matmul_bt(const Var& a, const Var& b, std::size_t blocks) {
  detail::require_rank2(a, "block_matmul_bt");
  detail::require_rank2(b, "block_matmul_bt");
  const auto& A = a.value();
  const auto& B = b.value();
  if (blocks == 0 || A.rows() % blocks != 0 || B.rows() % blocks != 0 || A.cols() != B.cols()) {
    throw DimensionError("block_matmul_bt: " + to_string(A.shape()) + " vs " + to_string(B.shape()) +
                         " in " + std::to_string(blocks) + " blocks");
  }
  const std::size_t m = A.rows() / blocks, n = B.rows() / blocks, k = A.cols();
  Tensor out(Shape{blocks * m, n});
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    kernel::gemm_bt_acc(A.data().data() + bi * m * k, B.data().data() + bi * n * k,
                        out.data().data() + bi * m * n, m, k, n);
  }
  return a.graph().record("block_matmul_bt", std::move(out), {a, b}, [blocks, m, n, k](Graph& g, std::size_t self) {
    const auto& node = g.node(self);
    const std::size_t ia = node.inputs[0], ib = node.inputs[1];
    const double* go = node.grad.data().data();
    for (std::size_t bi = 0; bi < blocks; ++bi) {
      const double* gob = go + bi * m * n;
      if (g.requires_grad(ia)) {  // dA = dC * B
        kernel::gemm_acc(gob, g.value(ib).data().data() + bi * n * k, g.grad(ia).data().data() + bi * m * k, m, n,
                         k);
      }
      if (g.requires_grad(ib)) {  // dB = dC^T * A
        kernel::gemm_at_acc(gob, g.value(ia).data().data() + bi * m * k, g.grad(ib).data().data() + bi * n * k, m,
                            n, k);
      }
    }
  });
}

/// Blockwise a_b * b_b: a[B*m x n], b[B*n x k] -> [B*m x k].
inline Var block_matmul(const Var& a, const Var& b, std::size_t blocks) {
  detail::require_rank2(a, "block_matmul");
  detail::require_rank2(b, "block_matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  if (blocks == 0 || A.rows() % blocks != 0 || B.rows() % blocks != 0 || A.cols() != B.rows() / blocks) {
    throw DimensionError("block_matmul: " + to_string(A.shape()) + " vs " + to_string(B.shape()) + " in " +
                         std::to_string(blocks) + " blocks");
  }
  const std::size_t m = A.rows() / blocks, n = A.cols(), k = B.cols();
  Tensor out(Shape{blocks * m, k});
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    kernel::gemm_acc(A.data().data() + bi * m * n, B.data().data() + bi * n * k, out.data().data() + bi * m * k, m,
                     n, k);
  }
  return a.graph().record("block_matmul", std::move(out), {a, b}, [blocks, m, n, k](Graph& g, std::size_t self) {
    const auto& node = g.node(self);
    const std::size_t ia = node.inputs[0], ib = node.inputs[1];
    const double* go = node.grad.data().data();
    for (std::size_t bi = 0; bi < blocks; ++bi) {
      const double* gob = go + bi * m * k;
      if (g.requires_grad(ia)) {  // dA = dC * B^T
        kernel::gemm_bt_acc(gob, g.value(ib).data().data() + bi * n * k, g.grad(ia).data().data() + bi * m * n, m,
                            k, n);
      }
      if (g.requires_grad(ib)) {  // dB = A^T * dC
        kernel::gemm_at_acc(g.value(ia).data().data() + bi * m * n, gob, g.grad(ib).data().data() + bi * n * k, m,
                            n, k);
      }
    }
  });
}

}  // namespace ad

}  // namespace tsf
