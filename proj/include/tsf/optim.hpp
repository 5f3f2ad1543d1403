#pragma once

// First-order optimizers and learning-rate schedules.
//
// Update rules follow the canonical published forms (as implemented by the
// mainstream deep-learning frameworks). Per-kind defaults:
//
//   kind      lr     beta1  beta2  eps    rho    weight_decay  momentum
//   Adam      1e-3   0.9    0.999  1e-8   -      0             -
//   AdamW     1e-3   0.9    0.999  1e-8   -      1e-2          -
//   Adamax    2e-3   0.9    0.999  1e-8   -      0             -
//   Adagrad   1e-2   -      -      1e-10  -      0             -
//   Adadelta  1.0    -      -      1e-6   0.9    0             -
//   SGD       1e-2   -      -      -      -      0             0
//   RMSprop   1e-2   -      -      1e-8   0.99   0             0
//
// For RMSprop `rho` is the smoothing constant usually called alpha.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/error.hpp"

namespace tsf {

enum class OptimizerKind { Adam, AdamW, Adamax, Adagrad, Adadelta, SGD, RMSprop };

inline constexpr std::array<OptimizerKind, 7> kAllOptimizers = {
    OptimizerKind::Adam,     OptimizerKind::AdamW, OptimizerKind::Adamax, OptimizerKind::Adagrad,
    OptimizerKind::Adadelta, OptimizerKind::SGD,   OptimizerKind::RMSprop};

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::Adamax: return "adamax";
    case OptimizerKind::Adagrad: return "adagrad";
    case OptimizerKind::Adadelta: return "adadelta";
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::RMSprop: return "rmsprop";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (OptimizerKind k : kAllOptimizers) {
    if (to_string(k) == lower) return k;
  }
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double momentum = 0.0;
  double rho = 0.9;

  static OptimizerSpec defaults(OptimizerKind kind) {
    OptimizerSpec s;
    s.kind = kind;
    switch (kind) {
      case OptimizerKind::Adam: break;
      case OptimizerKind::AdamW: s.weight_decay = 1e-2; break;
      case OptimizerKind::Adamax: s.base_lr = 2e-3; break;
      case OptimizerKind::Adagrad:
        s.base_lr = 1e-2;
        s.eps = 1e-10;
        break;
      case OptimizerKind::Adadelta:
        s.base_lr = 1.0;
        s.eps = 1e-6;
        s.rho = 0.9;
        break;
      case OptimizerKind::SGD: s.base_lr = 1e-2; break;
      case OptimizerKind::RMSprop:
        s.base_lr = 1e-2;
        s.rho = 0.99;
        break;
    }
    return s;
  }

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  }
};

enum class SchedulerKind { WarmupInvSqrt, Constant };

inline std::string_view to_string(SchedulerKind k) { return k == SchedulerKind::Constant ? "constant" : "noam"; }

inline SchedulerKind parse_scheduler(std::string_view s) {
  if (s == "noam" || s == "warmup_inv_sqrt") return SchedulerKind::WarmupInvSqrt;
  if (s == "constant") return SchedulerKind::Constant;
  throw ConfigError("unknown scheduler '" + std::string(s) + "'");
}

struct SchedulerSpec {
  SchedulerKind kind = SchedulerKind::WarmupInvSqrt;
  std::size_t d_model = 64;
  std::size_t warmup_steps = 60;
};

/// Learning rate for optimizer step t (1-based).
/// WarmupInvSqrt: base * d_model^-0.5 * min(t^-0.5, t * warmup^-1.5).
inline double lr_at(const SchedulerSpec& s, std::int64_t t, double base_lr) {
  if (t < 1) throw ContractError("scheduler step must be >= 1, got " + std::to_string(t));
  if (s.kind == SchedulerKind::Constant) return base_lr;
  if (s.warmup_steps < 1 || s.d_model < 1) throw ConfigError("scheduler needs warmup_steps >= 1 and d_model >= 1");
  const double td = static_cast<double>(t);
  const double w = static_cast<double>(s.warmup_steps);
  return base_lr / std::sqrt(static_cast<double>(s.d_model)) * std::min(1.0 / std::sqrt(td), td * std::pow(w, -1.5));
}

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

/// Optimizer state bound to a fixed list of parameters.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, std::vector<Parameter*> params) : spec_(spec), params_(std::move(params)) {
    spec_.validate();
    for (Parameter* p : params_) {
      first_.emplace_back(p->value.shape(), 0.0);
      second_.emplace_back(p->value.shape(), 0.0);
    }
  }

  const OptimizerSpec& spec() const { return spec_; }
  std::int64_t steps() const { return t_; }
  std::span<Parameter* const> parameters() const { return params_; }

  /// One update of every parameter with learning rate `lr`.
  void step(double lr) {
    for (Parameter* p : params_) {
      if (p->grad.shape() != p->value.shape()) throw ContractError("parameter '" + p->name + "' has no gradient");
      if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) update(*params_[i], first_[i].data(), second_[i].data(), lr);
  }

 private:
  void update(Parameter& p, std::span<double> s1, std::span<double> s2, double lr) {
    auto w = p.value.data();
    const auto g0 = p.grad.data();
    const OptimizerSpec& s = spec_;
    const double t = static_cast<double>(t_);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = g0[i];
      switch (s.kind) {
        case OptimizerKind::SGD: {
          g += s.weight_decay * w[i];
          if (s.momentum > 0.0) {
            s1[i] = t_ == 1 ? g : s.momentum * s1[i] + g;
            g = s1[i];
          }
          w[i] -= lr * g;
          break;
        }
        case OptimizerKind::Adam:
        case OptimizerKind::AdamW: {
          if (s.kind == OptimizerKind::AdamW) {
            w[i] -= lr * s.weight_decay * w[i];
          } else {
            g += s.weight_decay * w[i];
          }
          s1[i] = s.beta1 * s1[i] + (1.0 - s.beta1) * g;
          s2[i] = s.beta2 * s2[i] + (1.0 - s.beta2) * g * g;
          const double m_hat = s1[i] / (1.0 - std::pow(s.beta1, t));
          const double v_hat = s2[i] / (1.0 - std::pow(s.beta2, t));
          w[i] -= lr * m_hat / (std::sqrt(v_hat) + s.eps);
          break;
        }
        case OptimizerKind::Adamax: {
          g += s.weight_decay * w[i];
          s1[i] = s.beta1 * s1[i] + (1.0 - s.beta1) * g;
          s2[i] = std::max(s.beta2 * s2[i], std::abs(g) + s.eps);
          w[i] -= lr / (1.0 - std::pow(s.beta1, t)) * s1[i] / s2[i];
          break;
        }
        case OptimizerKind::Adagrad: {
          g += s.weight_decay * w[i];
          s1[i] += g * g;
          w[i] -= lr * g / (std::sqrt(s1[i]) + s.eps);
          break;
        }
        case OptimizerKind::Adadelta: {
          g += s.weight_decay * w[i];
          s1[i] = s.rho * s1[i] + (1.0 - s.rho) * g * g;
          const double delta = std::sqrt(s2[i] + s.eps) / std::sqrt(s1[i] + s.eps) * g;
          s2[i] = s.rho * s2[i] + (1.0 - s.rho) * delta * delta;
          w[i] -= lr * delta;
          break;
        }
        case OptimizerKind::RMSprop: {
          g += s.weight_decay * w[i];
          s1[i] = s.rho * s1[i] + (1.0 - s.rho) * g * g;
          double upd = g / (std::sqrt(s1[i]) + s.eps);
          if (s.momentum > 0.0) {
            s2[i] = s.momentum * s2[i] + upd;
            upd = s2[i];
          }
          w[i] -= lr * upd;
          break;
        }
      }
    }
  }

  OptimizerSpec spec_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::int64_t t_ = 0;
};

}  // namespace tsf
