#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/optim.hpp"

namespace tsf::testing {

inline double grad_at(double w) { return 2.0 * (w - 3.0); }  // d/dw (w-3)^2

// Runs the library optimizer on the scalar quadratic and records w after each step.
inline std::vector<double> library_trace(const OptimizerSpec& spec, double w0, int steps, double lr) {
  Parameter p("w", Tensor::vector({w0}));
  Optimizer opt(spec, {&p});
  std::vector<double> out;
  for (int i = 0; i < steps; ++i) {
    p.grad[0] = grad_at(p.value[0]);
    opt.step(lr);
    out.push_back(p.value[0]);
  }
  return out;
}

// Independent scalar transcriptions of the published update rules.
inline std::vector<double> oracle_trace(const OptimizerSpec& s, double w, int steps, double lr) {
  std::vector<double> out;
  double m = 0, v = 0, u = 0, acc = 0, acc_delta = 0, buf = 0;
  for (int t = 1; t <= steps; ++t) {
    double g = grad_at(w);
    switch (s.kind) {
      case OptimizerKind::SGD:
        g = g + s.weight_decay * w;
        if (s.momentum != 0) {
          buf = (t == 1) ? g : s.momentum * buf + g;
          g = buf;
        }
        w = w - lr * g;
        break;
      case OptimizerKind::Adam:
        g = g + s.weight_decay * w;
        m = s.beta1 * m + (1 - s.beta1) * g;
        v = s.beta2 * v + (1 - s.beta2) * g * g;
        w = w - lr * (m / (1 - std::pow(s.beta1, t))) / (std::sqrt(v / (1 - std::pow(s.beta2, t))) + s.eps);
        break;
      case OptimizerKind::AdamW:
        w = w * (1 - lr * s.weight_decay);
        m = s.beta1 * m + (1 - s.beta1) * g;
        v = s.beta2 * v + (1 - s.beta2) * g * g;
        w = w - lr * (m / (1 - std::pow(s.beta1, t))) / (std::sqrt(v / (1 - std::pow(s.beta2, t))) + s.eps);
        break;
      case OptimizerKind::Adamax:
        g = g + s.weight_decay * w;
        m = s.beta1 * m + (1 - s.beta1) * g;
        u = std::max(s.beta2 * u, std::abs(g) + s.eps);
        w = w - (lr / (1 - std::pow(s.beta1, t))) * m / u;
        break;
      case OptimizerKind::Adagrad:
        g = g + s.weight_decay * w;
        acc = acc + g * g;
        w = w - lr * g / (std::sqrt(acc) + s.eps);
        break;
      case OptimizerKind::Adadelta: {
        g = g + s.weight_decay * w;
        acc = s.rho * acc + (1 - s.rho) * g * g;
        const double d = std::sqrt(acc_delta + s.eps) / std::sqrt(acc + s.eps) * g;
        acc_delta = s.rho * acc_delta + (1 - s.rho) * d * d;
        w = w - lr * d;
        break;
      }
      case OptimizerKind::RMSprop: {
        g = g + s.weight_decay * w;
        v = s.rho * v + (1 - s.rho) * g * g;
        const double step = g / (std::sqrt(v) + s.eps);
        if (s.momentum > 0) {
          buf = s.momentum * buf + step;
          w = w - lr * buf;
        } else {
          w = w - lr * step;
        }
        break;
      }
    }
    out.push_back(w);
  }
  return out;
}

}  // namespace tsf::testing
