#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/rng.hpp"
#include "tsf/tensor.hpp"

namespace tsf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

struct GradCheck {
  double worst = 0.0;  // largest relative error seen
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;

  bool ok() const { return failures == 0 && checked > 0; }
};

// Relative error with the tolerance band used throughout: 1e-4, loosened to
// 1e-3 when the analytic value is below 1e-6; values both under 1e-10 pass.
inline void compare(GradCheck& r, double analytic, double numeric, const std::string& where, double tol = 1e-4,
                    double small_tol = 1e-3) {
  ++r.checked;
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-10) return;
  const double rel = std::abs(analytic - numeric) / scale;
  r.worst = std::max(r.worst, rel);
  const double limit = std::abs(analytic) < 1e-6 ? small_tol : tol;
  if (rel > limit) {
    if (r.failures++ == 0) {
      r.first_failure = where + ": analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
    }
  }
}

using LeafFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Checks d/dx sum(f(x) * R) for every element of every input, R a fixed random weighting.
inline GradCheck check_leaves(const LeafFn& f, std::vector<Tensor> inputs, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor weights;
  auto loss_value = [&](const std::vector<Tensor>& xs) {
    Graph g(false);
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(g.leaf(x, false));
    const Tensor& out = f(g, leaves).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  };

  Graph g;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(g.leaf(x));
  const Var out = f(g, leaves);
  weights = random_tensor(out.shape(), rng, 0.5, 1.5);
  const Var loss = ad::sum(ad::mul(out, g.constant(weights)));
  g.backward(loss);

  GradCheck r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor* grad = g.grad_of(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = loss_value(inputs);
      inputs[k][i] = orig - h;
      const double down = loss_value(inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2 * h);
      compare(r, grad ? (*grad)[i] : 0.0, numeric, "input " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

// Same check against Parameter objects; `loss` must rebuild the scalar loss on the given graph.
inline GradCheck check_params(const std::function<Var(Graph&)>& loss, const std::vector<Parameter*>& params,
                              double h = 1e-5, std::size_t max_per_param = 0) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  auto value = [&] {
    Graph g(false);
    return loss(g).value().item();
  };
  GradCheck r;
  for (Parameter* p : params) {
    const std::size_t n = max_per_param == 0 ? p->value.size() : std::min(max_per_param, p->value.size());
    const std::size_t stride = std::max<std::size_t>(1, p->value.size() / std::max<std::size_t>(n, 1));
    for (std::size_t c = 0, i = 0; c < n && i < p->value.size(); ++c, i += stride) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = value();
      p->value[i] = orig - h;
      const double down = value();
      p->value[i] = orig;
      compare(r, p->grad[i], (up - down) / (2 * h), p->name + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

}  // namespace tsf::testing
