#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "tsf/autodiff.hpp"
#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/layers.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

/// `count` windows stacked row-wise: inputs [count*lag x features], targets [count*horizon x 1].
struct Batch {
  Tensor inputs;
  Tensor targets;
  std::size_t count = 0;
};

inline Batch to_batch(const WindowSet& w) { return Batch{w.inputs, w.targets, w.count()}; }

/// Common contract of the transformer and the recurrent baselines.
/// All values are in normalized units; feature 0 is the forecast target.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string_view family() const = 0;
  virtual std::size_t time_lag() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::size_t n_features() const = 0;

  /// Training-time forward pass; returns predictions shaped like batch.targets.
  virtual Var forward(ForwardContext& ctx, const Batch& batch) = 0;

  /// Inference for `count` stacked windows; returns [count x horizon].
  virtual Tensor predict(const Tensor& inputs, std::size_t count) = 0;

  virtual std::vector<Parameter*> parameters() = 0;

  /// Forecast for a single [lag x features] window.
  std::vector<double> predict(const Tensor& window) {
    check_inputs(window, 1);
    const Tensor out = predict(window, 1);
    return out.values();
  }

  /// Training loss (mean squared error) for a batch.
  Var loss(ForwardContext& ctx, const Batch& batch) { return ad::mse_loss(forward(ctx, batch), batch.targets); }

 protected:
  void check_inputs(const Tensor& inputs, std::size_t count) const {
    if (inputs.rank() != 2 || inputs.rows() != count * time_lag() || inputs.cols() != n_features()) {
      throw ContractError(std::string(family()) + ": expected " + std::to_string(count) + " windows of " +
                          std::to_string(time_lag()) + "x" + std::to_string(n_features()) + ", got " +
                          to_string(inputs.shape()));
    }
  }
};

/// Denormalized multi-step forecast of one raw-unit window. The model must
/// have been built for exactly `horizon` outputs.
inline std::vector<double> predict_multistep(Forecaster& model, const Tensor& raw_window, std::size_t horizon,
                                             const NormalizationParams& norm) {
  if (model.horizon() != horizon) {
    throw ContractError("model forecasts " + std::to_string(model.horizon()) + " steps, requested " +
                        std::to_string(horizon));
  }
  Tensor scaled = raw_window;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t f = 0; f < scaled.cols(); ++f) scaled(i, f) = norm.normalize(raw_window(i, f), f);
  return denormalize(model.predict(scaled), norm, 0);
}

}  // namespace tsf
