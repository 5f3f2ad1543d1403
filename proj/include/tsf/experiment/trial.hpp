#pragma once

// One seeded train + evaluate run.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "tsf/checkpoint.hpp"
#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/experiment/config.hpp"
#include "tsf/metrics.hpp"
#include "tsf/models/forecaster.hpp"
#include "tsf/models/recurrent.hpp"
#include "tsf/models/transformer.hpp"
#include "tsf/optim.hpp"
#include "tsf/rng.hpp"

namespace tsf {

inline std::unique_ptr<Forecaster> make_forecaster(const ExperimentConfig& cfg, Rng& rng) {
  switch (cfg.model) {
    case ModelFamily::Transformer: return std::make_unique<DeepTransformer>(cfg.transformer, rng);
    case ModelFamily::Rnn: return std::make_unique<RnnForecaster>(cfg.recurrent(), rng, "rnn");
    case ModelFamily::Lstm: return std::make_unique<LstmForecaster>(cfg.recurrent(), rng, "lstm");
  }
  throw ConfigError("unknown model family");
}

struct TrainingHistory {
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> eval_loss;   // eval-split MSE per epoch (empty if no eval windows)
};

/// Mean squared error in eval mode (no dropout) with teacher forcing.
inline double evaluate_mse(Forecaster& model, const WindowSet& windows) {
  if (windows.count() == 0) return 0.0;
  Graph g(false);
  ForwardContext ctx{g, false, nullptr};
  return model.loss(ctx, to_batch(windows)).value().item();
}

struct TrainOptions {
  std::size_t epochs = 300;
  std::size_t batch_size = 0;  // 0 = full batch
  OptimizerSpec optimizer;
  SchedulerSpec scheduler;
  std::size_t log_every = 0;
};

/// Mini-batch training with a fresh tape per step. Throws DivergedError on a
/// non-finite loss or gradient.
inline TrainingHistory train(Forecaster& model, const WindowSet& train_set, const WindowSet* eval_set,
                             const TrainOptions& opt, Rng& rng) {
  if (opt.epochs == 0) throw ConfigError("epochs must be at least 1");
  if (train_set.count() == 0) throw ContractError("no training windows");
  const auto params = model.parameters();
  Optimizer optimizer(opt.optimizer, params);
  zero_grads(params);

  const std::size_t n = train_set.count();
  const std::size_t bs = opt.batch_size == 0 ? n : std::min(opt.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Batch full = to_batch(train_set);

  TrainingHistory hist;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (bs < n) rng.shuffle(std::span<std::size_t>(order));
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      const Batch batch = bs == n ? full : to_batch(train_set.subset(std::span(order).subspan(start, len)));
      Graph g;
      ForwardContext ctx{g, true, &rng};
      double lv = 0.0;
      try {
        const Var loss = model.loss(ctx, batch);
        lv = loss.value().item();
        if (!std::isfinite(lv)) throw DivergedError(epoch, "non-finite training loss");
        g.backward(loss);
        optimizer.step(lr_at(opt.scheduler, optimizer.steps() + 1, opt.optimizer.base_lr));
      } catch (const NumericError& e) {
        // blown-up weights surface as non-finite values inside the forward pass too
        throw DivergedError(epoch, e.what());
      }
      zero_grads(params);
      weighted += lv * static_cast<double>(len);
    }
    hist.train_loss.push_back(weighted / static_cast<double>(n));
    if (eval_set != nullptr && eval_set->count() > 0) {
      try {
        hist.eval_loss.push_back(evaluate_mse(model, *eval_set));
      } catch (const NumericError& e) {
        throw DivergedError(epoch, e.what());
      }
    }
    if (opt.log_every > 0 && epoch % opt.log_every == 0) {
      std::clog << "epoch " << epoch << " train_mse " << hist.train_loss.back();
      if (!hist.eval_loss.empty()) std::clog << " eval_mse " << hist.eval_loss.back();
      std::clog << '\n';
    }
  }
  return hist;
}

/// Forecasts every test day `horizon` steps ahead and scores them in raw units.
inline EvalReport evaluate_test(Forecaster& model, const WindowedDataset& ds, std::size_t trial_id,
                                std::uint64_t seed) {
  const std::size_t h = model.horizon();
  const Tensor out = model.predict(ds.test.inputs, ds.test.count());
  std::vector<DayPrediction> days;
  days.reserve(ds.test.count());
  for (std::size_t i = 0; i < ds.test.count(); ++i) {
    const std::size_t day = ds.test.target_start[i] + h - 1;
    days.push_back({ds.dates[day], ds.actual(day), ds.norm.denormalize(out(i, h - 1), 0)});
  }
  return make_report(std::move(days), trial_id, seed);
}

struct TrialResult {
  EvalReport report;
  TrainingHistory history;
  std::size_t epochs = 0;
  double wall_ms = 0.0;
  std::unique_ptr<Forecaster> model;
};

inline TrainOptions train_options(const ExperimentConfig& cfg) {
  return TrainOptions{cfg.effective_epochs(), cfg.batch_size, cfg.optimizer_spec(), cfg.scheduler_spec(),
                      cfg.log_every};
}

/// Builds, trains and evaluates one model. Fully determined by (cfg, dataset, seed).
inline TrialResult run_trial(const ExperimentConfig& cfg, const WindowedDataset& ds, std::uint64_t seed,
                             std::size_t trial_id = 0) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  TrialResult r;
  r.model = make_forecaster(cfg, rng);
  r.history = train(*r.model, ds.train, &ds.eval, train_options(cfg), rng);
  r.epochs = cfg.effective_epochs();
  r.report = evaluate_test(*r.model, ds, trial_id, seed);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Model parameters, normalization statistics and the producing config in one container.
inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, Forecaster& model, const NormalizationParams& norm,
                                  std::uint64_t seed) {
  Checkpoint ck;
  ck.header = cfg.to_kv();
  ck.header["family"] = std::string(model.family());
  ck.header["seed"] = std::to_string(seed);
  for (Parameter* p : model.parameters()) ck.arrays.emplace_back(p->name, p->value);
  ck.arrays.emplace_back("norm.min", Tensor(Shape{norm.min.size()}, norm.min));
  ck.arrays.emplace_back("norm.max", Tensor(Shape{norm.max.size()}, norm.max));
  ck.arrays.emplace_back("norm.range", Tensor::vector({norm.lower, norm.upper}));
  return ck;
}

struct RestoredModel {
  ExperimentConfig config;
  std::unique_ptr<Forecaster> model;
  NormalizationParams norm;
};

inline RestoredModel restore_checkpoint(const Checkpoint& ck) {
  RestoredModel r;
  for (const auto& [k, v] : ck.header) {
    if (k == "family" || k == "seed") continue;
    r.config.set(k, v);
  }
  Rng rng(0);
  r.model = make_forecaster(r.config, rng);
  for (Parameter* p : r.model->parameters()) {
    const Tensor& t = ck.array(p->name);
    if (t.shape() != p->value.shape()) {
      throw DataError("checkpoint array '" + p->name + "' has shape " + to_string(t.shape()) + ", model expects " +
                      to_string(p->value.shape()));
    }
    p->value = t;
  }
  r.norm.min = ck.array("norm.min").values();
  r.norm.max = ck.array("norm.max").values();
  r.norm.lower = ck.array("norm.range")[0];
  r.norm.upper = ck.array("norm.range")[1];
  r.norm.validate();
  return r;
}

}  // namespace tsf
