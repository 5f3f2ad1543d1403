#pragma once

// Grid sweeps over one hyperparameter axis and the three-model comparison.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/experiment/config.hpp"
#include "tsf/experiment/trial.hpp"
#include "tsf/metrics.hpp"

namespace tsf {

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"d_model", "enc_dec_blocks", "dims",      "time_lag",
                                             "horizon", "optimizer",      "n_features"};
  return axes;
}

/// Column names of the table produced for an axis; composite values such as
/// `2-4` (encoder-decoder) or `100-50-50` (FFN-pre-post) get one column per part.
inline std::vector<std::string> axis_columns(const std::string& axis) {
  if (axis == "enc_dec_blocks") return {"encoder", "decoder"};
  if (axis == "dims") return {"ffn", "pre_layer", "post_layer"};
  if (axis == "horizon") return {"n_day_prediction"};
  return {axis};
}

/// Sets one sweep axis value on a config copy.
inline void apply_axis_value(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  const auto parts = split_list(value, '-');
  auto expect_parts = [&](std::size_t n) {
    if (parts.size() != n) {
      throw ConfigError("sweep value '" + value + "' for axis " + axis + " needs " + std::to_string(n) +
                        " '-'-separated parts");
    }
  };
  if (axis == "d_model") {
    cfg.set("d_model", value);
  } else if (axis == "enc_dec_blocks") {
    expect_parts(2);
    cfg.set("n_encoder_blocks", parts[0]);
    cfg.set("n_decoder_blocks", parts[1]);
  } else if (axis == "dims") {
    expect_parts(3);
    cfg.set("d_ff", parts[0]);
    cfg.set("d_prelayer", parts[1]);
    cfg.set("d_postlayer", parts[2]);
  } else if (axis == "time_lag") {
    cfg.set("time_lag", value);
  } else if (axis == "horizon") {
    cfg.set("horizon", value);
  } else if (axis == "optimizer") {
    cfg.set("optimizer", value);
  } else if (axis == "n_features") {
    cfg.set("n_features", value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
}

struct TrialRow {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double mape = std::numeric_limits<double>::quiet_NaN();
  std::size_t epochs = 0;
  double wall_ms = 0.0;
  std::string status = "ok";
  std::optional<EvalReport> report;

  bool ok() const { return status == "ok"; }
};

struct SweepCell {
  std::string value;
  std::string placement;
  std::vector<TrialRow> trials;
  double mean_mape = std::numeric_limits<double>::quiet_NaN();
  double std_mape = std::numeric_limits<double>::quiet_NaN();
  double best_mape = std::numeric_limits<double>::quiet_NaN();
  bool best = false;
  std::optional<AggregateReport> aggregate;

  /// Successful trial with the lowest MAPE.
  const TrialRow* best_trial() const {
    const TrialRow* b = nullptr;
    for (const auto& t : trials)
      if (t.ok() && (b == nullptr || t.mape < b->mape)) b = &t;
    return b;
  }
};

struct SweepResult {
  std::string axis;
  std::vector<SweepCell> cells;

  /// Table rows in configured order, one per axis value.
  std::vector<std::string> values() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
      if (std::find(out.begin(), out.end(), c.value) == out.end()) out.push_back(c.value);
    return out;
  }
};

/// Called after each finished trial (from worker threads, serialized).
using ProgressFn = std::function<void(const SweepCell& cell, const TrialRow& row)>;

namespace detail {

struct TrialJob {
  std::size_t cell = 0;
  std::size_t trial = 0;
  ExperimentConfig cfg;
};

inline std::string status_for(const std::exception& e) {
  if (const auto* d = dynamic_cast<const DivergedError*>(&e)) return "diverged@epoch" + std::to_string(d->epoch());
  std::string msg = e.what();
  for (char& c : msg)
    if (c == ',' || c == '\n' || c == '"') c = ' ';
  return "error:" + msg;
}

/// Runs all jobs on `threads` workers; each trial owns its own model and RNG.
inline void run_jobs(std::vector<SweepCell>& cells, std::vector<TrialJob>& jobs,
                     const std::vector<DailyRecord>& records, std::size_t threads, const ProgressFn& progress) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const TrialJob& job = jobs[j];
      TrialRow row;
      row.trial = job.trial;
      row.seed = job.cfg.seed + job.trial;
      row.epochs = job.cfg.effective_epochs();
      try {
        const WindowedDataset ds = make_dataset(records, job.cfg.dataset_options());
        TrialResult r = run_trial(job.cfg, ds, row.seed, job.trial);
        row.mape = r.report.mape;
        row.wall_ms = r.wall_ms;
        row.report = std::move(r.report);
      } catch (const std::exception& e) {
        row.status = status_for(e);
      }
      std::lock_guard lock(mu);
      cells[job.cell].trials[job.trial] = row;
      if (progress) progress(cells[job.cell], cells[job.cell].trials[job.trial]);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline void summarize(SweepCell& cell, StdKind kind) {
  std::vector<EvalReport> reports;
  for (const auto& t : cell.trials)
    if (t.ok()) reports.push_back(*t.report);
  if (reports.empty()) return;
  cell.aggregate = aggregate(reports, kind);
  cell.mean_mape = cell.aggregate->mean_mape;
  cell.std_mape = cell.aggregate->std_mape;
  cell.best_mape = cell.best_trial()->mape;
}

inline void flag_best(std::vector<SweepCell>& cells, bool by_best_trial) {
  SweepCell* best = nullptr;
  for (auto& c : cells) {
    const double score = by_best_trial ? c.best_mape : c.mean_mape;
    if (std::isnan(score)) continue;
    if (best == nullptr || score < (by_best_trial ? best->best_mape : best->mean_mape)) best = &c;
  }
  if (best != nullptr) best->best = true;
}

}  // namespace detail

/// Cross product of axis values and norm placements, `cfg.trials` seeded
/// trials per cell (seed = cfg.seed + trial index). Every value is validated
/// before any training starts. Failed trials are kept as rows with a status marker.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<DailyRecord>& records,
                             const std::string& axis, const std::vector<std::string>& values,
                             std::vector<NormPlacement> placements, const ProgressFn& progress = {}) {
  const auto& axes = sweep_axes();
  if (std::find(axes.begin(), axes.end(), axis) == axes.end()) throw ConfigError("unknown sweep axis '" + axis + "'");
  if (values.empty()) throw ConfigError("sweep axis " + axis + " has no values");
  if (placements.empty()) placements.push_back(cfg.transformer.norm_placement);

  SweepResult result{axis, {}};
  std::vector<detail::TrialJob> jobs;
  for (const auto& value : values) {
    for (NormPlacement pl : placements) {
      ExperimentConfig c = cfg;
      c.transformer.norm_placement = pl;
      try {
        apply_axis_value(c, axis, value);
        c.validate();
        (void)make_dataset(records, c.dataset_options());
      } catch (const ConfigError& e) {
        throw ConfigError("sweep " + axis + "=" + value + ": " + e.what());
      } catch (const ContractError& e) {
        throw ConfigError("sweep " + axis + "=" + value + ": " + e.what());
      }
      SweepCell cell;
      cell.value = value;
      cell.placement = std::string(to_string(pl));
      cell.trials.resize(c.trials);
      for (std::size_t t = 0; t < c.trials; ++t) jobs.push_back({result.cells.size(), t, c});
      result.cells.push_back(std::move(cell));
    }
  }
  detail::run_jobs(result.cells, jobs, records, cfg.threads, progress);
  for (auto& c : result.cells) detail::summarize(c, cfg.std_kind);
  detail::flag_best(result.cells, false);
  return result;
}

/// Transformer (configured placement), LSTM and RNN, each trained best_of_k
/// times; the per-model best trial is the reported result.
inline SweepResult compare_models(const ExperimentConfig& cfg, const std::vector<DailyRecord>& records,
                                  const ProgressFn& progress = {}) {
  SweepResult result{"model", {}};
  std::vector<detail::TrialJob> jobs;
  for (ModelFamily m : {ModelFamily::Transformer, ModelFamily::Lstm, ModelFamily::Rnn}) {
    ExperimentConfig c = cfg;
    c.model = m;
    c.trials = cfg.best_of_k;
    c.validate();
    SweepCell cell;
    cell.value = std::string(to_string(m));
    cell.placement = m == ModelFamily::Transformer ? std::string(to_string(c.transformer.norm_placement)) : "-";
    cell.trials.resize(c.best_of_k);
    for (std::size_t t = 0; t < c.best_of_k; ++t) jobs.push_back({result.cells.size(), t, c});
    result.cells.push_back(std::move(cell));
  }
  detail::run_jobs(result.cells, jobs, records, cfg.threads, progress);
  for (auto& c : result.cells) detail::summarize(c, cfg.std_kind);
  detail::flag_best(result.cells, true);
  return result;
}

/// A single cell of `cfg.trials` trials with the configuration as given.
inline SweepResult run_repeated(const ExperimentConfig& cfg, const std::vector<DailyRecord>& records,
                                const ProgressFn& progress = {}) {
  cfg.validate();
  SweepResult result{"none", {}};
  SweepCell cell;
  cell.value = "-";
  cell.placement = cfg.model == ModelFamily::Transformer ? std::string(to_string(cfg.transformer.norm_placement)) : "-";
  cell.trials.resize(cfg.trials);
  result.cells.push_back(std::move(cell));
  std::vector<detail::TrialJob> jobs;
  for (std::size_t t = 0; t < cfg.trials; ++t) jobs.push_back({0, t, cfg});
  detail::run_jobs(result.cells, jobs, records, cfg.threads, progress);
  detail::summarize(result.cells[0], cfg.std_kind);
  detail::flag_best(result.cells, false);
  return result;
}

}  // namespace tsf
