// tsf: train, sweep, compare and predict from the command line.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tsf/checkpoint.hpp"
#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/experiment/config.hpp"
#include "tsf/experiment/output.hpp"
#include "tsf/experiment/sweep.hpp"
#include "tsf/experiment/trial.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct CommonArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> threads;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "flat key = value config file");
  cmd->add_option("--data", a.data, "daily series (.csv or .json)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seed", a.seed, "base seed; trial i uses seed + i");
  cmd->add_option("--trials", a.trials, "trials per cell");
  cmd->add_option("--threads", a.threads, "worker threads for independent trials");
  cmd->add_option("--set", a.sets, "override a config key (key=value), repeatable");
  cmd->add_flag("-q,--quiet", a.quiet, "no per-trial progress lines");
}

// Precedence: --set > dedicated flags > config file > defaults.
tsf::ExperimentConfig resolve(const CommonArgs& a) {
  tsf::ExperimentConfig cfg;
  if (!a.config.empty()) cfg.load_file(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.out.empty()) cfg.out = a.out;
  if (a.seed) cfg.seed = *a.seed;
  if (a.trials) cfg.trials = *a.trials;
  if (a.threads) cfg.threads = *a.threads;
  for (const auto& s : a.sets) cfg.apply_override(s);
  cfg.validate();
  if (cfg.data.empty()) throw tsf::ConfigError("no data file given (--data or data = ...)");
  return cfg;
}

tsf::ProgressFn progress(bool quiet) {
  if (quiet) return {};
  return [](const tsf::SweepCell& cell, const tsf::TrialRow& row) {
    std::clog << "[" << cell.value << " " << cell.placement << "] trial " << row.trial << " seed " << row.seed << ": ";
    if (row.ok()) std::clog << "mape " << row.mape << " (" << static_cast<long long>(row.wall_ms) << " ms)\n";
    else std::clog << row.status << '\n';
  };
}

int finish(const tsf::SweepResult& r, const tsf::ExperimentConfig& cfg) {
  const auto files = tsf::emit_outputs(r, cfg.out, cfg.plot);
  for (const auto& cell : r.cells) {
    std::cout << r.axis << "=" << cell.value << " " << cell.placement << ": mean_mape " << cell.mean_mape
              << " std_mape " << cell.std_mape;
    if (r.axis == "model") std::cout << " best_mape " << cell.best_mape;
    std::cout << (cell.best ? "  *" : "") << '\n';
  }
  std::cout << "wrote " << files.size() << " files to " << cfg.out << '\n';
  bool diverged = false, failed = false;
  for (const auto& cell : r.cells)
    for (const auto& t : cell.trials) {
      diverged |= t.status.starts_with("diverged");
      failed |= !t.ok();
    }
  if (diverged) return kDiverged;
  return failed ? kData : kOk;
}

int cmd_train(const CommonArgs& a) {
  const auto cfg = resolve(a);
  const auto records = tsf::ingest(cfg.data, cfg.data_format());
  const auto ds = tsf::make_dataset(records, cfg.dataset_options());

  tsf::SweepResult r{"none", {}};
  tsf::SweepCell cell;
  cell.value = "-";
  cell.placement = cfg.is_baseline() ? "-" : std::string(tsf::to_string(cfg.transformer.norm_placement));
  std::optional<tsf::TrialResult> best;
  const auto report = progress(a.quiet);
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    tsf::TrialRow row;
    row.trial = t;
    row.seed = cfg.seed + t;
    row.epochs = cfg.effective_epochs();
    try {
      auto res = tsf::run_trial(cfg, ds, row.seed, t);
      row.mape = res.report.mape;
      row.wall_ms = res.wall_ms;
      row.report = res.report;
      if (!best || res.report.mape < best->report.mape) best = std::move(res);
    } catch (const tsf::DivergedError& e) {
      row.status = "diverged@epoch" + std::to_string(e.epoch());
    }
    cell.trials.push_back(row);
    if (report) report(cell, cell.trials.back());
  }
  tsf::detail::summarize(cell, cfg.std_kind);
  r.cells.push_back(std::move(cell));
  tsf::detail::flag_best(r.cells, false);
  const int code = finish(r, cfg);
  if (best) {
    const fs::path ck = fs::path(cfg.out) / "model.ckpt";
    tsf::save_checkpoint(ck.string(), tsf::make_checkpoint(cfg, *best->model, ds.norm, best->report.seed));
    std::ofstream hist(fs::path(cfg.out) / "history.csv");
    hist << "epoch,train_mse,eval_mse\n";
    for (std::size_t e = 0; e < best->history.train_loss.size(); ++e) {
      hist << e + 1 << ',' << tsf::format_real(best->history.train_loss[e]) << ','
           << (e < best->history.eval_loss.size() ? tsf::format_real(best->history.eval_loss[e]) : "") << '\n';
    }
    std::cout << "checkpoint " << ck.string() << " (seed " << best->report.seed << ", mape " << best->report.mape
              << ")\n";
  }
  return code;
}

int cmd_sweep(const CommonArgs& a, const std::string& axis_flag, const std::vector<std::string>& values_flag,
              const std::string& placements_flag) {
  auto cfg = resolve(a);
  if (!axis_flag.empty()) cfg.sweep_axis = axis_flag;
  if (!values_flag.empty()) cfg.sweep_values = values_flag;
  if (!placements_flag.empty()) cfg.set("placements", placements_flag);
  if (cfg.sweep_axis.empty()) throw tsf::ConfigError("no sweep axis (--axis or sweep_axis = ...)");
  const auto records = tsf::ingest(cfg.data, cfg.data_format());
  const auto r = tsf::run_sweep(cfg, records, cfg.sweep_axis, cfg.sweep_values, cfg.placements, progress(a.quiet));
  return finish(r, cfg);
}

int cmd_compare(const CommonArgs& a, std::optional<std::size_t> k) {
  auto cfg = resolve(a);
  if (k) cfg.best_of_k = *k;
  const auto records = tsf::ingest(cfg.data, cfg.data_format());
  const auto r = tsf::compare_models(cfg, records, progress(a.quiet));
  return finish(r, cfg);
}

int cmd_predict(const std::string& checkpoint, const std::string& data, const std::string& out_dir, bool plot) {
  const auto restored = tsf::restore_checkpoint(tsf::load_checkpoint(checkpoint));
  const auto& cfg = restored.config;
  const std::string path = data.empty() ? cfg.data : data;
  if (path.empty()) throw tsf::ConfigError("no data file given (--data)");
  const auto records = tsf::ingest(path);
  const auto ds = tsf::make_dataset(records, cfg.dataset_options(), &restored.norm);
  auto& model = *restored.model;

  const auto report = tsf::evaluate_test(model, ds, 0, 0);
  const fs::path out = out_dir.empty() ? fs::path(cfg.out) : fs::path(out_dir);
  fs::create_directories(out);
  const auto band = tsf::band_of(report);
  tsf::write_predictions_csv(band, out / "predictions_predict.csv");
  if (plot) tsf::write_svg(band, "predict", out / "plot_predict.svg");

  // Forecast past the last observed day from the final lag window.
  const std::size_t lag = model.time_lag(), h = model.horizon();
  tsf::Tensor window(tsf::Shape{lag, ds.raw.cols()});
  for (std::size_t i = 0; i < lag; ++i)
    for (std::size_t f = 0; f < ds.raw.cols(); ++f) window(i, f) = ds.raw(ds.raw.rows() - lag + i, f);
  const auto future = tsf::predict_multistep(model, window, h, restored.norm);
  std::ofstream fc(out / "forecast.csv");
  if (!fc) throw tsf::DataError("cannot write '" + (out / "forecast.csv").string() + "'");
  fc << "date,predicted\n";
  for (std::size_t i = 0; i < h; ++i) {
    fc << tsf::format_date(ds.dates.back() + std::chrono::days(i + 1)) << ',' << tsf::format_real(future[i]) << '\n';
  }
  std::cout << "test mape " << report.mape << " over " << report.days.size() << " days\n";
  for (std::size_t i = 0; i < h; ++i)
    std::cout << tsf::format_date(ds.dates.back() + std::chrono::days(i + 1)) << " " << future[i] << '\n';
  return kOk;
}

int cmd_synth(std::size_t days, std::uint64_t seed, double base, const std::string& out) {
  const auto recs = tsf::synthetic_series(days, seed, base);
  std::ofstream f(out);
  if (!f) throw tsf::DataError("cannot write '" + out + "'");
  tsf::write_csv(f, recs);
  std::cout << "wrote " << days << " days to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer and recurrent forecasting of daily case counts"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, compare_args;
  auto* train = app.add_subcommand("train", "train one configuration, write predictions and a checkpoint");
  add_common(train, train_args);

  auto* sweep = app.add_subcommand("sweep", "grid over one hyperparameter axis");
  add_common(sweep, sweep_args);
  std::string axis, placements;
  std::vector<std::string> values;
  sweep->add_option("--axis", axis, "d_model, enc_dec_blocks, dims, time_lag, horizon, optimizer or n_features");
  sweep->add_option("--values", values, "axis values")->delimiter(',');
  sweep->add_option("--placements", placements, "comma list of pre/post");

  auto* compare = app.add_subcommand("compare", "transformer vs LSTM vs RNN, best of k");
  add_common(compare, compare_args);
  std::optional<std::size_t> k;
  compare->add_option("-k,--best-of", k, "runs per model");

  auto* predict = app.add_subcommand("predict", "forecast with a saved checkpoint");
  std::string ckpt, pdata, pout;
  bool no_plot = false;
  predict->add_option("--checkpoint", ckpt, "checkpoint written by train")->required();
  predict->add_option("--data", pdata, "series to forecast from (default: the training data)");
  predict->add_option("--out", pout, "output directory");
  predict->add_flag("--no-plot", no_plot);

  auto* synth = app.add_subcommand("synth", "write a synthetic daily series");
  std::size_t days = 750;
  std::uint64_t sseed = 7;
  double base = 1000.0;
  std::string sout;
  synth->add_option("--days", days);
  synth->add_option("--seed", sseed);
  synth->add_option("--base", base);
  synth->add_option("--out", sout)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*sweep) return cmd_sweep(sweep_args, axis, values, placements);
    if (*compare) return cmd_compare(compare_args, k);
    if (*predict) return cmd_predict(ckpt, pdata, pout, !no_plot);
    if (*synth) return cmd_synth(days, sseed, base, sout);
  } catch (const tsf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const tsf::DivergedError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const tsf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const tsf::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
