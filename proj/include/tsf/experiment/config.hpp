#pragma once

// Experiment configuration.
//
// File grammar: one `key = value` per line; `#` starts a comment; blank lines
// are ignored; surrounding whitespace is trimmed; a repeated key overrides the
// earlier one. Command-line `--set key=value` overrides are applied after the
// file, so precedence is CLI > file > built-in defaults.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/layers.hpp"
#include "tsf/metrics.hpp"
#include "tsf/models/recurrent.hpp"
#include "tsf/models/transformer.hpp"
#include "tsf/optim.hpp"

namespace tsf {

enum class ModelFamily { Transformer, Rnn, Lstm };

inline std::string_view to_string(ModelFamily m) {
  switch (m) {
    case ModelFamily::Transformer: return "transformer";
    case ModelFamily::Rnn: return "rnn";
    case ModelFamily::Lstm: return "lstm";
  }
  return "?";
}

inline ModelFamily parse_model(std::string_view s) {
  if (s == "transformer") return ModelFamily::Transformer;
  if (s == "rnn") return ModelFamily::Rnn;
  if (s == "lstm") return ModelFamily::Lstm;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected transformer, rnn or lstm)");
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const std::string item = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + std::string(key) + "': '" + std::string(v) + "' is not a non-negative integer");
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ConfigError("key '" + std::string(key) + "': '" + s + "' is not a number");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': '" + std::string(v) + "' is not a boolean");
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ExperimentConfig {
  std::string data;
  std::string format = "auto";
  std::string out = "out";

  ModelFamily model = ModelFamily::Transformer;
  TransformerConfig transformer;
  std::size_t hidden_size = 16;

  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<double> lr;  // unset: 1.0 for the transformer, baseline_lr for baselines
  std::optional<double> beta1, beta2, eps, weight_decay, momentum, rho;
  SchedulerKind scheduler = SchedulerKind::WarmupInvSqrt;
  std::size_t warmup_steps = 60;  // sized for full-batch steps: one step per epoch

  std::size_t epochs = 300;
  std::size_t baseline_epochs = 2000;
  double baseline_lr = 0.01;
  std::size_t batch_size = 0;  // 0 = full batch

  std::size_t trials = 1;
  std::uint64_t seed = 42;
  std::size_t best_of_k = 10;
  std::size_t threads = 1;

  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  std::vector<NormPlacement> placements;  // empty: the configured norm_placement only

  std::size_t test_days = 60;
  double train_frac = 0.70;
  StdKind std_kind = StdKind::Population;
  bool plot = true;
  std::size_t log_every = 0;

  bool is_baseline() const { return model != ModelFamily::Transformer; }

  std::size_t effective_epochs() const { return is_baseline() ? baseline_epochs : epochs; }

  OptimizerSpec optimizer_spec() const {
    OptimizerSpec s = OptimizerSpec::defaults(is_baseline() ? OptimizerKind::Adam : optimizer);
    s.base_lr = is_baseline() ? baseline_lr : lr.value_or(1.0);
    if (!is_baseline()) {
      if (beta1) s.beta1 = *beta1;
      if (beta2) s.beta2 = *beta2;
      if (eps) s.eps = *eps;
      if (weight_decay) s.weight_decay = *weight_decay;
      if (momentum) s.momentum = *momentum;
      if (rho) s.rho = *rho;
    }
    return s;
  }

  SchedulerSpec scheduler_spec() const {
    if (is_baseline()) return SchedulerSpec{SchedulerKind::Constant, transformer.d_model, warmup_steps};
    return SchedulerSpec{scheduler, transformer.d_model, warmup_steps};
  }

  RecurrentConfig recurrent() const {
    return RecurrentConfig{hidden_size, transformer.time_lag, transformer.horizon, transformer.n_features};
  }

  DatasetOptions dataset_options() const {
    return DatasetOptions{transformer.time_lag, transformer.horizon, transformer.n_features, test_days, train_frac};
  }

  DataFormat data_format() const { return format == "auto" ? format_from_path(data) : parse_format(format); }

  void set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto& t = transformer;
    if (key == "data") data = v;
    else if (key == "format") {
      if (v != "auto") parse_format(v);
      format = v;
    } else if (key == "out") out = v;
    else if (key == "model") model = parse_model(v);
    else if (key == "d_model") t.d_model = parse_size(key, v);
    else if (key == "n_encoder_blocks") t.n_encoder_blocks = parse_size(key, v);
    else if (key == "n_decoder_blocks") t.n_decoder_blocks = parse_size(key, v);
    else if (key == "n_heads") t.n_heads = parse_size(key, v);
    else if (key == "d_ff") t.d_ff = parse_size(key, v);
    else if (key == "d_prelayer") t.d_prelayer = parse_size(key, v);
    else if (key == "d_postlayer") t.d_postlayer = parse_size(key, v);
    else if (key == "dropout") t.dropout = parse_real(key, v);
    else if (key == "attention_dropout") t.attention_dropout = parse_real(key, v);
    else if (key == "norm_placement") t.norm_placement = parse_placement(v);
    else if (key == "time_lag") t.time_lag = parse_size(key, v);
    else if (key == "horizon") t.horizon = parse_size(key, v);
    else if (key == "n_features") t.n_features = parse_size(key, v);
    else if (key == "decoder_inference") t.inference = parse_decoder_inference(v);
    else if (key == "layer_norm_eps") t.layer_norm_eps = parse_real(key, v);
    else if (key == "hidden_size") hidden_size = parse_size(key, v);
    else if (key == "optimizer") optimizer = parse_optimizer(v);
    else if (key == "lr") lr = parse_real(key, v);
    else if (key == "beta1") beta1 = parse_real(key, v);
    else if (key == "beta2") beta2 = parse_real(key, v);
    else if (key == "eps") eps = parse_real(key, v);
    else if (key == "weight_decay") weight_decay = parse_real(key, v);
    else if (key == "momentum") momentum = parse_real(key, v);
    else if (key == "rho") rho = parse_real(key, v);
    else if (key == "scheduler") scheduler = parse_scheduler(v);
    else if (key == "warmup_steps") warmup_steps = parse_size(key, v);
    else if (key == "epochs") epochs = parse_size(key, v);
    else if (key == "baseline_epochs") baseline_epochs = parse_size(key, v);
    else if (key == "baseline_lr") baseline_lr = parse_real(key, v);
    else if (key == "batch_size") batch_size = parse_size(key, v);
    else if (key == "trials") trials = parse_size(key, v);
    else if (key == "seed") seed = parse_size(key, v);
    else if (key == "best_of_k") best_of_k = parse_size(key, v);
    else if (key == "threads") threads = parse_size(key, v);
    else if (key == "sweep_axis") sweep_axis = v;
    else if (key == "sweep_values") sweep_values = split_list(v);
    else if (key == "placements") {
      placements.clear();
      for (const auto& p : split_list(v)) placements.push_back(parse_placement(p));
    } else if (key == "test_days") test_days = parse_size(key, v);
    else if (key == "train_frac") train_frac = parse_real(key, v);
    else if (key == "std") {
      if (v == "population") std_kind = StdKind::Population;
      else if (v == "sample") std_kind = StdKind::Sample;
      else throw ConfigError("key 'std': expected population or sample");
    } else if (key == "plot") plot = parse_bool(key, v);
    else if (key == "log_every") log_every = parse_size(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  /// Applies a `key=value` override.
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    }
    set(trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
  }

  void load_text(std::istream& in, const std::string& origin = "config") {
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string content = trim(line);
      if (content.empty()) continue;
      const auto eq = content.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      }
      try {
        set(trim(content.substr(0, eq)), content.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    load_text(in, path);
  }

  void validate() const {
    transformer.validate();
    recurrent().validate();
    optimizer_spec().validate();
    if (effective_epochs() == 0) throw ConfigError("epochs must be at least 1");
    if (trials == 0) throw ConfigError("trials must be at least 1");
    if (best_of_k == 0) throw ConfigError("best_of_k must be at least 1");
    if (warmup_steps == 0) throw ConfigError("warmup_steps must be at least 1");
    if (test_days == 0) throw ConfigError("test_days must be at least 1");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
    if (!(baseline_lr > 0.0)) throw ConfigError("baseline_lr must be positive");
  }

  /// Every setting as key/value pairs, in a form accepted by set().
  std::map<std::string, std::string> to_kv() const {
    const auto& t = transformer;
    std::map<std::string, std::string> kv{
        {"data", data},
        {"format", format},
        {"model", std::string(to_string(model))},
        {"d_model", std::to_string(t.d_model)},
        {"n_encoder_blocks", std::to_string(t.n_encoder_blocks)},
        {"n_decoder_blocks", std::to_string(t.n_decoder_blocks)},
        {"n_heads", std::to_string(t.n_heads)},
        {"d_ff", std::to_string(t.d_ff)},
        {"d_prelayer", std::to_string(t.d_prelayer)},
        {"d_postlayer", std::to_string(t.d_postlayer)},
        {"dropout", format_real(t.dropout)},
        {"attention_dropout", format_real(t.attention_dropout)},
        {"norm_placement", std::string(to_string(t.norm_placement))},
        {"time_lag", std::to_string(t.time_lag)},
        {"horizon", std::to_string(t.horizon)},
        {"n_features", std::to_string(t.n_features)},
        {"decoder_inference", std::string(to_string(t.inference))},
        {"layer_norm_eps", format_real(t.layer_norm_eps)},
        {"hidden_size", std::to_string(hidden_size)},
        {"optimizer", std::string(to_string(optimizer))},
        {"scheduler", std::string(to_string(scheduler))},
        {"warmup_steps", std::to_string(warmup_steps)},
        {"epochs", std::to_string(epochs)},
        {"baseline_epochs", std::to_string(baseline_epochs)},
        {"baseline_lr", format_real(baseline_lr)},
        {"batch_size", std::to_string(batch_size)},
        {"test_days", std::to_string(test_days)},
        {"train_frac", format_real(train_frac)},
    };
    auto opt = [&](const char* k, const std::optional<double>& v) {
      if (v) kv[k] = format_real(*v);
    };
    opt("lr", lr);
    opt("beta1", beta1);
    opt("beta2", beta2);
    opt("eps", eps);
    opt("weight_decay", weight_decay);
    opt("momentum", momentum);
    opt("rho", rho);
    return kv;
  }
};

}  // namespace tsf
