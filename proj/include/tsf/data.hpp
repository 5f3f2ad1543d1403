#pragma once

// Daily case-count ingestion, min-max scaling, chronological splitting and
// sliding-window construction.
//
// File formats
//   JSON: top-level array of {"date":"YYYY-MM-DD","positive":int,"deaths":int,"recovered":int}
//   CSV:  header `date,positive,deaths,recovered`, one row per day, LF line endings.
// Records must cover consecutive days; gaps and repeated dates are rejected.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tsf/error.hpp"
#include "tsf/rng.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

using Date = std::chrono::sys_days;

inline Date parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char extra = 0;
  const std::string text(s);
  if (s.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &extra) != 3 || s[4] != '-' ||
      s[7] != '-') {
    throw SchemaError("malformed date '" + text + "' (expected YYYY-MM-DD)");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw SchemaError("invalid calendar date '" + text + "'");
  return Date{ymd};
}

inline std::string format_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

struct DailyRecord {
  Date date;
  std::int64_t positive = 0;
  std::int64_t deaths = 0;
  std::int64_t recovered = 0;

  friend bool operator==(const DailyRecord&, const DailyRecord&) = default;
};

enum class DataFormat { Json, Csv };

inline DataFormat format_from_path(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "json") return DataFormat::Json;
  if (ext == "csv") return DataFormat::Csv;
  throw ConfigError("cannot infer data format from '" + path + "' (use .json or .csv)");
}

inline DataFormat parse_format(std::string_view s) {
  if (s == "json") return DataFormat::Json;
  if (s == "csv") return DataFormat::Csv;
  throw ConfigError("unknown data format '" + std::string(s) + "'");
}

/// Rejects repeated dates, out-of-order dates, gaps and negative counts.
inline void check_series(const std::vector<DailyRecord>& records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.positive < 0 || r.deaths < 0 || r.recovered < 0) {
      throw IntegrityError("negative count on " + format_date(r.date));
    }
    if (i == 0) continue;
    const auto step = (r.date - records[i - 1].date).count();
    if (step == 0) throw IntegrityError("duplicated date " + format_date(r.date));
    if (step < 0) throw IntegrityError("dates not increasing at " + format_date(r.date));
    if (step > 1) {
      throw IntegrityError("missing " + std::to_string(step - 1) + " day(s) before " + format_date(r.date));
    }
  }
}

namespace detail {

inline std::int64_t parse_count(std::string_view field, const std::string& where) {
  if (field.empty()) throw SchemaError(where + ": empty count");
  std::int64_t v = 0;
  for (char c : field) {
    if (c < '0' || c > '9') throw SchemaError(where + ": count '" + std::string(field) + "' is not a non-negative integer");
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace detail

inline std::vector<DailyRecord> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  if (line != "date,positive,deaths,recovered") {
    throw SchemaError("csv line 1: expected header 'date,positive,deaths,recovered', got '" + line + "'");
  }
  std::vector<DailyRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "csv line " + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 4) {
      throw SchemaError(where + ": expected 4 fields, got " + std::to_string(fields.size()));
    }
    DailyRecord r;
    try {
      r.date = parse_date(fields[0]);
    } catch (const SchemaError& e) {
      throw SchemaError(where + ": " + e.what());
    }
    r.positive = detail::parse_count(fields[1], where);
    r.deaths = detail::parse_count(fields[2], where);
    r.recovered = detail::parse_count(fields[3], where);
    out.push_back(r);
  }
  check_series(out);
  return out;
}

inline std::vector<DailyRecord> parse_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("json: ") + e.what());
  }
  if (!doc.is_array()) throw SchemaError("json: top level must be an array of daily records");
  std::vector<DailyRecord> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    const std::string where = "json record " + std::to_string(i);
    if (!obj.is_object()) throw SchemaError(where + ": not an object");
    auto count = [&](const char* key) -> std::int64_t {
      if (!obj.contains(key)) throw SchemaError(where + ": missing field '" + key + "'");
      const auto& v = obj.at(key);
      if (!v.is_number_integer()) throw SchemaError(where + ": field '" + key + "' must be an integer");
      const auto n = v.get<std::int64_t>();
      if (n < 0) throw SchemaError(where + ": field '" + key + "' is negative");
      return n;
    };
    if (!obj.contains("date") || !obj.at("date").is_string()) {
      throw SchemaError(where + ": missing string field 'date'");
    }
    DailyRecord r;
    try {
      r.date = parse_date(obj.at("date").get<std::string>());
    } catch (const SchemaError& e) {
      throw SchemaError(where + ": " + e.what());
    }
    r.positive = count("positive");
    r.deaths = count("deaths");
    r.recovered = count("recovered");
    out.push_back(r);
  }
  check_series(out);
  return out;
}

inline std::vector<DailyRecord> ingest(const std::string& path, DataFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  if (format == DataFormat::Csv) return parse_csv(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str());
}

inline std::vector<DailyRecord> ingest(const std::string& path) { return ingest(path, format_from_path(path)); }

inline void write_csv(std::ostream& out, const std::vector<DailyRecord>& records) {
  out << "date,positive,deaths,recovered\n";
  for (const auto& r : records) {
    out << format_date(r.date) << ',' << r.positive << ',' << r.deaths << ',' << r.recovered << '\n';
  }
}

// Smooth epidemic-like curve with weekly reporting waves and AR(1) noise.
inline std::vector<DailyRecord> synthetic_series(std::size_t days, std::uint64_t seed, double base = 1000.0) {
  constexpr double kTwoPi = 6.283185307179586;
  Rng rng(seed);
  std::vector<DailyRecord> recs;
  const Date start = parse_date("2020-03-02");
  double noise = 0.0;
  for (std::size_t i = 0; i < days; ++i) {
    const double t = static_cast<double>(i);
    noise = 0.95 * noise + 0.05 * rng.normal();
    const double trend = base * (1.0 + 0.6 * std::sin(kTwoPi * t / 180.0) + 0.002 * t);
    const double weekly = 1.0 + 0.08 * std::sin(kTwoPi * t / 7.0);
    const double pos = std::max(1.0, trend * weekly * (1.0 + noise));
    recs.push_back({start + std::chrono::days(i), static_cast<std::int64_t>(std::llround(pos)),
                    static_cast<std::int64_t>(std::llround(0.03 * pos)),
                    static_cast<std::int64_t>(std::llround(0.85 * pos))});
  }
  return recs;
}

/// Series as a [days x n_features] matrix; feature order positive, deaths, recovered.
inline Tensor feature_matrix(const std::vector<DailyRecord>& records, std::size_t n_features) {
  if (n_features == 0 || n_features > 3) {
    throw ConfigError("n_features must be 1, 2 or 3, got " + std::to_string(n_features));
  }
  if (records.empty()) throw DataError("empty series");
  Tensor m(Shape{records.size(), n_features});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double vals[3] = {static_cast<double>(records[i].positive), static_cast<double>(records[i].deaths),
                            static_cast<double>(records[i].recovered)};
    for (std::size_t f = 0; f < n_features; ++f) m(i, f) = vals[f];
  }
  return m;
}

/// Min-max scaling A' = (A - min) / (max - min) * (upper - lower) + lower, per feature.
struct NormalizationParams {
  std::vector<double> min;
  std::vector<double> max;
  double lower = -1.0;
  double upper = 1.0;

  static NormalizationParams fit(const Tensor& series, std::size_t begin, std::size_t end) {
    if (begin >= end || end > series.rows()) throw ContractError("normalization fit range is empty");
    NormalizationParams p;
    const std::size_t nf = series.cols();
    p.min.assign(nf, series(begin, 0));
    p.max.assign(nf, series(begin, 0));
    for (std::size_t f = 0; f < nf; ++f) {
      p.min[f] = p.max[f] = series(begin, f);
      for (std::size_t i = begin; i < end; ++i) {
        p.min[f] = std::min(p.min[f], series(i, f));
        p.max[f] = std::max(p.max[f], series(i, f));
      }
    }
    p.validate();
    return p;
  }

  void validate() const {
    if (min.size() != max.size() || min.empty()) throw ContractError("normalization params are incomplete");
    for (std::size_t f = 0; f < min.size(); ++f) {
      if (!(max[f] > min[f])) {
        throw DataError("degenerate range for feature " + std::to_string(f) + ": min == max == " +
                        std::to_string(min[f]));
      }
    }
    if (!(upper > lower)) throw ConfigError("normalization target range is empty");
  }

  double normalize(double a, std::size_t feature = 0) const {
    return (a - min[feature]) / (max[feature] - min[feature]) * (upper - lower) + lower;
  }

  double denormalize(double a, std::size_t feature = 0) const {
    return (a - lower) / (upper - lower) * (max[feature] - min[feature]) + min[feature];
  }
};

inline std::vector<double> normalize(std::span<const double> xs, const NormalizationParams& p, std::size_t feature = 0) {
  p.validate();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = p.normalize(xs[i], feature);
  return out;
}

inline std::vector<double> denormalize(std::span<const double> xs, const NormalizationParams& p,
                                       std::size_t feature = 0) {
  p.validate();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = p.denormalize(xs[i], feature);
  return out;
}

/// Chronological partition: train = [0, train_end), eval = [train_end, eval_end), test = [eval_end, total).
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t eval_end = 0;
  std::size_t total = 0;

  std::size_t train_size() const { return train_end; }
  std::size_t eval_size() const { return eval_end - train_end; }
  std::size_t test_size() const { return total - eval_end; }
};

/// The last `test_days` form the test segment; of the rest the first
/// `train_frac` (rounded down) is training data and the remainder evaluation data.
inline SplitBounds split(std::size_t length, std::size_t test_days = 60, double train_frac = 0.70,
                         std::size_t min_context = 0) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
  if (test_days == 0) throw ConfigError("test_days must be positive");
  if (length <= test_days + min_context) {
    throw ContractError("series of " + std::to_string(length) + " days is too short: need more than " +
                        std::to_string(test_days + min_context));
  }
  const std::size_t rest = length - test_days;
  const auto train = static_cast<std::size_t>(std::floor(static_cast<double>(rest) * train_frac + 1e-9));
  if (train == 0 || train == rest) throw ContractError("split leaves an empty train or eval segment");
  return SplitBounds{train, rest, length};
}

/// Sliding windows stacked row-wise: inputs [count*lag x features], targets [count*horizon x 1].
/// target_start[i] is the series index of the first target of window i.
struct WindowSet {
  Tensor inputs;
  Tensor targets;
  std::vector<std::size_t> target_start;
  std::size_t lag = 0;
  std::size_t horizon = 0;
  std::size_t features = 0;

  std::size_t count() const { return target_start.size(); }

  /// Windows with the given indices, in that order.
  WindowSet subset(std::span<const std::size_t> idx) const {
    WindowSet out;
    out.lag = lag;
    out.horizon = horizon;
    out.features = features;
    std::vector<double> in, tg;
    in.reserve(idx.size() * lag * features);
    tg.reserve(idx.size() * horizon);
    for (std::size_t i : idx) {
      const auto src_in = inputs.data().subspan(i * lag * features, lag * features);
      const auto src_tg = targets.data().subspan(i * horizon, horizon);
      in.insert(in.end(), src_in.begin(), src_in.end());
      tg.insert(tg.end(), src_tg.begin(), src_tg.end());
      out.target_start.push_back(target_start[i]);
    }
    out.inputs = Tensor(Shape{idx.size() * lag, features}, std::move(in));
    out.targets = Tensor(Shape{idx.size() * horizon, 1}, std::move(tg));
    return out;
  }

  /// Input window i as a [lag x features] matrix.
  Tensor window(std::size_t i) const {
    const auto src = inputs.data().subspan(i * lag * features, lag * features);
    return Tensor(Shape{lag, features}, std::vector<double>(src.begin(), src.end()));
  }
};

namespace detail {

inline WindowSet windows_at(const Tensor& series, std::span<const std::size_t> starts, std::size_t lag,
                            std::size_t horizon) {
  const std::size_t nf = series.cols();
  WindowSet out;
  out.lag = lag;
  out.horizon = horizon;
  out.features = nf;
  std::vector<double> in, tg;
  for (std::size_t t : starts) {
    for (std::size_t i = t - lag; i < t; ++i)
      for (std::size_t f = 0; f < nf; ++f) in.push_back(series(i, f));
    for (std::size_t i = t; i < t + horizon; ++i) tg.push_back(series(i, 0));
    out.target_start.push_back(t);
  }
  out.inputs = Tensor(Shape{starts.size() * lag, nf}, std::move(in));
  out.targets = Tensor(Shape{starts.size() * horizon, 1}, std::move(tg));
  return out;
}

}  // namespace detail

/// All windows lying entirely inside [begin, end): inputs t-lag..t-1, targets t..t+horizon-1.
/// The target is always feature 0.
inline WindowSet make_windows(const Tensor& series, std::size_t begin, std::size_t end, std::size_t lag,
                              std::size_t horizon) {
  if (lag == 0 || horizon == 0) throw ConfigError("lag and horizon must be positive");
  if (end > series.rows() || begin >= end || end - begin < lag + horizon) {
    throw ContractError("segment of " + std::to_string(end > begin ? end - begin : 0) +
                        " days is too short for lag " + std::to_string(lag) + " and horizon " +
                        std::to_string(horizon) + ": need at least " + std::to_string(lag + horizon));
  }
  std::vector<std::size_t> starts;
  for (std::size_t t = begin + lag; t + horizon <= end; ++t) starts.push_back(t);
  return detail::windows_at(series, starts, lag, horizon);
}

inline WindowSet make_windows(const Tensor& series, std::size_t lag, std::size_t horizon) {
  return make_windows(series, 0, series.rows(), lag, horizon);
}

/// One window per test day d whose target block ends on d, so d is forecast
/// `horizon` steps ahead. Context and the leading targets of the block may
/// reach back into the evaluation segment.
inline WindowSet make_test_windows(const Tensor& series, const SplitBounds& bounds, std::size_t lag,
                                   std::size_t horizon) {
  if (bounds.eval_end + 1 < lag + horizon) throw ContractError("not enough history before the test segment");
  std::vector<std::size_t> starts;
  for (std::size_t d = bounds.eval_end; d < bounds.total; ++d) starts.push_back(d + 1 - horizon);
  return detail::windows_at(series, starts, lag, horizon);
}

struct DatasetOptions {
  std::size_t lag = 7;
  std::size_t horizon = 1;
  std::size_t n_features = 1;
  std::size_t test_days = 60;
  double train_frac = 0.70;
};

/// Normalized, split and windowed series ready for training.
struct WindowedDataset {
  DatasetOptions options;
  std::vector<Date> dates;
  Tensor raw;         // [days x features]
  Tensor normalized;  // same shape, scaled with train-segment statistics
  NormalizationParams norm;
  SplitBounds bounds;
  WindowSet train;
  WindowSet eval;
  WindowSet test;

  /// Raw target value (feature 0) on day index i.
  double actual(std::size_t i) const { return raw(i, 0); }
};

/// `fixed_norm` replaces the train-segment fit, e.g. with statistics stored in a checkpoint.
inline WindowedDataset make_dataset(const std::vector<DailyRecord>& records, const DatasetOptions& opt,
                                    const NormalizationParams* fixed_norm = nullptr) {
  WindowedDataset ds;
  ds.options = opt;
  ds.raw = feature_matrix(records, opt.n_features);
  for (const auto& r : records) ds.dates.push_back(r.date);
  ds.bounds = split(records.size(), opt.test_days, opt.train_frac);
  if (fixed_norm != nullptr) {
    fixed_norm->validate();
    if (fixed_norm->min.size() != opt.n_features) throw DataError("normalization statistics do not match n_features");
    ds.norm = *fixed_norm;
  } else {
    ds.norm = NormalizationParams::fit(ds.raw, 0, ds.bounds.train_end);
  }
  ds.normalized = Tensor(ds.raw.shape());
  for (std::size_t i = 0; i < ds.raw.rows(); ++i)
    for (std::size_t f = 0; f < ds.raw.cols(); ++f) ds.normalized(i, f) = ds.norm.normalize(ds.raw(i, f), f);
  ds.train = make_windows(ds.normalized, 0, ds.bounds.train_end, opt.lag, opt.horizon);
  ds.eval = make_windows(ds.normalized, ds.bounds.train_end, ds.bounds.eval_end, opt.lag, opt.horizon);
  ds.test = make_test_windows(ds.normalized, ds.bounds, opt.lag, opt.horizon);
  return ds;
}

}  // namespace tsf
