#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/error.hpp"

namespace tsf {

/// Mean absolute percentage error, in percent. Zero actuals are an error.
inline double mape(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) {
    throw DimensionError("mape: " + std::to_string(actual.size()) + " actuals vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  if (actual.empty()) throw ContractError("mape: empty series");
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) throw NumericError("mape: actual value at index " + std::to_string(i) + " is zero");
    total += std::abs((actual[i] - predicted[i]) / actual[i]);
  }
  return total / static_cast<double>(actual.size()) * 100.0;
}

struct DayPrediction {
  Date date;
  double actual = 0.0;
  double predicted = 0.0;
};

struct EvalReport {
  std::vector<DayPrediction> days;
  double mape = 0.0;
  std::size_t trial_id = 0;
  std::uint64_t seed = 0;
};

/// Builds a report and computes its MAPE from the per-day values.
inline EvalReport make_report(std::vector<DayPrediction> days, std::size_t trial_id, std::uint64_t seed) {
  std::vector<double> a, p;
  for (const auto& d : days) {
    a.push_back(d.actual);
    p.push_back(d.predicted);
  }
  EvalReport r{std::move(days), 0.0, trial_id, seed};
  r.mape = mape(a, p);
  return r;
}

struct DayBand {
  Date date;
  double actual = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

enum class StdKind { Population, Sample };

struct AggregateReport {
  std::vector<EvalReport> trials;
  double mean_mape = 0.0;
  double std_mape = 0.0;
  std::size_t n_trials = 0;
  std::vector<DayBand> band;

  const EvalReport& best() const {
    return *std::min_element(trials.begin(), trials.end(),
                             [](const EvalReport& a, const EvalReport& b) { return a.mape < b.mape; });
  }
};

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean of empty list");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Welford update, so k identical values give exactly zero spread.
inline double std_of(std::span<const double> xs, StdKind kind = StdKind::Population) {
  if (xs.empty()) throw ContractError("std of empty list");
  if (xs.size() == 1) return 0.0;
  double mu = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double d = x - mu;
    mu += d / static_cast<double>(n);
    m2 += d * (x - mu);
  }
  const double denom = static_cast<double>(kind == StdKind::Population ? n : n - 1);
  return std::sqrt(m2 / denom);
}

/// Mean and standard deviation of trial MAPEs plus the per-day mean
/// prediction with its min/max band across trials.
inline AggregateReport aggregate(std::span<const EvalReport> reports, StdKind kind = StdKind::Population) {
  if (reports.empty()) throw ContractError("aggregate: no trial reports");
  AggregateReport agg;
  agg.trials.assign(reports.begin(), reports.end());
  agg.n_trials = reports.size();
  std::vector<double> mapes;
  for (const auto& r : reports) mapes.push_back(r.mape);
  agg.mean_mape = mean_of(mapes);
  agg.std_mape = std_of(mapes, kind);

  const std::size_t days = reports.front().days.size();
  for (const auto& r : reports) {
    if (r.days.size() != days) throw DimensionError("aggregate: trials cover different numbers of days");
  }
  for (std::size_t d = 0; d < days; ++d) {
    DayBand b{reports.front().days[d].date, reports.front().days[d].actual, 0.0, 0.0, 0.0};
    b.min = b.max = reports.front().days[d].predicted;
    double total = 0.0;
    for (const auto& r : reports) {
      const double p = r.days[d].predicted;
      total += p;
      b.min = std::min(b.min, p);
      b.max = std::max(b.max, p);
    }
    // clamp guards the mean against rounding just outside [min, max]
    b.mean = std::clamp(total / static_cast<double>(reports.size()), b.min, b.max);
    agg.band.push_back(b);
  }
  return agg;
}

}  // namespace tsf
