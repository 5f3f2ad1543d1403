#pragma once

// CSV tables, per-run prediction bands and SVG plots for sweep results.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/error.hpp"
#include "tsf/experiment/config.hpp"
#include "tsf/experiment/sweep.hpp"
#include "tsf/metrics.hpp"

namespace tsf {

inline constexpr const char* kSweepCsvHeader = "axis,value,placement,trial,seed,mape,mean_mape,std_mape,epochs,wall_ms,status";
inline constexpr const char* kPredictionsCsvHeader = "date,actual,mean_pred,min_pred,max_pred";

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return format_real(v);
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace detail

/// File-name-safe identifier for one cell, e.g. `d_model-64-pre`.
inline std::string run_name(const std::string& axis, const SweepCell& cell) {
  std::string raw = axis == "none" ? "run" : axis + "-" + cell.value;
  if (cell.placement != "-") raw += "-" + cell.placement;
  for (char& c : raw) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!keep) c = '_';
  }
  return raw;
}

/// One row per trial, cell statistics repeated on each of the cell's rows.
inline void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << kSweepCsvHeader << '\n';
  for (const auto& cell : result.cells) {
    for (const auto& t : cell.trials) {
      out << result.axis << ',' << cell.value << ',' << cell.placement << ',' << t.trial << ',' << t.seed << ','
          << detail::num(t.mape) << ',' << detail::num(cell.mean_mape) << ',' << detail::num(cell.std_mape) << ','
          << t.epochs << ',' << std::fixed << std::setprecision(3) << t.wall_ms << std::defaultfloat << ','
          << t.status << '\n';
    }
  }
  detail::finish(out, path);
}

/// Summary table shaped like the printed result tables: one row per axis value
/// with Pre-LN, Post-LN and their mean when both placements ran.
inline void write_table_csv(const SweepResult& result, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  if (result.axis == "model") {
    out << "model,placement,best_mape,mean_mape,std_mape,k,best\n";
    for (const auto& c : result.cells) {
      out << c.value << ',' << c.placement << ',' << detail::num(c.best_mape) << ',' << detail::num(c.mean_mape)
          << ',' << detail::num(c.std_mape) << ',' << c.trials.size() << ',' << (c.best ? 1 : 0) << '\n';
    }
    detail::finish(out, path);
    return;
  }

  std::vector<std::string> placements;
  for (const auto& c : result.cells)
    if (std::find(placements.begin(), placements.end(), c.placement) == placements.end())
      placements.push_back(c.placement);
  const bool paired = placements.size() == 2;
  const auto cols = result.axis == "none" ? std::vector<std::string>{"run"} : axis_columns(result.axis);

  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  if (paired) {
    out << ',' << placements[0] << "_ln," << placements[1] << "_ln,mean,best\n";
  } else {
    out << ",placement,mean_mape,std_mape,best\n";
  }

  auto find = [&](const std::string& value, const std::string& placement) -> const SweepCell* {
    for (const auto& c : result.cells)
      if (c.value == value && c.placement == placement) return &c;
    return nullptr;
  };
  auto value_cells = [&](const std::string& value) {
    const auto parts = split_list(value, '-');
    std::string s;
    if (parts.size() == cols.size()) {
      for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
    } else {
      s = value;
      for (std::size_t i = 1; i < cols.size(); ++i) s += ",";
    }
    return s;
  };

  if (paired) {
    // Best row = lowest mean of the two placements.
    const auto values = result.values();
    std::vector<double> means;
    for (const auto& v : values) {
      const SweepCell* a = find(v, placements[0]);
      const SweepCell* b = find(v, placements[1]);
      means.push_back(0.5 * (a->mean_mape + b->mean_mape));
    }
    std::size_t best = values.size();
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!std::isnan(means[i]) && (best == values.size() || means[i] < means[best])) best = i;
    for (std::size_t i = 0; i < values.size(); ++i) {
      out << value_cells(values[i]) << ',' << detail::num(find(values[i], placements[0])->mean_mape) << ','
          << detail::num(find(values[i], placements[1])->mean_mape) << ',' << detail::num(means[i]) << ','
          << (i == best ? 1 : 0) << '\n';
    }
  } else {
    for (const auto& c : result.cells) {
      out << value_cells(c.value) << ',' << c.placement << ',' << detail::num(c.mean_mape) << ','
          << detail::num(c.std_mape) << ',' << (c.best ? 1 : 0) << '\n';
    }
  }
  detail::finish(out, path);
}

inline void write_predictions_csv(const std::vector<DayBand>& band, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << kPredictionsCsvHeader << '\n';
  for (const auto& d : band) {
    out << format_date(d.date) << ',' << detail::num(d.actual) << ',' << detail::num(d.mean) << ','
        << detail::num(d.min) << ',' << detail::num(d.max) << '\n';
  }
  detail::finish(out, path);
}

inline std::vector<DayBand> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != kPredictionsCsvHeader) {
    throw SchemaError(path.string() + ": expected header '" + kPredictionsCsvHeader + "'");
  }
  std::vector<DayBand> band;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 5) throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    try {
      band.push_back({parse_date(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": malformed value");
    }
  }
  return band;
}

/// Actual series, mean prediction and the min/max band across trials.
inline std::string render_svg(const std::vector<DayBand>& band, const std::string& title) {
  constexpr double W = 800, H = 400, L = 70, R = 20, T = 40, B = 50;
  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  if (band.empty()) {
    s << "</svg>\n";
    return s.str();
  }
  double lo = band[0].actual, hi = band[0].actual;
  for (const auto& d : band) lo = std::min({lo, d.actual, d.min}), hi = std::max({hi, d.actual, d.max});
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const std::size_t n = band.size();
  auto x = [&](std::size_t i) { return L + (W - L - R) * (n == 1 ? 0.5 : double(i) / double(n - 1)); };
  auto y = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };
  auto polyline = [&](auto get, const char* colour, const char* extra) {
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << extra << " points=\"";
    for (std::size_t i = 0; i < n; ++i) s << (i ? " " : "") << x(i) << ',' << y(get(band[i]));
    s << "\"/>\n";
  };

  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << std::llround(v) << "</text>\n";
  }
  for (std::size_t i : {std::size_t{0}, n / 2, n - 1}) {
    s << "<text x=\"" << x(i) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << format_date(band[i].date) << "</text>\n";
  }

  s << "<polygon fill=\"#f4a582\" fill-opacity=\"0.45\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < n; ++i) s << x(i) << ',' << y(band[i].max) << ' ';
  for (std::size_t i = n; i-- > 0;) s << x(i) << ',' << y(band[i].min) << (i ? " " : "");
  s << "\"/>\n";
  polyline([](const DayBand& d) { return d.actual; }, "#2166ac", "");
  polyline([](const DayBand& d) { return d.mean; }, "#b2182b", " stroke-dasharray=\"6 3\"");

  const double ly = H - 14;
  s << "<rect x=\"" << L << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"#2166ac\"/>"
    << "<text x=\"" << L + 18 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"11\">actual</text>\n";
  s << "<rect x=\"" << L + 90 << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"#b2182b\"/>"
    << "<text x=\"" << L + 108 << "\" y=\"" << ly
    << "\" font-family=\"sans-serif\" font-size=\"11\">mean prediction</text>\n";
  s << "<rect x=\"" << L + 230 << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"#f4a582\"/>"
    << "<text x=\"" << L + 248 << "\" y=\"" << ly
    << "\" font-family=\"sans-serif\" font-size=\"11\">min-max range</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline void write_svg(const std::vector<DayBand>& band, const std::string& title, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << render_svg(band, title);
  detail::finish(out, path);
}

/// Band built from a single report (min = mean = max).
inline std::vector<DayBand> band_of(const EvalReport& r) {
  std::vector<DayBand> band;
  for (const auto& d : r.days) band.push_back({d.date, d.actual, d.predicted, d.predicted, d.predicted});
  return band;
}

/// Writes sweep.csv, table.csv and, for every cell with at least one
/// successful trial, predictions_<run>.csv plus an optional plot_<run>.svg.
/// For the model comparison the emitted series is the best trial's.
/// Returns the paths written.
inline std::vector<std::filesystem::path> emit_outputs(const SweepResult& result, const std::filesystem::path& outdir,
                                                       bool plot = true) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw DataError("cannot create output directory '" + outdir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> written{outdir / "sweep.csv", outdir / "table.csv"};
  write_sweep_csv(result, written[0]);
  write_table_csv(result, written[1]);
  for (const auto& cell : result.cells) {
    if (!cell.aggregate) continue;
    const std::string run = run_name(result.axis, cell);
    const auto band = result.axis == "model" ? band_of(cell.aggregate->best()) : cell.aggregate->band;
    written.push_back(outdir / ("predictions_" + run + ".csv"));
    write_predictions_csv(band, written.back());
    if (plot) {
      written.push_back(outdir / ("plot_" + run + ".svg"));
      write_svg(band, run, written.back());
    }
  }
  return written;
}

}  // namespace tsf
