#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "detectlab/csv.hpp"
#include "detectlab/error.hpp"
#include "detectlab/metrics/stats.hpp"

namespace detectlab::lab {

struct ExperimentRecord {
  std::string dataset;
  std::size_t channels = 1;
  double complexity = 0.0;  // png-concat ratio
  std::size_t resolution = 0;
  std::string family;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double best_val_loss = 0.0;
  double frechet = 0.0;
  double wall_time = 0.0;  // seconds; kept out of the records CSV

  using Key = std::tuple<std::string, std::size_t, std::string, std::uint64_t>;
  Key key() const { return {dataset, resolution, family, seed}; }
};

inline const csv::Row kRecordHeader = {"dataset", "channels",      "complexity",    "resolution", "family",
                                       "seed",    "test_accuracy", "best_val_loss", "frechet"};

inline csv::Row to_row(const ExperimentRecord& r) {
  return {r.dataset,
          std::to_string(r.channels),
          csv::number(r.complexity, 6),
          std::to_string(r.resolution),
          r.family,
          std::to_string(r.seed),
          csv::number(r.test_accuracy, 6),
          csv::number(r.best_val_loss, 6),
          csv::number(r.frechet, 6)};
}

namespace detail {

inline std::uint64_t parse_uint(const std::string& s, const char* what, std::size_t line) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("records line " + std::to_string(line) + ": bad " + what + " '" + s + "'", line);
  return v;
}

inline double parse_real(const std::string& s, const char* what, std::size_t line) {
  try {
    return csv::to_double(s, what);
  } catch (const ParseError&) {
    throw ParseError("records line " + std::to_string(line) + ": bad " + what + " '" + s + "'", line);
  }
}

}  // namespace detail

// Parses a records CSV. Errors name the 1-based line. A final line without
// a trailing newline is a torn append and is dropped when `tolerate_torn_tail`.
inline std::vector<ExperimentRecord> parse_records(std::string text, bool tolerate_torn_tail = false) {
  if (tolerate_torn_tail && !text.empty() && text.back() != '\n') text.erase(text.find_last_of('\n') + 1);
  std::vector<ExperimentRecord> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    csv::Row row;
    try {
      const auto rows = csv::parse(line);
      if (!rows.empty()) row = rows[0];
    } catch (const ParseError& e) {
      throw ParseError("records line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (line_no == 1) {
      if (row != kRecordHeader) throw ParseError("records line 1: unexpected header", 1);
      continue;
    }
    if (row.size() != kRecordHeader.size())
      throw ParseError("records line " + std::to_string(line_no) + ": expected " + std::to_string(kRecordHeader.size()) +
                           " fields, got " + std::to_string(row.size()),
                       line_no);
    ExperimentRecord r;
    r.dataset = row[0];
    r.channels = detail::parse_uint(row[1], "channels", line_no);
    r.complexity = detail::parse_real(row[2], "complexity", line_no);
    r.resolution = detail::parse_uint(row[3], "resolution", line_no);
    r.family = row[4];
    r.seed = detail::parse_uint(row[5], "seed", line_no);
    r.test_accuracy = detail::parse_real(row[6], "test_accuracy", line_no);
    r.best_val_loss = detail::parse_real(row[7], "best_val_loss", line_no);
    r.frechet = detail::parse_real(row[8], "frechet", line_no);
    if (r.dataset.empty() || r.family.empty())
      throw ParseError("records line " + std::to_string(line_no) + ": empty dataset or family", line_no);
    if (!(r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0))
      throw ParseError("records line " + std::to_string(line_no) + ": test_accuracy outside [0,1]", line_no);
    if (!(r.complexity > 0.0))
      throw ParseError("records line " + std::to_string(line_no) + ": complexity must be > 0", line_no);
    out.push_back(r);
  }
  if (line_no == 0) throw ParseError("records: missing header", 0);
  return out;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<ExperimentRecord> load_records(const std::string& path, bool tolerate_torn_tail = false) {
  return parse_records(read_text(path), tolerate_torn_tail);
}

inline void sort_records(std::vector<ExperimentRecord>& rs) {
  std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
}

// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    out.flush();
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string format_records(std::vector<ExperimentRecord> rs) {
  sort_records(rs);
  std::string text = csv::format_row(kRecordHeader);
  for (const auto& r : rs) text += csv::format_row(to_row(r));
  return text;
}

// One aggregate per (dataset, resolution, family).
struct AggregateRow {
  std::string dataset;
  std::size_t channels = 1;
  double complexity = 0.0;
  std::size_t resolution = 0;
  std::string family;
  std::size_t seeds = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
  double mean_frechet = 0.0;
};

inline std::vector<AggregateRow> aggregate(const std::vector<ExperimentRecord>& records) {
  std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<const ExperimentRecord*>> groups;
  for (const auto& r : records) groups[{r.dataset, r.resolution, r.family}].push_back(&r);
  std::vector<AggregateRow> out;
  for (const auto& [key, rs] : groups) {
    AggregateRow a;
    std::tie(a.dataset, a.resolution, a.family) = key;
    a.channels = rs.front()->channels;
    a.complexity = rs.front()->complexity;
    a.seeds = rs.size();
    std::vector<double> acc;
    double fd = 0.0;
    for (const auto* r : rs) {
      acc.push_back(r->test_accuracy);
      fd += r->frechet;
    }
    a.mean_frechet = fd / static_cast<double>(rs.size());
    a.min_accuracy = *std::min_element(acc.begin(), acc.end());
    a.max_accuracy = *std::max_element(acc.begin(), acc.end());
    if (acc.size() == 1) {
      a.mean_accuracy = acc[0];
    } else {
      const auto s = metrics::aggregate_runs(acc);
      a.mean_accuracy = s.mean;
      a.std_accuracy = s.stddev;
    }
    out.push_back(a);
  }
  return out;
}

inline const csv::Row kSummaryHeader = {"dataset",       "channels",     "complexity",   "resolution",
                                        "family",        "seeds",        "mean_accuracy", "std_accuracy",
                                        "min_accuracy",  "max_accuracy", "mean_frechet"};

inline std::string format_summary(const std::vector<AggregateRow>& rows) {
  std::string text = csv::format_row(kSummaryHeader);
  for (const auto& a : rows)
    text += csv::format_row({a.dataset, std::to_string(a.channels), csv::number(a.complexity, 6),
                             std::to_string(a.resolution), a.family, std::to_string(a.seeds),
                             csv::number(a.mean_accuracy, 6), csv::number(a.std_accuracy, 6),
                             csv::number(a.min_accuracy, 6), csv::number(a.max_accuracy, 6),
                             csv::number(a.mean_frechet, 6)});
  return text;
}

// Wide table: one row per (dataset, resolution), mean and std per family, then the average of the means.
inline std::string format_table(const std::vector<AggregateRow>& rows) {
  std::vector<std::string> families;
  for (const auto& a : rows)
    if (std::find(families.begin(), families.end(), a.family) == families.end()) families.push_back(a.family);
  std::sort(families.begin(), families.end());
  csv::Row header = {"dataset", "resolution", "complexity"};
  for (const auto& f : families) {
    header.push_back(f + "_mean");
    header.push_back(f + "_std");
  }
  header.push_back("average");
  std::string text = csv::format_row(header);
  std::map<std::pair<std::string, std::size_t>, std::vector<const AggregateRow*>> by_cell;
  for (const auto& a : rows) by_cell[{a.dataset, a.resolution}].push_back(&a);
  for (const auto& [key, as] : by_cell) {
    csv::Row row = {key.first, std::to_string(key.second), csv::number(as.front()->complexity, 6)};
    double sum = 0.0;
    for (const auto& f : families) {
      auto it = std::find_if(as.begin(), as.end(), [&](const auto* a) { return a->family == f; });
      if (it == as.end()) {
        row.push_back("");
        row.push_back("");
        continue;
      }
      row.push_back(csv::number((*it)->mean_accuracy, 6));
      row.push_back(csv::number((*it)->std_accuracy, 6));
      sum += (*it)->mean_accuracy;
    }
    row.push_back(csv::number(sum / static_cast<double>(as.size()), 6));
    text += csv::format_row(row);
  }
  return text;
}

// Scatter of mean accuracy against complexity. Axes fixed to [0,1] x [0.4,1.0];
// circles mark grayscale datasets, squares RGB; one colour per family.
struct SvgFrame {
  static constexpr double kWidth = 640, kHeight = 480;
  static constexpr double kLeft = 70, kRight = 150, kTop = 20, kBottom = 60;
  static constexpr double kYMin = 0.4, kYMax = 1.0;

  static double x(double complexity) {
    return kLeft + std::clamp(complexity, 0.0, 1.0) * (kWidth - kLeft - kRight);
  }
  static double y(double accuracy) {
    const double t = (std::clamp(accuracy, kYMin, kYMax) - kYMin) / (kYMax - kYMin);
    return kHeight - kBottom - t * (kHeight - kTop - kBottom);
  }
};

inline std::string format_svg(const std::vector<AggregateRow>& rows) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  using F = SvgFrame;
  std::vector<std::string> families;
  for (const auto& a : rows)
    if (std::find(families.begin(), families.end(), a.family) == families.end()) families.push_back(a.family);
  std::sort(families.begin(), families.end());
  auto color = [&](const std::string& f) {
    const auto i = static_cast<std::size_t>(std::find(families.begin(), families.end(), f) - families.begin());
    return kColors[i % std::size(kColors)];
  };
  auto fmt = [](double v) { return csv::number(v, 2); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << F::kWidth << "\" height=\"" << F::kHeight
    << "\" viewBox=\"0 0 " << F::kWidth << " " << F::kHeight << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double x0 = F::x(0), x1 = F::x(1), y0 = F::y(F::kYMin), y1 = F::y(F::kYMax);
  s << "<g stroke=\"black\" stroke-width=\"1\">\n";
  s << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x1) << "\" y2=\"" << fmt(y0) << "\"/>\n";
  s << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x0) << "\" y2=\"" << fmt(y1) << "\"/>\n";
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double c = i / 5.0;
    s << "<text x=\"" << fmt(F::x(c)) << "\" y=\"" << fmt(y0 + 16) << "\" text-anchor=\"middle\">" << csv::number(c, 1)
      << "</text>\n";
  }
  for (int i = 0; i <= 6; ++i) {
    const double a = F::kYMin + i * 0.1;
    s << "<text x=\"" << fmt(x0 - 6) << "\" y=\"" << fmt(F::y(a) + 4) << "\" text-anchor=\"end\">" << csv::number(a, 1)
      << "</text>\n";
  }
  s << "<text x=\"" << fmt((x0 + x1) / 2) << "\" y=\"" << fmt(F::kHeight - 20)
    << "\" text-anchor=\"middle\">complexity (png-concat ratio)</text>\n";
  s << "<text transform=\"translate(20," << fmt((y0 + y1) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">detector accuracy</text>\n";
  for (std::size_t i = 0; i < families.size(); ++i) {
    const double ly = F::kTop + 10 + 18.0 * static_cast<double>(i);
    s << "<rect x=\"" << fmt(x1 + 16) << "\" y=\"" << fmt(ly - 5) << "\" width=\"10\" height=\"10\" fill=\""
      << color(families[i]) << "\"/><text x=\"" << fmt(x1 + 32) << "\" y=\"" << fmt(ly + 4) << "\">" << families[i]
      << "</text>\n";
  }
  s << "</g>\n";
  for (const auto& a : rows) {
    const double cx = F::x(a.complexity), cy = F::y(a.mean_accuracy);
    s << "<g class=\"series\" data-family=\"" << a.family << "\">";
    if (a.channels == 3)
      s << "<rect class=\"marker\" x=\"" << fmt(cx - 4) << "\" y=\"" << fmt(cy - 4) << "\" width=\"8\" height=\"8\"";
    else
      s << "<circle class=\"marker\" cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"4\"";
    s << " fill=\"" << color(a.family) << "\"><title>" << a.dataset << " @" << a.resolution << " "
      << csv::number(a.mean_accuracy, 4) << "</title></" << (a.channels == 3 ? "rect" : "circle") << "></g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

struct ReportPaths {
  std::string summary, table, svg;
};

// records CSV -> summary.csv, table.csv and scatter.svg in `out_dir`.
inline ReportPaths report(const std::string& records_path, const std::string& out_dir) {
  const auto records = load_records(records_path);
  if (records.empty()) throw RangeError("report: " + records_path + " has no records");
  const auto rows = aggregate(records);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  ReportPaths p{(dir / "summary.csv").string(), (dir / "table.csv").string(), (dir / "scatter.svg").string()};
  write_atomic(p.summary, format_summary(rows));
  write_atomic(p.table, format_table(rows));
  write_atomic(p.svg, format_svg(rows));
  return p;
}

// Per-family accuracy across resolutions and whether it does not fall from
// the smallest to the largest resolution.
struct ResolutionTrend {
  std::string dataset, family;
  std::vector<std::size_t> resolutions;
  std::vector<double> mean_accuracy;
  std::vector<double> frechet;
  bool accuracy_monotone = false;  // max-resolution accuracy >= min-resolution accuracy
  bool frechet_nondecreasing = false;
};

inline std::vector<ResolutionTrend> resolution_trends(const std::vector<ExperimentRecord>& records) {
  std::vector<ResolutionTrend> out;
  std::map<std::pair<std::string, std::string>, std::vector<AggregateRow>> groups;
  for (const auto& a : aggregate(records)) groups[{a.dataset, a.family}].push_back(a);
  for (auto& [key, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.resolution < b.resolution; });
    ResolutionTrend t{key.first, key.second, {}, {}, {}, false, true};
    for (const auto& a : rows) {
      t.resolutions.push_back(a.resolution);
      t.mean_accuracy.push_back(a.mean_accuracy);
      t.frechet.push_back(a.mean_frechet);
    }
    t.accuracy_monotone = t.mean_accuracy.back() >= t.mean_accuracy.front();
    for (std::size_t i = 0; i + 1 < t.frechet.size(); ++i) t.frechet_nondecreasing &= t.frechet[i + 1] >= t.frechet[i];
    out.push_back(t);
  }
  return out;
}

inline std::string format_trends(const std::vector<ResolutionTrend>& trends) {
  std::string text = csv::format_row({"dataset", "family", "resolution", "mean_accuracy", "frechet"});
  for (const auto& t : trends)
    for (std::size_t i = 0; i < t.resolutions.size(); ++i)
      text += csv::format_row({t.dataset, t.family, std::to_string(t.resolutions[i]), csv::number(t.mean_accuracy[i], 6),
                               csv::number(t.frechet[i], 6)});
  return text;
}

inline std::string format_monotonicity(const std::vector<ResolutionTrend>& trends) {
  std::string text = csv::format_row({"dataset", "family", "min_resolution", "max_resolution", "accuracy_at_min",
                                      "accuracy_at_max", "accuracy_monotone", "frechet_nondecreasing"});
  for (const auto& t : trends)
    text += csv::format_row({t.dataset, t.family, std::to_string(t.resolutions.front()),
                             std::to_string(t.resolutions.back()), csv::number(t.mean_accuracy.front(), 6),
                             csv::number(t.mean_accuracy.back(), 6), t.accuracy_monotone ? "true" : "false",
                             t.frechet_nondecreasing ? "true" : "false"});
  return text;
}

}  // namespace detectlab::lab
