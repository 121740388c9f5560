#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab::metrics {

// 1-based fractional ranks; tied values share their average rank.
inline std::vector<double> fractional_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: inputs differ in length");
  if (xs.size() < 3) throw RangeError("spearman: need at least 3 points");
  const auto rx = fractional_ranks(xs);
  const auto ry = fractional_ranks(ys);
  try {
    return pearson(rx, ry);
  } catch (const NumericError&) {
    throw NumericError("spearman: undefined for constant input (zero rank variance)");
  }
}

struct RunSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1)
  std::size_t count = 0;
  // Zero spread across seeds usually means the seed never reached the run.
  bool degenerate = false;
};

inline RunSummary aggregate_runs(std::span<const double> values) {
  if (values.size() < 2) throw RangeError("aggregate_runs: need at least 2 runs per cell");
  RunSummary s;
  s.count = values.size();
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; })) {
    s.mean = values[0];
    s.degenerate = true;
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.count);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
  return s;
}

}  // namespace detectlab::metrics
