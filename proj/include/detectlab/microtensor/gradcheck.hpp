#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "detectlab/microtensor/graph.hpp"

namespace detectlab::microtensor {

// Scalar loss of the graph output; returns the loss and writes dloss/doutput.
using LossFn = std::function<double(const Tensor<double>& output, Tensor<double>& upstream)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // one per parameter, plus "input"
  double max_rel_err = 0.0;
  bool passed = true;
};

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares backward() against fourth-order central differences
// (f(-2h), f(-h), f(h), f(2h)) for every parameter scalar and every input scalar.
inline GradCheckReport grad_check(ParamGraph<double>& graph, const Tensor<double>& input, const Condition* cond,
                                  const LossFn& loss, double tolerance, double h = 1e-5) {
  graph.set_input_grad(true);
  Tensor<double> upstream;
  auto evaluate = [&](const Tensor<double>& x) {
    Tensor<double> out = graph.forward(x, cond);
    Tensor<double> up(out.shape());
    return loss(out, up);
  };
  auto central = [h](auto&& f) {
    return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h);
  };

  Tensor<double> out = graph.forward(input, cond);
  upstream = Tensor<double>(out.shape());
  loss(out, upstream);
  graph.backward(upstream);

  std::vector<Tensor<double>> analytic;
  for (const auto& p : graph.params()) analytic.push_back(p.grad);
  const Tensor<double> analytic_input = graph.input_grad();

  GradCheckReport report;
  auto finish = [&](GradCheckEntry e) {
    e.passed = e.max_rel_err < tolerance;
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.passed = report.passed && e.passed;
    report.entries.push_back(std::move(e));
  };

  for (std::size_t i = 0; i < graph.params().size(); ++i) {
    auto& p = graph.params()[i];
    if (!p.trainable) continue;
    GradCheckEntry e{p.name};
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      const double numeric = central([&](double d) {
        p.value[k] = saved + d;
        return evaluate(input);
      });
      p.value[k] = saved;
      e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic[i][k], numeric));
    }
    finish(std::move(e));
  }

  GradCheckEntry e{"input"};
  Tensor<double> x = input;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    const double numeric = central([&](double d) {
      x[k] = saved + d;
      return evaluate(x);
    });
    x[k] = saved;
    e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic_input[k], numeric));
  }
  finish(std::move(e));
  graph.set_input_grad(false);
  return report;
}

}  // namespace detectlab::microtensor
