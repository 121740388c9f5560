#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/graph.hpp"

namespace detectlab::microtensor {

// Learning-rate schedule. One-cycle follows the common two-phase cosine form:
// warm up from peak/div_factor to peak over warmup_fraction of the steps, then
// anneal to peak/(div_factor*final_div_factor).
struct LrSchedule {
  enum class Kind { Constant, OneCycle };

  Kind kind = Kind::Constant;
  double peak_lr = 1e-3;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  static LrSchedule constant(double lr, std::size_t total_steps) {
    return {Kind::Constant, lr, total_steps, 0.0, 1.0, 1.0};
  }

  static LrSchedule one_cycle(double peak_lr, std::size_t total_steps, double warmup_fraction = 0.3) {
    return {Kind::OneCycle, peak_lr, total_steps, warmup_fraction, 25.0, 1e4};
  }

  double at(std::size_t step) const {
    if (kind == Kind::Constant) return peak_lr;
    const double initial = peak_lr / div_factor;
    const double floor = initial / final_div_factor;
    const double warm_end = std::max(1.0, warmup_fraction * static_cast<double>(total_steps) - 1.0);
    const double last = std::max(warm_end + 1.0, static_cast<double>(total_steps) - 1.0);
    const double s = static_cast<double>(step);
    auto anneal = [](double from, double to, double pct) {
      return to + (from - to) / 2.0 * (1.0 + std::cos(std::numbers::pi * std::clamp(pct, 0.0, 1.0)));
    };
    if (s <= warm_end) return anneal(initial, peak_lr, s / warm_end);
    return anneal(peak_lr, floor, (s - warm_end) / (last - warm_end));
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <class T>
struct OptimizerState {
  AdamWConfig config;
  LrSchedule schedule;
  std::size_t step_count = 0;
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;

  OptimizerState() = default;

  OptimizerState(const ParamGraph<T>& graph, AdamWConfig cfg, LrSchedule sched)
      : config(cfg), schedule(sched) {
    if (!(cfg.beta1 > 0 && cfg.beta1 < 1 && cfg.beta2 > 0 && cfg.beta2 < 1))
      throw RangeError("AdamW betas must lie in (0, 1)");
    for (const auto& p : graph.params()) {
      first.emplace_back(p.value.shape());
      second.emplace_back(p.value.shape());
    }
  }

  double current_lr() const { return schedule.at(step_count); }
};

// Decoupled-weight-decay Adam update of every trainable parameter.
template <class T>
void adamw_step(OptimizerState<T>& state, ParamGraph<T>& graph) {
  auto& params = graph.params();
  if (state.first.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match graph");
  if (state.step_count >= state.schedule.total_steps)
    throw StateError("adamw_step: schedule exhausted after " + std::to_string(state.schedule.total_steps) + " steps");
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (T g : p.grad.values())
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("adamw_step: non-finite gradient in " + p.name);
  }
  const auto& c = state.config;
  const double lr = state.schedule.at(state.step_count);
  const double t = static_cast<double>(state.step_count + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = state.first[i].data();
    T* v = state.second[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      double wk = w[k];
      wk -= lr * c.weight_decay * wk;
      wk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + c.eps);
      w[k] = static_cast<T>(wk);
    }
  }
  ++state.step_count;
}

// ema <- decay * ema + (1 - decay) * params.
template <class T>
void ema_update(ParamGraph<T>& graph, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw RangeError("ema_update: decay must lie in [0, 1]");
  if (!graph.has_ema()) throw StateError("ema_update: EMA weights not enabled");
  auto& ema = graph.ema();
  const auto& params = graph.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ema[i].shape() != params[i].value.shape()) throw ShapeError("ema_update: shape mismatch for " + params[i].name);
    T* e = ema[i].data();
    const T* p = params[i].value.data();
    for (std::size_t k = 0; k < ema[i].size(); ++k)
      e[k] = static_cast<T>(decay * static_cast<double>(e[k]) + (1.0 - decay) * static_cast<double>(p[k]));
  }
}

}  // namespace detectlab::microtensor
