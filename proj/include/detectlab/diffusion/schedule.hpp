#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/tensor.hpp"

namespace detectlab::diffusion {

// Linear beta ramp. Steps are 1-based: beta(1) .. beta(T).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  // T == 1 keeps the single value beta_end.
  NoiseSchedule(std::size_t steps, double beta_start, double beta_end) : beta_start_(beta_start), beta_end_(beta_end) {
    if (steps == 0) throw RangeError("noise schedule: T must be >= 1");
    if (!(beta_end > 0.0 && beta_end < 1.0)) throw RangeError("noise schedule: beta_T must lie in (0, 1)");
    if (steps > 1 && !(beta_start > 0.0 && beta_start < beta_end))
      throw RangeError("noise schedule: need 0 < beta_1 < beta_T");
    beta_.resize(steps);
    alpha_bar_.resize(steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      const double f = steps == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
      beta_[i] = beta_start + (beta_end - beta_start) * f;
      prod *= 1.0 - beta_[i];
      alpha_bar_[i] = prod;
    }
  }

  // Linear 1e-4 .. 0.02 ramp for T = 1000, endpoints scaled by 1000/T.
  static NoiseSchedule scaled_linear(std::size_t steps) {
    if (steps < 2) throw RangeError("scaled_linear: T must be >= 2");
    const double scale = 1000.0 / static_cast<double>(steps);
    return NoiseSchedule(steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
  }

  std::size_t steps() const noexcept { return beta_.size(); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  double beta(std::size_t t) const { return beta_[index(t)]; }
  double alpha(std::size_t t) const { return 1.0 - beta_[index(t)]; }
  double alpha_bar(std::size_t t) const { return alpha_bar_[index(t)]; }

 private:
  std::size_t index(std::size_t t) const {
    if (t < 1 || t > beta_.size())
      throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
    return t - 1;
  }

  double beta_start_ = 0.0, beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one timestep per batch item.
template <class T>
microtensor::Tensor<T> forward_noise(const microtensor::Tensor<T>& x0, std::span<const int> timesteps,
                                     const microtensor::Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ShapeError("forward_noise: eps shape differs from x0");
  if (x0.rank() == 0 || timesteps.size() != x0.dim(0)) throw ShapeError("forward_noise: one timestep per item required");
  microtensor::Tensor<T> xt(x0.shape());
  const std::size_t per = x0.size() / x0.dim(0);
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    if (timesteps[b] < 1) throw RangeError("timestep " + std::to_string(timesteps[b]) + " outside [1, T]");
    const double ab = schedule.alpha_bar(static_cast<std::size_t>(timesteps[b]));
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt[i] = static_cast<T>(a * x0[i] + s * eps[i]);
  }
  return xt;
}

}  // namespace detectlab::diffusion
