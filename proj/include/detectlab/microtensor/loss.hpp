#pragma once

#include <cmath>
#include <span>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/tensor.hpp"

namespace detectlab::microtensor {

// Mean binary cross-entropy on raw logits, numerically stable form.
// Writes dloss/dlogit into grad when non-null.
template <class T>
double bce_with_logits(const Tensor<T>& logits, std::span<const float> targets, Tensor<T>* grad = nullptr) {
  if (logits.size() != targets.size()) throw ShapeError("bce_with_logits: logits/targets length mismatch");
  if (grad) grad->resize(logits.shape());
  const double n = static_cast<double>(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = targets[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (grad) (*grad)[i] = static_cast<T>((1.0 / (1.0 + std::exp(-z)) - y) / n);
  }
  return total / n;
}

template <class T>
double mse(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr) {
  if (pred.shape() != target.shape()) throw ShapeError("mse: shape mismatch");
  if (grad) grad->resize(pred.shape());
  const double n = static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / n);
  }
  return total / n;
}

}  // namespace detectlab::microtensor
