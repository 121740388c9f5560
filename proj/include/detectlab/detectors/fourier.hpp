#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab::detectors {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT (forward, unnormalized); `stride` walks a
// strided view so columns can be transformed without copying.
inline void fft_inplace(Complex* data, std::size_t n, std::size_t stride = 1) {
  if (!is_power_of_two(n)) throw ShapeError("fft: length " + std::to_string(n) + " is not a power of two");
  auto at = [&](std::size_t i) -> Complex& { return data[i * stride]; };
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(at(i), at(j));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex w = std::polar(1.0, ang * static_cast<double>(k));
        const Complex u = at(i + k), v = at(i + k + len / 2) * w;
        at(i + k) = u + v;
        at(i + k + len / 2) = u - v;
      }
  }
}

// 2-D DFT of one row-major h x w plane.
inline std::vector<Complex> fft2d(std::span<const double> plane, std::size_t h, std::size_t w) {
  if (plane.size() != h * w) throw ShapeError("fft2d: plane size does not match h*w");
  if (!is_power_of_two(h) || !is_power_of_two(w))
    throw ShapeError("fft2d: " + std::to_string(h) + "x" + std::to_string(w) + " is not a power-of-two size");
  std::vector<Complex> f(plane.begin(), plane.end());
  for (std::size_t y = 0; y < h; ++y) fft_inplace(f.data() + y * w, w);
  for (std::size_t x = 0; x < w; ++x) fft_inplace(f.data() + x, h, w);
  return f;
}

// Per channel log(1 + |F|), DC at index 0 (no shift). image is [C,H,W].
template <class In>
std::vector<float> fourier_features(std::span<const In> image, std::size_t c, std::size_t h, std::size_t w) {
  if (image.size() != c * h * w) throw ShapeError("fourier_features: image size does not match C*H*W");
  std::vector<float> out(image.size());
  std::vector<double> plane(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) plane[i] = static_cast<double>(image[ch * h * w + i]);
    const auto f = fft2d(plane, h, w);
    for (std::size_t i = 0; i < h * w; ++i) out[ch * h * w + i] = static_cast<float>(std::log1p(std::abs(f[i])));
  }
  return out;
}

}  // namespace detectlab::detectors
