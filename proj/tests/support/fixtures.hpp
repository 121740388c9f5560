#pragma once

#include <cstdint>
#include <vector>

#include "detectlab/datasets/image_dataset.hpp"

namespace detectlab::testing {

// Two fixed images (left/right split and top/bottom split), label i % 2.
inline datasets::ImageDataset two_point(std::size_t res, std::size_t n) {
  datasets::ImageDataset ds;
  ds.name = "two-point";
  ds.height = ds.width = res;
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = i % 2;
    std::vector<std::uint8_t> img(res * res);
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) img[y * res + x] = label == 0 ? (x < res / 2 ? 30 : 220) : (y < res / 2 ? 220 : 30);
    ds.push_back(img, label);
  }
  return ds;
}

// Fraction of images whose squared distance to their label's target is smaller than to the other target.
inline double nearer_own_target(const datasets::ImageDataset& out, const datasets::ImageDataset& targets) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double d[2] = {0, 0};
    for (int k = 0; k < 2; ++k)
      for (std::size_t p = 0; p < out.image_size(); ++p) {
        const double diff = double(out.image(i)[p]) - double(targets.image(k)[p]);
        d[k] += diff * diff;
      }
    const auto l = out.labels[i];
    hits += d[l] < d[1 - l];
  }
  return static_cast<double>(hits) / static_cast<double>(out.size());
}

}  // namespace detectlab::testing
