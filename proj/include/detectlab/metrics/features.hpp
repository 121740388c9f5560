#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <vector>

#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/metrics/frechet.hpp"
#include "detectlab/microtensor/graph.hpp"
#include "detectlab/parallel.hpp"

namespace detectlab::metrics {

inline constexpr std::size_t kFeatureDim = 64;

// Fixed random conv stack -> global average pool -> 64 features. Never trained.
class FeatureExtractor {
 public:
  FeatureExtractor(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed = 0x5eed)
      : seed_(seed), net_(build(channels, height, width), seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // One row per image, in index order.
  Eigen::MatrixXd extract(const datasets::ImageDataset& ds, std::size_t batch = 64, std::size_t threads = 1) const {
    const auto& in = net_.spec().input_shape();
    if (ds.channels != in[0] || ds.height != in[1] || ds.width != in[2])
      throw ShapeError("FeatureExtractor: dataset geometry does not match the extractor");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(kFeatureDim));
    const std::size_t jobs = (ds.size() + batch - 1) / batch;
    std::vector<microtensor::ParamGraph<float>> nets(std::max<std::size_t>(1, std::min(threads, jobs)), net_);
    parallel_for(jobs, nets.size(), [&](std::size_t w, std::size_t j) {
      const std::size_t b0 = j * batch, nb = std::min(batch, ds.size() - b0);
      const std::size_t per = ds.image_size();
      microtensor::Tensor<float> x({nb, in[0], in[1], in[2]});
      for (std::size_t i = 0; i < nb * per; ++i) x[i] = static_cast<float>(ds.pixels[b0 * per + i]) / 127.5f - 1.0f;
      const auto f = nets[w].forward(x);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t k = 0; k < kFeatureDim; ++k)
          out(static_cast<Eigen::Index>(b0 + b), static_cast<Eigen::Index>(k)) = f[b * kFeatureDim + k];
    });
    return out;
  }

  GaussianFit fit(const datasets::ImageDataset& ds, std::size_t threads = 1) const {
    return fit_gaussian(extract(ds, 64, threads));
  }

 private:
  static microtensor::GraphSpec build(std::size_t c, std::size_t h, std::size_t w) {
    microtensor::GraphSpec g({c, h, w});
    g.set_frozen(true);
    auto x = g.relu(g.conv2d(g.input(), 16, 3));
    x = g.relu(g.conv2d(x, 32, 3, 2));
    x = g.relu(g.conv2d(x, kFeatureDim, 3, 2));
    g.set_output(g.global_avg_pool(x));
    return g;
  }

  std::uint64_t seed_;
  microtensor::ParamGraph<float> net_;
};

inline double frechet_between(const FeatureExtractor& fx, const datasets::ImageDataset& a,
                              const datasets::ImageDataset& b, std::size_t threads = 1) {
  return frechet_distance(fx.fit(a, threads), fx.fit(b, threads));
}

inline constexpr std::size_t kFrechetSize = 64;

// Resampled to kFrechetSize x kFrechetSize: pixel replication when
// upscaling, bilinear when a side is larger.
inline datasets::ImageDataset frechet_view(const datasets::ImageDataset& ds) {
  if (ds.height <= kFrechetSize && ds.width <= kFrechetSize)
    return datasets::resize_nearest(ds, kFrechetSize, kFrechetSize);
  return datasets::resize(ds, kFrechetSize, kFrechetSize);
}

// Fréchet distance of both sets in the shared kFrechetSize feature space.
inline double image_frechet(const datasets::ImageDataset& a, const datasets::ImageDataset& b,
                            std::size_t threads = 1) {
  if (a.channels != b.channels) throw ShapeError("image_frechet: channel counts differ");
  const FeatureExtractor fx(a.channels, kFrechetSize, kFrechetSize);
  return frechet_between(fx, frechet_view(a), frechet_view(b), threads);
}

}  // namespace detectlab::metrics
