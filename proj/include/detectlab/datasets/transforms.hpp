#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/random.hpp"

namespace detectlab::datasets {

// Sources up to this many pixels smaller (in both dims) are zero-padded
// rather than resized.
inline constexpr std::size_t kPadThreshold = 8;

namespace detail {

inline void pad_center(const std::uint8_t* src, std::size_t sh, std::size_t sw, std::uint8_t* dst, std::size_t th,
                       std::size_t tw) {
  const std::size_t top = (th - sh) / 2, left = (tw - sw) / 2;
  std::fill(dst, dst + th * tw, std::uint8_t{0});
  for (std::size_t y = 0; y < sh; ++y) std::copy(src + y * sw, src + (y + 1) * sw, dst + (top + y) * tw + left);
}

// Half-pixel-centre bilinear resampling with edge clamping.
inline void resize_bilinear(const std::uint8_t* src, std::size_t sh, std::size_t sw, std::uint8_t* dst,
                            std::size_t th, std::size_t tw) {
  auto taps = [](std::size_t out, std::size_t in, std::size_t i) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(s);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < th; ++y) {
    const auto [y0, y1, fy] = taps(th, sh, y);
    for (std::size_t x = 0; x < tw; ++x) {
      const auto [x0, x1, fx] = taps(tw, sw, x);
      const double top = src[y0 * sw + x0] + fx * (src[y0 * sw + x1] - src[y0 * sw + x0]);
      const double bot = src[y1 * sw + x0] + fx * (src[y1 * sw + x1] - src[y1 * sw + x0]);
      const double v = top + fy * (bot - top);
      dst[y * tw + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
}

}  // namespace detail

inline bool pads_to(std::size_t sh, std::size_t sw, std::size_t th, std::size_t tw) {
  return sh <= th && sw <= tw && th - sh <= kPadThreshold && tw - sw <= kPadThreshold;
}

// Bilinear resampling to target_h x target_w, never padding.
inline ImageDataset resize(const ImageDataset& ds, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw RangeError("resize: target must be at least 1x1");
  if (ds.height == target_h && ds.width == target_w) return ds;
  ImageDataset out = ds.empty_like();
  out.height = target_h;
  out.width = target_w;
  out.labels = ds.labels;
  out.pixels.resize(ds.size() * out.image_size());
  const std::size_t splane = ds.height * ds.width, tplane = target_h * target_w;
  for (std::size_t i = 0; i < ds.size() * ds.channels; ++i)
    detail::resize_bilinear(ds.pixels.data() + i * splane, ds.height, ds.width, out.pixels.data() + i * tplane,
                            target_h, target_w);
  return out;
}

// Nearest-neighbour resampling: output pixel (y, x) copies source pixel
// (y * h / target_h, x * w / target_w). Integer upscales replicate pixels exactly.
inline ImageDataset resize_nearest(const ImageDataset& ds, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw RangeError("resize_nearest: target must be at least 1x1");
  if (ds.height == target_h && ds.width == target_w) return ds;
  ImageDataset out = ds.empty_like();
  out.height = target_h;
  out.width = target_w;
  out.labels = ds.labels;
  out.pixels.resize(ds.size() * out.image_size());
  const std::size_t splane = ds.height * ds.width, tplane = target_h * target_w;
  for (std::size_t i = 0; i < ds.size() * ds.channels; ++i)
    for (std::size_t y = 0; y < target_h; ++y)
      for (std::size_t x = 0; x < target_w; ++x)
        out.pixels[i * tplane + y * target_w + x] =
            ds.pixels[i * splane + (y * ds.height / target_h) * ds.width + x * ds.width / target_w];
  return out;
}

inline ImageDataset preprocess(const ImageDataset& ds, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw RangeError("preprocess: target must be at least 1x1");
  if (ds.height == target_h && ds.width == target_w) return ds;
  ImageDataset out = ds.empty_like();
  out.height = target_h;
  out.width = target_w;
  out.labels = ds.labels;
  out.pixels.resize(ds.size() * out.image_size());
  const bool pad = pads_to(ds.height, ds.width, target_h, target_w);
  const std::size_t splane = ds.height * ds.width, tplane = target_h * target_w;
  for (std::size_t i = 0; i < ds.size() * ds.channels; ++i) {
    const auto* src = ds.pixels.data() + i * splane;
    auto* dst = out.pixels.data() + i * tplane;
    if (pad)
      detail::pad_center(src, ds.height, ds.width, dst, target_h, target_w);
    else
      detail::resize_bilinear(src, ds.height, ds.width, dst, target_h, target_w);
  }
  return out;
}

enum class AugmentMode { HFlip, HVFlipAll };

inline AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "hflip") return AugmentMode::HFlip;
  if (s == "hvflip-all") return AugmentMode::HVFlipAll;
  throw RangeError("unknown augment mode '" + s + "' (expected hflip or hvflip-all)");
}

inline void flip_image(std::span<const std::uint8_t> src, std::span<std::uint8_t> dst, std::size_t channels,
                       std::size_t h, std::size_t w, bool horizontal, bool vertical) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = vertical ? h - 1 - y : y;
        const std::size_t sx = horizontal ? w - 1 - x : x;
        dst[(c * h + y) * w + x] = src[(c * h + sy) * w + sx];
      }
}

// Output order: all originals, then every image's flipped copies in turn
// (h; or h, v, hv).
inline ImageDataset augment(const ImageDataset& ds, AugmentMode mode) {
  const std::vector<std::pair<bool, bool>> flips =
      mode == AugmentMode::HFlip ? std::vector<std::pair<bool, bool>>{{true, false}}
                                 : std::vector<std::pair<bool, bool>>{{true, false}, {false, true}, {true, true}};
  ImageDataset out = ds.empty_like();
  out.pixels = ds.pixels;
  out.labels = ds.labels;
  std::vector<std::uint8_t> buf(ds.image_size());
  for (const auto& [h, v] : flips) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      flip_image(ds.image(i), buf, ds.channels, ds.height, ds.width, h, v);
      out.push_back(buf, ds.labels[i]);
    }
  }
  return out;
}

inline std::size_t holdout_size(std::size_t n) { return std::min<std::size_t>(10000, n / 8); }

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x5b1f);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// val = test = min(10000, floor(N/8)), remainder train; seeded shuffle.
inline SplitSpec split(const ImageDataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n < 16) throw RangeError("split: need at least 16 images, got " + std::to_string(n));
  const auto idx = shuffled_indices(n, seed);
  const std::size_t k = holdout_size(n);
  SplitSpec s;
  s.val.assign(idx.begin(), idx.begin() + k);
  s.test.assign(idx.begin() + k, idx.begin() + 2 * k);
  s.train.assign(idx.begin() + 2 * k, idx.end());
  return s;
}

// Datasets that ship an official test split (MNIST: the last 10,000 of
// 70,000) keep it; val is drawn from the remainder with the same size.
inline SplitSpec split_with_test(const ImageDataset& ds, std::vector<std::size_t> test, std::uint64_t seed) {
  const std::size_t n = ds.size();
  std::vector<bool> in_test(n, false);
  for (auto i : test) {
    if (i >= n) throw RangeError("split_with_test: index " + std::to_string(i) + " out of range");
    if (in_test[i]) throw RangeError("split_with_test: duplicate test index " + std::to_string(i));
    in_test[i] = true;
  }
  if (2 * test.size() >= n) throw RangeError("split_with_test: test split leaves no training data");
  SplitSpec s;
  s.test = std::move(test);
  for (auto i : shuffled_indices(n, seed)) {
    if (in_test[i]) continue;
    (s.val.size() < s.test.size() ? s.val : s.train).push_back(i);
  }
  return s;
}

inline ImageDataset subsample(const ImageDataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > ds.size())
    throw RangeError("subsample: k=" + std::to_string(k) + " outside [1, " + std::to_string(ds.size()) + "]");
  auto idx = shuffled_indices(ds.size(), mix_seed(seed, 0xa11));
  idx.resize(k);
  return select(ds, idx);
}

}  // namespace detectlab::datasets
