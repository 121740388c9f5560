#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/random.hpp"

namespace detectlab::datasets {

enum class Family { Constant, Stripes, Shapes, Texture, Noise };

inline constexpr Family kAllFamilies[] = {Family::Constant, Family::Stripes, Family::Shapes, Family::Texture,
                                          Family::Noise};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Constant: return "constant";
    case Family::Stripes: return "stripes";
    case Family::Shapes: return "shapes";
    case Family::Texture: return "texture";
    case Family::Noise: return "noise";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (auto f : kAllFamilies)
    if (s == to_string(f)) return f;
  throw RangeError("unknown procedural family '" + s + "'");
}

struct ProceduralSpec {
  Family family = Family::Constant;
  std::size_t resolution = 32;
  std::size_t channels = 1;
  std::uint32_t num_classes = 2;
  std::size_t count = 2000;
  // Per-image intensity offset drawn from [-level_jitter, level_jitter].
  int level_jitter = 0;
  // Per-pixel intensity noise drawn from [-pixel_jitter, pixel_jitter].
  int pixel_jitter = 0;
  std::uint64_t seed = 0;

  // Family defaults for the jitter knobs.
  static ProceduralSpec of(Family f, std::size_t resolution = 32, std::size_t count = 2000, std::uint64_t seed = 0) {
    ProceduralSpec s;
    s.family = f;
    s.resolution = resolution;
    s.count = count;
    s.seed = seed;
    switch (f) {
      case Family::Constant: break;
      case Family::Stripes: s.pixel_jitter = 1; break;
      case Family::Shapes: s.pixel_jitter = 3; break;
      case Family::Texture: s.level_jitter = 8; break;
      case Family::Noise: break;
    }
    return s;
  }

  std::string name() const {
    return std::string(to_string(family)) + "-" + std::to_string(resolution);
  }
};

namespace detail {

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Class- and channel-dependent base level in [40, 215].
inline double class_level(std::uint32_t k, std::uint32_t classes, std::size_t c) {
  const double t = classes > 1 ? static_cast<double>(k) / (classes - 1) : 0.5;
  const double base = 40.0 + 175.0 * t;
  return c == 0 ? base : 40.0 + std::fmod(base - 40.0 + 61.0 * static_cast<double>(c), 175.0);
}

inline void render_constant(const ProceduralSpec& s, std::uint32_t k, Rng& rng, std::uint8_t* img) {
  const std::size_t plane = s.resolution * s.resolution;
  std::uniform_int_distribution<int> jit(-s.level_jitter, s.level_jitter);
  const int offset = s.level_jitter > 0 ? jit(rng) : 0;
  for (std::size_t c = 0; c < s.channels; ++c)
    std::fill(img + c * plane, img + (c + 1) * plane, to_byte(class_level(k, s.num_classes, c) + offset));
}

// Grating: class picks orientation and frequency, phase is random.
inline void render_stripes(const ProceduralSpec& s, std::uint32_t k, Rng& rng, std::uint8_t* img) {
  const double r = static_cast<double>(s.resolution);
  const double theta = std::numbers::pi * k / std::max<std::uint32_t>(2, s.num_classes);
  const double freq = 2.0 + (k % 3);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  const double phase = phase_dist(rng);
  std::uniform_int_distribution<int> jit(-s.pixel_jitter, s.pixel_jitter);
  const double cx = std::cos(theta), sy = std::sin(theta);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double amp = 90.0 * (1.0 - 0.2 * static_cast<double>(c));
    for (std::size_t y = 0; y < s.resolution; ++y)
      for (std::size_t x = 0; x < s.resolution; ++x) {
        const double u = (cx * static_cast<double>(x) + sy * static_cast<double>(y)) / r;
        const double v = 128.0 + amp * std::sin(2.0 * std::numbers::pi * freq * u + phase);
        img[(c * s.resolution + y) * s.resolution + x] = to_byte(v + (s.pixel_jitter > 0 ? jit(rng) : 0));
      }
  }
}

// 1-3 rectangles (even classes) or discs (odd classes) on a class-level
// background.
inline void render_shapes(const ProceduralSpec& s, std::uint32_t k, Rng& rng, std::uint8_t* img) {
  const std::size_t r = s.resolution;
  const std::size_t plane = r * r;
  std::vector<double> canvas(s.channels * plane);
  for (std::size_t c = 0; c < s.channels; ++c)
    std::fill(canvas.begin() + c * plane, canvas.begin() + (c + 1) * plane, class_level(k, s.num_classes, c) * 0.5);
  std::uniform_int_distribution<int> count_dist(1, 3);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(r));
  std::uniform_real_distribution<double> extent(static_cast<double>(r) / 8.0, static_cast<double>(r) / 3.0);
  std::uniform_real_distribution<double> shade(60.0, 255.0);
  const bool discs = k % 2 == 1;
  const int shapes = count_dist(rng);
  for (int n = 0; n < shapes; ++n) {
    const double x0 = pos(rng), y0 = pos(rng), ex = extent(rng), ey = extent(rng);
    std::vector<double> level(s.channels);
    for (auto& l : level) l = shade(rng);
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - x0, dy = static_cast<double>(y) + 0.5 - y0;
        const bool inside = discs ? dx * dx + dy * dy <= ex * ex : std::abs(dx) <= ex && std::abs(dy) <= ey;
        if (!inside) continue;
        for (std::size_t c = 0; c < s.channels; ++c) canvas[c * plane + y * r + x] = level[c];
      }
  }
  std::uniform_int_distribution<int> jit(-s.pixel_jitter, s.pixel_jitter);
  for (std::size_t i = 0; i < canvas.size(); ++i) img[i] = to_byte(canvas[i] + (s.pixel_jitter > 0 ? jit(rng) : 0));
}

// Gaussian noise smoothed by a 5x5 box filter (periodic boundary), scaled to
// a class-dependent contrast.
inline void render_texture(const ProceduralSpec& s, std::uint32_t k, Rng& rng, std::uint8_t* img) {
  const std::size_t r = s.resolution;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> jit(-s.level_jitter, s.level_jitter);
  const double contrast = 20.0 + 10.0 * static_cast<double>(k % 4);
  const int offset = s.level_jitter > 0 ? jit(rng) : 0;
  std::vector<double> noise(r * r);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (auto& v : noise) v = gauss(rng);
    const double mean = 128.0 + (class_level(k, s.num_classes, c) - 128.0) * 0.25 + offset;
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        double acc = 0.0;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            const std::size_t yy = (y + r + static_cast<std::size_t>(dy + 2) - 2) % r;
            const std::size_t xx = (x + r + static_cast<std::size_t>(dx + 2) - 2) % r;
            acc += noise[yy * r + xx];
          }
        // Box-filtered unit noise has standard deviation 1/5.
        img[(c * r + y) * r + x] = to_byte(mean + contrast * acc / 5.0);
      }
  }
}

inline void render_noise(const ProceduralSpec& s, Rng& rng, std::uint8_t* img) {
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t i = 0; i < s.channels * s.resolution * s.resolution; ++i) img[i] = static_cast<std::uint8_t>(byte(rng));
}

}  // namespace detail

// Image i draws from its own stream mix_seed(seed, i), so any prefix of a
// larger spec is identical to the smaller spec.
inline ImageDataset generate_procedural(const ProceduralSpec& spec) {
  if (spec.resolution == 0) throw RangeError("generate_procedural: resolution must be positive");
  if (spec.channels != 1 && spec.channels != 3) throw RangeError("generate_procedural: channels must be 1 or 3");
  if (spec.num_classes == 0) throw RangeError("generate_procedural: num_classes must be positive");
  if (spec.count == 0) throw RangeError("generate_procedural: count must be positive");
  if (spec.level_jitter < 0 || spec.pixel_jitter < 0) throw RangeError("generate_procedural: jitter must be >= 0");
  ImageDataset ds;
  ds.name = spec.name();
  ds.provenance = Provenance::Procedural;
  ds.channels = spec.channels;
  ds.height = ds.width = spec.resolution;
  ds.num_classes = spec.num_classes;
  ds.pixels.resize(spec.count * ds.image_size());
  ds.labels.resize(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Rng rng = make_rng(spec.seed, i);
    const auto k = std::uniform_int_distribution<std::uint32_t>(0, spec.num_classes - 1)(rng);
    ds.labels[i] = k;
    auto* img = ds.pixels.data() + i * ds.image_size();
    switch (spec.family) {
      case Family::Constant: detail::render_constant(spec, k, rng, img); break;
      case Family::Stripes: detail::render_stripes(spec, k, rng, img); break;
      case Family::Shapes: detail::render_shapes(spec, k, rng, img); break;
      case Family::Texture: detail::render_texture(spec, k, rng, img); break;
      case Family::Noise: detail::render_noise(spec, rng, img); break;
    }
  }
  return ds;
}

}  // namespace detectlab::datasets
