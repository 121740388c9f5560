#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/graph.hpp"
#include "detectlab/random.hpp"

namespace detectlab::detectors {

enum class Family { PixelBase, PixelBig, FourierBase, FourierBig, ProbeFrozen, ProbeFinetuned };

inline constexpr std::array kAllFamilies = {Family::PixelBase,   Family::PixelBig,    Family::FourierBase,
                                            Family::FourierBig,  Family::ProbeFrozen, Family::ProbeFinetuned};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::PixelBase: return "pixel-base";
    case Family::PixelBig: return "pixel-big";
    case Family::FourierBase: return "fourier-base";
    case Family::FourierBig: return "fourier-big";
    case Family::ProbeFrozen: return "probe-frozen";
    case Family::ProbeFinetuned: return "probe-finetuned";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (auto f : kAllFamilies)
    if (to_string(f) == s) return f;
  throw RangeError("unknown detector family '" + std::string(s) + "'");
}

inline bool is_fourier(Family f) { return f == Family::FourierBase || f == Family::FourierBig; }
inline bool is_probe(Family f) { return f == Family::ProbeFrozen || f == Family::ProbeFinetuned; }

struct Budget {
  std::size_t min, max;
};

// Trainable-parameter window each family must land in.
inline Budget budget(Family f) {
  switch (f) {
    case Family::PixelBase:
    case Family::FourierBase: return {35'000, 45'000};
    case Family::PixelBig:
    case Family::FourierBig: return {470'000, 570'000};
    case Family::ProbeFrozen: return {1, 1'000};
    case Family::ProbeFinetuned: return {1, 10'000'000};
  }
  return {0, 0};
}

struct DetectorSpec {
  Family family = Family::PixelBase;
  std::size_t channels = 1;
  std::size_t resolution = 32;
};

// Fixed seed of the probe backbone; it plays the role of pretrained weights
// and is shared by every run.
inline constexpr std::uint64_t kProbeBackboneSeed = 0x9b0bac6b0eULL;

namespace detail {

inline microtensor::NodeId conv_stack(microtensor::GraphSpec& g, microtensor::NodeId x,
                                      std::initializer_list<std::size_t> widths) {
  for (auto w : widths) x = g.leaky_relu(g.conv2d(x, w, 3, 2));
  return x;
}

}  // namespace detail

// base: 3 stride-2 conv blocks; big: 5 wider blocks; both end in global
// average pooling and a single-logit dense head. Probes: random backbone
// (frozen or not) plus a linear head.
inline microtensor::GraphSpec detector_graph(const DetectorSpec& s) {
  if (s.channels == 0 || s.resolution == 0) throw ShapeError("detector: empty input geometry");
  microtensor::GraphSpec g({s.channels, s.resolution, s.resolution});
  microtensor::NodeId x = g.input();
  switch (s.family) {
    case Family::PixelBase:
    case Family::FourierBase: x = detail::conv_stack(g, x, {24, 48, 64}); break;
    case Family::PixelBig:
    case Family::FourierBig: x = detail::conv_stack(g, x, {32, 64, 128, 160, 176}); break;
    case Family::ProbeFrozen:
    case Family::ProbeFinetuned:
      g.set_frozen(s.family == Family::ProbeFrozen);
      x = g.relu(g.conv2d(x, 16, 3));
      x = g.relu(g.conv2d(x, 32, 3, 2));
      x = g.relu(g.conv2d(x, 64, 3, 2));
      x = g.relu(g.conv2d(x, 128, 3, 2));
      g.set_frozen(false);
      break;
  }
  g.set_output(g.dense(g.global_avg_pool(x), 1));
  const auto b = budget(s.family);
  const std::size_t n = g.count_params();
  if (n < b.min || n > b.max)
    throw RangeError("detector " + to_string(s.family) + ": " + std::to_string(n) + " trainable params outside [" +
                     std::to_string(b.min) + ", " + std::to_string(b.max) + "]");
  return g;
}

// Probe backbones come from kProbeBackboneSeed; the head (and every other
// family) is initialised from `seed`.
inline microtensor::ParamGraph<float> build_detector(const DetectorSpec& s, std::uint64_t seed) {
  const auto spec = detector_graph(s);
  microtensor::ParamGraph<float> g(spec, mix_seed(seed, 0xde7));
  if (is_probe(s.family)) {
    const microtensor::ParamGraph<float> backbone(spec, kProbeBackboneSeed);
    for (std::size_t i = 0; i + 2 < g.params().size(); ++i) g.params()[i].value = backbone.params()[i].value;
  }
  return g;
}

}  // namespace detectlab::detectors
