#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/graph.hpp"

namespace detectlab::diffusion {

struct DenoiserSpec {
  std::size_t resolution = 32;
  std::size_t channels = 1;
  std::size_t num_classes = 1;
  std::size_t levels = 3;
  std::size_t base_channels = 32;
  std::size_t time_dim = 64;
  bool attention = true;  // one site, lowest resolution

  std::size_t width(std::size_t level) const { return base_channels << level; }

  void validate() const {
    if (levels < 1) throw RangeError("denoiser: levels must be >= 1");
    if (resolution == 0 || channels == 0 || base_channels == 0 || time_dim < 2 || time_dim % 2)
      throw RangeError("denoiser: resolution, channels and base width must be positive, time_dim even");
    if (num_classes == 0) throw RangeError("denoiser: num_classes must be >= 1");
    const std::size_t div = std::size_t{1} << (levels - 1);
    if (resolution % div)
      throw ShapeError("denoiser: resolution " + std::to_string(resolution) + " not divisible by 2^(levels-1) = " +
                       std::to_string(div));
  }
};

namespace detail {

inline std::size_t norm_groups(std::size_t ch) { return ch % 8 == 0 ? 8 : (ch % 4 == 0 ? 4 : 1); }

// conv -> norm -> +time -> relu -> conv(zero) with a residual path.
inline microtensor::NodeId res_block(microtensor::GraphSpec& g, microtensor::NodeId x, microtensor::NodeId emb,
                                     std::size_t ch) {
  using microtensor::Init;
  auto h = g.conv2d(x, ch, 3);
  h = g.group_norm(h, norm_groups(ch));
  h = g.channel_bias(h, g.dense(emb, ch));
  h = g.relu(h);
  h = g.conv2d(h, ch, 3, 1, std::nullopt, Init::Zero);
  const auto skip = g.layer(x).out_shape[0] == ch ? x : g.conv2d(x, ch, 1);
  return g.add(h, skip);
}

}  // namespace detail

// U-Net predicting eps from (x_t, t, label). The embedding also takes the
// per-channel mean of x_t; an embedding bias follows the last norm.
inline microtensor::GraphSpec build_denoiser(const DenoiserSpec& s) {
  using microtensor::Init;
  using microtensor::NodeId;
  s.validate();
  microtensor::GraphSpec g({s.channels, s.resolution, s.resolution});

  NodeId emb = g.add(g.time_embedding(s.time_dim), g.class_embedding(s.num_classes, s.time_dim));
  emb = g.add(emb, g.dense(g.global_avg_pool(g.input()), s.time_dim));
  emb = g.relu(g.dense(emb, 2 * s.time_dim));
  emb = g.relu(g.dense(emb, s.time_dim));

  NodeId h = g.conv2d(g.input(), s.width(0), 3);
  std::vector<NodeId> skips;
  for (std::size_t l = 0; l < s.levels; ++l) {
    if (l > 0) h = g.conv2d(h, s.width(l), 3, 2);
    h = detail::res_block(g, h, emb, s.width(l));
    skips.push_back(h);
  }
  if (s.attention) h = g.attention(h, Init::Zero);
  h = detail::res_block(g, h, emb, s.width(s.levels - 1));
  for (std::size_t l = s.levels - 1; l-- > 0;) {
    h = g.conv2d(g.upsample2(h), s.width(l), 1);
    h = detail::res_block(g, g.concat(h, skips[l]), emb, s.width(l));
  }
  h = g.group_norm(h, detail::norm_groups(s.width(0)));
  h = g.relu(g.channel_bias(h, g.dense(emb, s.width(0))));
  g.set_output(g.conv2d(h, s.channels, 3, 1, std::nullopt, Init::Zero));
  return g;
}

}  // namespace detectlab::diffusion
