#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/diffusion/schedule.hpp"
#include "detectlab/diffusion/unet.hpp"
#include "detectlab/error.hpp"
#include "detectlab/microtensor/checkpoint.hpp"
#include "detectlab/microtensor/graph.hpp"
#include "detectlab/microtensor/loss.hpp"
#include "detectlab/microtensor/optim.hpp"
#include "detectlab/parallel.hpp"
#include "detectlab/random.hpp"

namespace detectlab::diffusion {

using microtensor::Tensor;
using Graph = microtensor::ParamGraph<float>;

// u8 <-> [-1, 1]
inline float to_unit(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

inline std::uint8_t to_byte(float x) {
  const double v = std::round(255.0 * (static_cast<double>(x) + 1.0) / 2.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

inline Tensor<float> batch_tensor(const datasets::ImageDataset& ds, std::span<const std::size_t> idx) {
  Tensor<float> x({idx.size(), ds.channels, ds.height, ds.width});
  const std::size_t per = ds.image_size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto img = ds.image(idx[b]);
    for (std::size_t i = 0; i < per; ++i) x[b * per + i] = to_unit(img[i]);
  }
  return x;
}

struct TrainStepResult {
  double loss = 0.0;
  double lr = 0.0;
};

// One eps-prediction step: t ~ U{1..T}, eps ~ N(0, I) per item, MSE, AdamW, EMA.
inline TrainStepResult train_step(Graph& graph, const Tensor<float>& x0, std::span<const int> labels,
                                  const NoiseSchedule& schedule, microtensor::OptimizerState<float>& opt, Rng& rng,
                                  double ema_decay) {
  const std::size_t n = x0.dim(0);
  if (labels.size() != n) throw ShapeError("train_step: one label per image required");
  std::uniform_int_distribution<int> pick_t(1, static_cast<int>(schedule.steps()));
  std::normal_distribution<float> normal;
  microtensor::Condition cond;
  cond.labels.assign(labels.begin(), labels.end());
  for (std::size_t b = 0; b < n; ++b) cond.timesteps.push_back(pick_t(rng));
  Tensor<float> eps(x0.shape());
  for (auto& v : eps.values()) v = normal(rng);
  const auto xt = forward_noise(x0, cond.timesteps, eps, schedule);
  const auto pred = graph.forward(xt, &cond);
  Tensor<float> grad;
  const double loss = microtensor::mse(pred, eps, &grad);
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "diffusion training diverged at step " << opt.step_count << ": loss " << loss << ", lr " << opt.current_lr()
       << ", timesteps [" << *std::min_element(cond.timesteps.begin(), cond.timesteps.end()) << ", "
       << *std::max_element(cond.timesteps.begin(), cond.timesteps.end()) << "]";
    throw NumericError(os.str());
  }
  graph.backward(grad);
  const double lr = opt.current_lr();
  try {
    microtensor::adamw_step(opt, graph);
  } catch (const NumericError& e) {
    throw NumericError("diffusion training diverged at step " + std::to_string(opt.step_count) + ": " + e.what());
  }
  if (graph.has_ema()) microtensor::ema_update(graph, ema_decay);
  return {loss, lr};
}

// Mean eps-MSE on fixed draws; used to compare raw and EMA weights.
inline double denoise_loss(Graph& graph, const datasets::ImageDataset& ds, const NoiseSchedule& schedule,
                           std::uint64_t seed, std::size_t batch = 64) {
  Rng rng = make_rng(seed, 0xe7a1);
  std::uniform_int_distribution<int> pick_t(1, static_cast<int>(schedule.steps()));
  std::normal_distribution<float> normal;
  double total = 0.0;
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += batch) {
    std::vector<std::size_t> idx(std::min(batch, ds.size() - b0));
    std::iota(idx.begin(), idx.end(), b0);
    const auto x0 = batch_tensor(ds, idx);
    microtensor::Condition cond;
    for (auto i : idx) {
      cond.labels.push_back(static_cast<int>(ds.labels[i]));
      cond.timesteps.push_back(pick_t(rng));
    }
    Tensor<float> eps(x0.shape());
    for (auto& v : eps.values()) v = normal(rng);
    total += microtensor::mse(graph.forward(forward_noise(x0, cond.timesteps, eps, schedule), &cond), eps) *
             static_cast<double>(idx.size());
  }
  graph.release_tape();
  return total / static_cast<double>(ds.size());
}

// Ancestral sampling of a batch; item b uses only its own stream seeds[b], so
// the result for an item does not depend on which other items share the batch
// beyond floating-point reassociation inside the convolutions.
inline Tensor<float> sample_batch(Graph& graph, const NoiseSchedule& schedule, std::span<const int> labels,
                                  std::span<const std::uint64_t> seeds) {
  if (labels.size() != seeds.size() || labels.empty()) throw ShapeError("sample: one seed per label required");
  const std::size_t n = labels.size();
  microtensor::Shape shape{n};
  const auto& in = graph.spec().input_shape();
  shape.insert(shape.end(), in.begin(), in.end());
  Tensor<float> x(shape);
  const std::size_t per = x.size() / n;
  std::vector<Rng> rngs;
  std::vector<std::normal_distribution<double>> normals(n);
  for (auto s : seeds) rngs.emplace_back(s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < per; ++i) x[b * per + i] = static_cast<float>(normals[b](rngs[b]));
  microtensor::Condition cond;
  cond.labels.assign(labels.begin(), labels.end());
  const bool conditional = graph.spec().conditional();
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    cond.timesteps.assign(n, static_cast<int>(t));
    const auto eps = graph.forward(x, conditional ? &cond : nullptr);
    const double beta = schedule.beta(t), abar = schedule.alpha_bar(t);
    const double abar_prev = t > 1 ? schedule.alpha_bar(t - 1) : 1.0;
    // Posterior q(x_{t-1} | x_t, x0) with x0 estimated from eps and clipped
    // to the data range: mean = c0 * x0 + ct * x_t, variance
    // beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    const double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double ct = std::sqrt(schedule.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
    const double sigma = t > 1 ? std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta) : 0.0;
    const double inv_sqrt_abar = 1.0 / std::sqrt(abar), noise_scale = std::sqrt(1.0 - abar);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        const double x0 = std::clamp((x[i] - noise_scale * eps[i]) * inv_sqrt_abar, -1.0, 1.0);
        double v = c0 * x0 + ct * x[i];
        if (t > 1) v += sigma * normals[b](rngs[b]);
        x[i] = static_cast<float>(v);
      }
  }
  graph.release_tape();
  for (auto& v : x.values()) v = std::clamp(v, -1.0f, 1.0f);
  return x;
}

inline Tensor<float> sample(Graph& graph, const NoiseSchedule& schedule, int label, std::uint64_t seed) {
  const int labels[1] = {label};
  const std::uint64_t seeds[1] = {seed};
  return sample_batch(graph, schedule, labels, seeds);
}

struct GeneratorConfig {
  DenoiserSpec denoiser;
  std::size_t timesteps = 200;
  double beta_start = 0.0;  // 0 selects the scaled linear ramp for `timesteps`
  double beta_end = 0.0;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  double ema_decay = 0.995;
  std::size_t sample_batch = 32;
  std::uint64_t seed = 0;

  NoiseSchedule schedule() const {
    if (beta_start == 0.0 && beta_end == 0.0) return NoiseSchedule::scaled_linear(timesteps);
    return NoiseSchedule(timesteps, beta_start, beta_end);
  }
};

struct TrainedGenerator {
  DenoiserSpec spec;
  NoiseSchedule schedule;
  Graph graph;  // raw weights plus EMA shadow
  std::vector<double> losses;

  // Sampling network (EMA weights when present).
  Graph sampler() const { return graph.has_ema() ? graph.ema_copy() : graph; }
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

inline TrainedGenerator train_generator(const datasets::ImageDataset& train, GeneratorConfig cfg,
                                        const ProgressFn& progress = {}) {
  train.validate();
  if (train.height != train.width) throw ShapeError("train_generator: square images required");
  if (cfg.steps == 0 || cfg.batch == 0) throw RangeError("train_generator: steps and batch must be >= 1");
  cfg.denoiser.resolution = train.height;
  cfg.denoiser.channels = train.channels;
  cfg.denoiser.num_classes = std::max<std::size_t>(1, train.num_classes);
  TrainedGenerator out{cfg.denoiser, cfg.schedule(), Graph(build_denoiser(cfg.denoiser), cfg.seed), {}};
  out.graph.enable_ema();
  microtensor::OptimizerState<float> opt(out.graph, {0.9, 0.999, 1e-8, cfg.weight_decay},
                                         microtensor::LrSchedule::one_cycle(cfg.lr, cfg.steps));
  Rng rng = make_rng(cfg.seed, 0xd1ff);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<std::size_t> idx(std::min(cfg.batch, train.size()));
  std::vector<int> labels(idx.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx[b] = order[cursor++];
      labels[b] = static_cast<int>(train.labels[idx[b]]);
    }
    const auto r = train_step(out.graph, batch_tensor(train, idx), labels, out.schedule, opt, rng, cfg.ema_decay);
    out.losses.push_back(r.loss);
    if (progress) progress(step, r.loss);
  }
  out.graph.release_tape();
  return out;
}

// Checkpoint metadata. Doubles are split into four 16-bit pieces so they
// survive the f32 payload exactly.
namespace detail {

inline void put_f64(std::vector<float>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>((bits >> (16 * k)) & 0xffff));
}

inline double get_f64(const float* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (16 * k);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline microtensor::Checkpoint generator_checkpoint(const TrainedGenerator& gen) {
  auto ckpt = microtensor::graph_state(gen.graph);
  const auto& s = gen.spec;
  std::vector<float> spec{static_cast<float>(s.resolution),    static_cast<float>(s.channels),
                          static_cast<float>(s.num_classes),   static_cast<float>(s.levels),
                          static_cast<float>(s.base_channels), static_cast<float>(s.time_dim),
                          s.attention ? 1.0f : 0.0f};
  ckpt.push_back({"meta/denoiser", Tensor<float>({spec.size()}, spec)});
  std::vector<float> sched{static_cast<float>(gen.schedule.steps())};
  detail::put_f64(sched, gen.schedule.beta_start());
  detail::put_f64(sched, gen.schedule.beta_end());
  ckpt.push_back({"meta/schedule", Tensor<float>({sched.size()}, sched)});
  return ckpt;
}

inline TrainedGenerator generator_from_checkpoint(const microtensor::Checkpoint& ckpt) {
  const auto* spec = microtensor::find_tensor(ckpt, "meta/denoiser");
  const auto* sched = microtensor::find_tensor(ckpt, "meta/schedule");
  if (!spec || spec->size() != 7 || !sched || sched->size() != 9)
    throw ParseError("checkpoint is not a generator checkpoint (missing meta/denoiser or meta/schedule)", 0);
  TrainedGenerator gen;
  auto u = [&](std::size_t i) { return static_cast<std::size_t>((*spec)[i]); };
  gen.spec = {u(0), u(1), u(2), u(3), u(4), u(5), (*spec)[6] != 0.0f};
  gen.schedule = NoiseSchedule(static_cast<std::size_t>((*sched)[0]), detail::get_f64(sched->data() + 1),
                               detail::get_f64(sched->data() + 5));
  gen.graph = Graph(build_denoiser(gen.spec), 0);
  microtensor::load_graph_state(gen.graph, ckpt);
  return gen;
}

inline void save_generator(const std::string& path, const TrainedGenerator& gen) {
  microtensor::save_checkpoint(path, generator_checkpoint(gen));
}

inline TrainedGenerator load_generator(const std::string& path) {
  return generator_from_checkpoint(microtensor::load_checkpoint(path));
}

// Samples one image per label into a dataset. Jobs are fixed chunks of
// `chunk` consecutive indices, so output bytes do not depend on `threads`.
inline datasets::ImageDataset generate_images(const Graph& sampler, const NoiseSchedule& schedule,
                                              std::span<const std::uint32_t> labels, std::uint64_t seed,
                                              std::size_t chunk, std::size_t threads) {
  const auto& in = sampler.spec().input_shape();
  datasets::ImageDataset ds;
  ds.provenance = datasets::Provenance::Generated;
  ds.channels = in[0];
  ds.height = in[1];
  ds.width = in[2];
  ds.num_classes = sampler.spec().num_classes();
  ds.labels.assign(labels.begin(), labels.end());
  ds.pixels.resize(labels.size() * ds.image_size());
  chunk = std::max<std::size_t>(1, chunk);
  const std::size_t jobs = (labels.size() + chunk - 1) / chunk;
  std::vector<Graph> nets(std::max<std::size_t>(1, std::min(threads, jobs)), sampler);
  parallel_for(jobs, nets.size(), [&](std::size_t w, std::size_t j) {
    const std::size_t b0 = j * chunk, nb = std::min(chunk, labels.size() - b0);
    std::vector<int> lab(nb);
    std::vector<std::uint64_t> seeds(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      lab[b] = static_cast<int>(labels[b0 + b]);
      seeds[b] = mix_seed(seed, b0 + b);
    }
    const auto x = sample_batch(nets[w], schedule, lab, seeds);
    std::transform(x.values().begin(), x.values().end(), ds.pixels.begin() + b0 * ds.image_size(), to_byte);
  });
  return ds;
}

struct GeneratedSplits {
  datasets::ImageDataset train, val, test;
};

// Generated sets sized like the real splits (train capped). Labels copy the
// real label multiset; a capped train split uses a seeded subset of it.
inline GeneratedSplits emit_generated(const datasets::ImageDataset& real_train, const datasets::ImageDataset& real_val,
                                      const datasets::ImageDataset& real_test, const Graph& sampler,
                                      const NoiseSchedule& schedule, std::size_t cap, std::uint64_t seed,
                                      std::size_t chunk = 32, std::size_t threads = 1) {
  if (cap == 0) throw RangeError("emit_generated: cap must be >= 1");
  std::vector<std::uint32_t> train_labels = real_train.labels;
  if (cap < train_labels.size()) {
    Rng rng = make_rng(seed, 0xcab);
    std::shuffle(train_labels.begin(), train_labels.end(), rng);
    train_labels.resize(cap);
    std::sort(train_labels.begin(), train_labels.end());
  }
  auto emit = [&](const std::vector<std::uint32_t>& labels, std::uint64_t stream, const std::string& name) {
    auto ds = labels.empty() ? datasets::ImageDataset{}
                             : generate_images(sampler, schedule, labels, mix_seed(seed, stream), chunk, threads);
    ds.name = name;
    return ds;
  };
  return {emit(train_labels, 1, real_train.name + "-gen"), emit(real_val.labels, 2, real_val.name + "-gen"),
          emit(real_test.labels, 3, real_test.name + "-gen")};
}

}  // namespace detectlab::diffusion
