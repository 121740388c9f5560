#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "detectlab/csv.hpp"
#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/detectors/fourier.hpp"
#include "detectlab/detectors/zoo.hpp"
#include "detectlab/error.hpp"
#include "detectlab/microtensor/checkpoint.hpp"
#include "detectlab/microtensor/loss.hpp"
#include "detectlab/microtensor/optim.hpp"
#include "detectlab/random.hpp"

namespace detectlab::detectors {

using microtensor::Tensor;
using Graph = microtensor::ParamGraph<float>;

// Pixels map to [-1, 1]; Fourier inputs are log-magnitude spectra of that,
// standardised per channel with statistics from the training pool.
struct InputTransform {
  bool fourier = false;
  std::vector<float> mean, stddev;

  Tensor<float> apply(const datasets::ImageDataset& ds, std::size_t first = 0,
                      std::size_t count = std::numeric_limits<std::size_t>::max()) const {
    count = std::min(count, ds.size() - first);
    const std::size_t per = ds.image_size(), hw = ds.height * ds.width;
    Tensor<float> x({count, ds.channels, ds.height, ds.width});
    std::vector<float> unit(per);
    for (std::size_t b = 0; b < count; ++b) {
      const auto img = ds.image(first + b);
      for (std::size_t i = 0; i < per; ++i) unit[i] = static_cast<float>(img[i]) / 127.5f - 1.0f;
      float* dst = x.data() + b * per;
      if (!fourier) {
        std::copy(unit.begin(), unit.end(), dst);
        continue;
      }
      const auto f = fourier_features<float>(unit, ds.channels, ds.height, ds.width);
      for (std::size_t c = 0; c < ds.channels; ++c)
        for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] = (f[c * hw + i] - mean[c]) / stddev[c];
    }
    return x;
  }

  static InputTransform pixels() { return {}; }

  static InputTransform fit_fourier(const std::vector<const datasets::ImageDataset*>& pool) {
    InputTransform t;
    t.fourier = true;
    const std::size_t c = pool.front()->channels;
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    double count = 0;
    InputTransform raw{true, std::vector<float>(c, 0.0f), std::vector<float>(c, 1.0f)};
    for (const auto* ds : pool) {
      const auto x = raw.apply(*ds);
      const std::size_t hw = ds->height * ds->width;
      for (std::size_t b = 0; b < ds->size(); ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i) {
            const double v = x[(b * c + ch) * hw + i];
            sum[ch] += v;
            sq[ch] += v * v;
          }
      count += static_cast<double>(ds->size() * hw);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double m = sum[ch] / count;
      const double var = std::max(sq[ch] / count - m * m, 0.0);
      t.mean.push_back(static_cast<float>(m));
      t.stddev.push_back(static_cast<float>(std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0));
    }
    return t;
  }
};

struct DetectorTrainConfig {
  std::size_t iterations = 3000;
  std::size_t batch = 64;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
};

struct TrainedDetector {
  DetectorSpec spec;
  InputTransform transform;
  Graph graph;  // weights from the epoch with the lowest validation loss
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

struct RealFakeSplits {
  const datasets::ImageDataset* real_train;
  const datasets::ImageDataset* real_val;
  const datasets::ImageDataset* fake_train;
  const datasets::ImageDataset* fake_val;
};

namespace detail {

// Mean BCE over real (y=1) and fake (y=0) sets.
inline double mean_bce(Graph& g, const InputTransform& tf, const datasets::ImageDataset& real,
                       const datasets::ImageDataset& fake, std::size_t batch = 256) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto* ds : {&real, &fake}) {
    const float y = ds == &real ? 1.0f : 0.0f;
    for (std::size_t b0 = 0; b0 < ds->size(); b0 += batch) {
      const auto x = tf.apply(*ds, b0, batch);
      const std::vector<float> targets(x.dim(0), y);
      total += microtensor::bce_with_logits(g.forward(x), targets) * static_cast<double>(x.dim(0));
      n += x.dim(0);
    }
  }
  g.release_tape();
  return total / static_cast<double>(n);
}

inline std::string curve_dump(const TrainedDetector& d) {
  std::ostringstream os;
  os << "train_loss=[";
  for (std::size_t i = 0; i < d.train_loss.size(); ++i) os << (i ? "," : "") << d.train_loss[i];
  os << "] val_loss=[";
  for (std::size_t i = 0; i < d.val_loss.size(); ++i) os << (i ? "," : "") << d.val_loss[i];
  os << "]";
  return os.str();
}

}  // namespace detail

// Balanced epochs: each epoch draws min(|real|, |fake|) images from both
// training pools, shuffles, and runs one pass; validation after every epoch.
inline TrainedDetector train_detector(const DetectorSpec& spec, const RealFakeSplits& data,
                                      const DetectorTrainConfig& cfg) {
  const auto& rt = *data.real_train;
  const auto& ft = *data.fake_train;
  if (rt.size() == 0 || ft.size() == 0) throw RangeError("train_detector: empty training pool");
  if (data.real_val->size() == 0 || data.fake_val->size() == 0) throw RangeError("train_detector: empty validation set");
  if (rt.channels != ft.channels || rt.height != ft.height || rt.width != ft.width)
    throw ShapeError("train_detector: real and generated images differ in geometry");
  if (cfg.iterations == 0 || cfg.batch == 0) throw RangeError("train_detector: iterations and batch must be >= 1");

  TrainedDetector out;
  out.spec = spec;
  out.spec.channels = rt.channels;
  out.spec.resolution = rt.height;
  out.transform = is_fourier(spec.family) ? InputTransform::fit_fourier({&rt, &ft}) : InputTransform::pixels();
  Graph g = build_detector(out.spec, cfg.seed);
  out.graph = g;
  microtensor::OptimizerState<float> opt(g, {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay},
                                         microtensor::LrSchedule::constant(cfg.lr, cfg.iterations));

  const Tensor<float> real_x = out.transform.apply(rt), fake_x = out.transform.apply(ft);
  const std::size_t per = rt.image_size();
  const std::size_t half = std::min(rt.size(), ft.size());
  Rng rng = make_rng(cfg.seed, 0xba1);
  std::vector<std::size_t> real_idx(rt.size()), fake_idx(ft.size());
  std::vector<std::pair<bool, std::size_t>> pool;
  std::size_t step = 0;
  while (step < cfg.iterations) {
    std::iota(real_idx.begin(), real_idx.end(), std::size_t{0});
    std::iota(fake_idx.begin(), fake_idx.end(), std::size_t{0});
    std::shuffle(real_idx.begin(), real_idx.end(), rng);
    std::shuffle(fake_idx.begin(), fake_idx.end(), rng);
    pool.clear();
    for (std::size_t i = 0; i < half; ++i) {
      pool.emplace_back(true, real_idx[i]);
      pool.emplace_back(false, fake_idx[i]);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < pool.size() && step < cfg.iterations; b0 += cfg.batch, ++step) {
      const std::size_t nb = std::min(cfg.batch, pool.size() - b0);
      Tensor<float> x({nb, rt.channels, rt.height, rt.width});
      std::vector<float> y(nb);
      for (std::size_t b = 0; b < nb; ++b) {
        const auto [real, idx] = pool[b0 + b];
        const Tensor<float>& src = real ? real_x : fake_x;
        std::copy_n(src.data() + idx * per, per, x.data() + b * per);
        y[b] = real ? 1.0f : 0.0f;
      }
      Tensor<float> grad;
      const double loss = microtensor::bce_with_logits(g.forward(x), y, &grad);
      if (!std::isfinite(loss))
        throw NumericError("detector training diverged at iteration " + std::to_string(step) + "; " +
                           detail::curve_dump(out));
      g.backward(grad);
      microtensor::adamw_step(opt, g);
      epoch_loss += loss * static_cast<double>(nb);
      seen += nb;
    }
    out.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    const double val = detail::mean_bce(g, out.transform, *data.real_val, *data.fake_val);
    if (!std::isfinite(val))
      throw NumericError("detector validation loss is not finite after epoch " + std::to_string(out.val_loss.size()) +
                         "; " + detail::curve_dump(out));
    out.val_loss.push_back(val);
    if (val < out.best_val_loss) {
      out.best_val_loss = val;
      out.best_epoch = out.val_loss.size() - 1;
      out.graph = g;
      out.graph.release_tape();
    }
  }
  return out;
}

struct LogitHistogram {
  double lo = -10.0, hi = 10.0;
  std::vector<std::size_t> real, fake;  // bins over [lo, hi], outliers clamped into the end bins
};

struct ClassAccuracy {
  std::uint32_t label;
  std::size_t count;
  double accuracy;
};

struct Evaluation {
  double accuracy = 0.0;
  std::size_t correct = 0, total = 0;
  std::vector<ClassAccuracy> per_class;
  LogitHistogram histogram;
};

// Prediction "real" iff logit >= 0.
inline Evaluation evaluate(const TrainedDetector& det, const datasets::ImageDataset& real_test,
                           const datasets::ImageDataset& fake_test, std::size_t bins = 20) {
  if (real_test.size() == 0 && fake_test.size() == 0) throw RangeError("evaluate: empty test set");
  Graph g = det.graph;
  Evaluation ev;
  ev.histogram.real.assign(bins, 0);
  ev.histogram.fake.assign(bins, 0);
  std::vector<std::size_t> class_total, class_correct;
  for (const auto* ds : {&real_test, &fake_test}) {
    const bool real = ds == &real_test;
    for (std::size_t b0 = 0; b0 < ds->size(); b0 += 256) {
      const auto logits = g.forward(det.transform.apply(*ds, b0, 256));
      for (std::size_t b = 0; b < logits.size(); ++b) {
        const double z = logits[b];
        const bool ok = (z >= 0.0) == real;
        ev.correct += ok;
        ++ev.total;
        const std::uint32_t label = ds->labels[b0 + b];
        if (label >= class_total.size()) {
          class_total.resize(label + 1, 0);
          class_correct.resize(label + 1, 0);
        }
        ++class_total[label];
        class_correct[label] += ok;
        const double pos = (z - ev.histogram.lo) / (ev.histogram.hi - ev.histogram.lo) * static_cast<double>(bins);
        const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins) - 1.0));
        (real ? ev.histogram.real : ev.histogram.fake)[bin]++;
      }
    }
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  for (std::size_t c = 0; c < class_total.size(); ++c)
    if (class_total[c])
      ev.per_class.push_back({static_cast<std::uint32_t>(c), class_total[c],
                              static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c])});
  return ev;
}

inline microtensor::Checkpoint detector_checkpoint(const TrainedDetector& det) {
  auto ckpt = microtensor::graph_state(det.graph);
  const std::vector<float> meta{static_cast<float>(static_cast<int>(det.spec.family)),
                                static_cast<float>(det.spec.channels), static_cast<float>(det.spec.resolution),
                                det.transform.fourier ? 1.0f : 0.0f};
  ckpt.push_back({"meta/detector", Tensor<float>({meta.size()}, meta)});
  if (det.transform.fourier) {
    ckpt.push_back({"meta/fourier_mean", Tensor<float>({det.transform.mean.size()}, det.transform.mean)});
    ckpt.push_back({"meta/fourier_std", Tensor<float>({det.transform.stddev.size()}, det.transform.stddev)});
  }
  return ckpt;
}

inline TrainedDetector detector_from_checkpoint(const microtensor::Checkpoint& ckpt) {
  const auto* meta = microtensor::find_tensor(ckpt, "meta/detector");
  if (!meta || meta->size() != 4) throw ParseError("checkpoint is not a detector checkpoint (missing meta/detector)", 0);
  TrainedDetector det;
  const int fam = static_cast<int>((*meta)[0]);
  if (fam < 0 || fam >= static_cast<int>(kAllFamilies.size())) throw ParseError("detector checkpoint: bad family", 0);
  det.spec = {static_cast<Family>(fam), static_cast<std::size_t>((*meta)[1]), static_cast<std::size_t>((*meta)[2])};
  if ((*meta)[3] != 0.0f) {
    const auto* m = microtensor::find_tensor(ckpt, "meta/fourier_mean");
    const auto* s = microtensor::find_tensor(ckpt, "meta/fourier_std");
    if (!m || !s) throw ParseError("detector checkpoint: missing Fourier statistics", 0);
    det.transform = {true, m->storage(), s->storage()};
  }
  det.graph = Graph(detector_graph(det.spec), 0);
  microtensor::load_graph_state(det.graph, ckpt);
  return det;
}

inline const csv::Row kMetricsHeader = {"family", "dataset", "seed", "val_loss", "test_accuracy"};

inline csv::Row metrics_row(const TrainedDetector& det, const std::string& dataset, std::uint64_t seed,
                            const Evaluation& ev) {
  return {to_string(det.spec.family), dataset, std::to_string(seed), csv::number(det.best_val_loss, 6),
          csv::number(ev.accuracy, 6)};
}

}  // namespace detectlab::detectors
