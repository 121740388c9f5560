#pragma once

// Small f64 graphs, one per layer kind, shared by the unit and acceptance
// gradient checks.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "detectlab/microtensor.hpp"

namespace detectlab::testing {

namespace mt = detectlab::microtensor;

struct LayerCase {
  std::string name;
  std::function<mt::GraphSpec()> build;
  std::size_t batch = 2;
  bool conditional = false;
};

inline std::vector<LayerCase> layer_cases() {
  using mt::GraphSpec;
  std::vector<LayerCase> cases;
  cases.push_back({"conv2d_3x3", [] {
                     GraphSpec g({2, 5, 5});
                     g.conv2d(g.input(), 3, 3);
                     return g;
                   }});
  cases.push_back({"conv2d_stride2", [] {
                     GraphSpec g({2, 6, 6});
                     g.conv2d(g.input(), 3, 3, 2);
                     return g;
                   }});
  cases.push_back({"conv2d_1x1", [] {
                     GraphSpec g({3, 4, 4});
                     g.conv2d(g.input(), 2, 1, 1, 0);
                     return g;
                   }});
  cases.push_back({"dense", [] {
                     GraphSpec g({2, 3, 3});
                     g.dense(g.input(), 4);
                     return g;
                   }});
  cases.push_back({"relu", [] {
                     GraphSpec g({2, 4, 4});
                     g.relu(g.input());
                     return g;
                   }});
  cases.push_back({"leaky_relu", [] {
                     GraphSpec g({2, 4, 4});
                     g.leaky_relu(g.input(), 0.2);
                     return g;
                   }});
  cases.push_back({"avg_pool2", [] {
                     GraphSpec g({2, 4, 4});
                     g.avg_pool2(g.input());
                     return g;
                   }});
  cases.push_back({"global_avg_pool", [] {
                     GraphSpec g({3, 3, 3});
                     g.global_avg_pool(g.input());
                     return g;
                   }});
  cases.push_back({"upsample2", [] {
                     GraphSpec g({2, 3, 3});
                     g.upsample2(g.input());
                     return g;
                   }});
  cases.push_back({"group_norm", [] {
                     GraphSpec g({4, 3, 3});
                     auto h = g.conv2d(g.input(), 4, 1, 1, 0);
                     g.group_norm(h, 2);
                     return g;
                   }});
  cases.push_back({"attention", [] {
                     GraphSpec g({4, 3, 3});
                     g.attention(g.input());
                     return g;
                   }});
  cases.push_back({"add", [] {
                     GraphSpec g({2, 4, 4});
                     auto a = g.conv2d(g.input(), 2, 3);
                     g.add(a, g.input());
                     return g;
                   }});
  cases.push_back({"concat", [] {
                     GraphSpec g({2, 4, 4});
                     auto a = g.conv2d(g.input(), 3, 3);
                     g.concat(g.input(), a);
                     return g;
                   }});
  cases.push_back({"channel_bias+time_embedding", [] {
                     GraphSpec g({3, 4, 4});
                     auto t = g.time_embedding(8);
                     auto v = g.dense(t, 3);
                     g.channel_bias(g.input(), v);
                     return g;
                   }, 2, true});
  cases.push_back({"class_embedding", [] {
                     GraphSpec g({3, 4, 4});
                     auto y = g.class_embedding(3, 3);
                     auto h = g.conv2d(g.input(), 3, 3);
                     g.channel_bias(h, y);
                     return g;
                   }, 2, true});
  cases.push_back({"conv_relu_dense_stack", [] {
                     GraphSpec g({1, 6, 6});
                     auto h = g.conv2d(g.input(), 3, 3, 2);
                     h = g.relu(h);
                     g.dense(h, 2);
                     return g;
                   }});
  return cases;
}

// True when any ReLU/LeakyReLU input lies within `margin` of the kink.
inline bool near_kink(const mt::ParamGraph<double>& g, double margin = 1e-2) {
  const auto& layers = g.spec().layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != mt::LayerKind::ReLU && layers[i].kind != mt::LayerKind::LeakyReLU) continue;
    for (double v : g.activation(mt::NodeId{layers[i].inputs[0]}).values())
      if (std::abs(v) < margin) return true;
  }
  return false;
}

struct TrialOutcome {
  double max_rel_err = 0.0;
  bool passed = false;
  std::string worst;
};

// One seeded trial: random params, input, condition and loss weights; input
// redrawn until no activation sits within 1e-2 of a ReLU kink.
inline TrialOutcome run_trial(const LayerCase& lc, std::uint64_t seed, double tolerance) {
  mt::ParamGraph<double> g(lc.build(), seed);
  std::mt19937_64 rng(seed * 7919 + 17);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Perturb zero-initialized biases and norm affines so every path is exercised.
  for (auto& p : g.params())
    for (auto& v : p.value.values()) v += 0.3 * normal(rng);

  mt::Shape shape{lc.batch};
  for (auto d : g.spec().input_shape()) shape.push_back(d);
  mt::Condition cond;
  const mt::Condition* cptr = nullptr;
  if (lc.conditional) {
    std::uniform_int_distribution<int> t(1, 200), y(0, 2);
    for (std::size_t b = 0; b < lc.batch; ++b) {
      cond.timesteps.push_back(t(rng));
      cond.labels.push_back(y(rng));
    }
    if (!g.spec().uses_time()) cond.timesteps.clear();
    if (!g.spec().uses_class()) cond.labels.clear();
    cptr = &cond;
  }

  mt::Tensor<double> x(shape);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (auto& v : x.values()) v = normal(rng);
    g.forward(x, cptr);
    if (!near_kink(g)) break;
  }

  const mt::Tensor<double> out = g.forward(x, cptr);
  std::vector<double> weights(out.size());
  for (auto& w : weights) w = normal(rng);
  mt::LossFn loss = [&](const mt::Tensor<double>& o, mt::Tensor<double>& up) {
    double l = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      l += weights[i] * o[i] + 0.25 * o[i] * o[i];
      up[i] = weights[i] + 0.5 * o[i];
    }
    return l;
  };
  const auto report = mt::grad_check(g, x, cptr, loss, tolerance, 1e-4);
  TrialOutcome res{report.max_rel_err, report.passed, ""};
  for (const auto& e : report.entries)
    if (e.max_rel_err == report.max_rel_err) res.worst = e.name;
  return res;
}

}  // namespace detectlab::testing
