#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab::bayes {

inline constexpr double kMassTolerance = 1e-12;

// Finite distribution over outcomes 0..K-1.
struct DiscreteDistribution {
  std::vector<double> mass;

  DiscreteDistribution() = default;
  explicit DiscreteDistribution(std::vector<double> m) : mass(std::move(m)) { validate(); }

  std::size_t support() const { return mass.size(); }
  double operator[](std::size_t x) const { return mass[x]; }

  void validate() const {
    if (mass.empty()) throw ShapeError("distribution has empty support");
    double total = 0.0;
    for (double m : mass) {
      if (!(m >= 0.0) || !std::isfinite(m)) throw RangeError("distribution masses must be finite and >= 0");
      total += m;
    }
    if (std::abs(total - 1.0) > kMassTolerance)
      throw RangeError("distribution masses sum to " + std::to_string(total) + ", not 1");
  }

  // Normalizes nonnegative weights.
  static DiscreteDistribution from_weights(std::vector<double> w) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) throw RangeError("weights must have positive total");
    for (auto& v : w) v /= total;
    DiscreteDistribution d;
    d.mass = std::move(w);
    d.validate();
    return d;
  }
};

struct DetectionProblem {
  DiscreteDistribution p;  // real
  DiscreteDistribution q;  // generated
  double prior_real = 0.5;

  double prior_fake() const { return 1.0 - prior_real; }

  void validate() const {
    p.validate();
    q.validate();
    if (p.support() != q.support()) throw ShapeError("p and q must share a support");
    if (!(prior_real >= 0.0 && prior_real <= 1.0)) throw RangeError("prior of real must lie in [0, 1]");
  }
};

// m(x) = pi_r p(x) + pi_f q(x).
inline DiscreteDistribution mixture(const DetectionProblem& pr) {
  pr.validate();
  DiscreteDistribution m;
  m.mass.resize(pr.p.support());
  for (std::size_t x = 0; x < m.mass.size(); ++x) m.mass[x] = pr.prior_real * pr.p[x] + pr.prior_fake() * pr.q[x];
  return m;
}

inline double posterior_real(const DetectionProblem& pr, std::size_t x) {
  pr.validate();
  if (x >= pr.p.support()) throw RangeError("posterior_real: outcome " + std::to_string(x) + " outside support");
  const double real = pr.prior_real * pr.p[x];
  const double m = real + pr.prior_fake() * pr.q[x];
  if (m == 0.0) throw RangeError("posterior_real: outcome " + std::to_string(x) + " has zero mixture mass");
  return real / m;
}

inline double posterior_fake(const DetectionProblem& pr, std::size_t x) { return 1.0 - posterior_real(pr, x); }

// Acc* = sum_x max(pi_r p(x), pi_f q(x)).
inline double bayes_accuracy(const DetectionProblem& pr) {
  pr.validate();
  if (pr.p.mass == pr.q.mass) return std::max(pr.prior_real, pr.prior_fake());
  double acc = 0.0;
  for (std::size_t x = 0; x < pr.p.support(); ++x)
    acc += std::max(pr.prior_real * pr.p[x], pr.prior_fake() * pr.q[x]);
  return acc;
}

inline double total_variation(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.support() != q.support()) throw ShapeError("total_variation: supports differ");
  double tv = 0.0;
  for (std::size_t x = 0; x < p.support(); ++x) tv += std::abs(p[x] - q[x]);
  return 0.5 * tv;
}

inline constexpr std::size_t kBruteForceMaxSupport = 20;

// Best accuracy over all 2^K deterministic labelings (bit x set = "real").
inline double brute_force_accuracy(const DetectionProblem& pr) {
  pr.validate();
  const std::size_t k = pr.p.support();
  if (k > kBruteForceMaxSupport)
    throw RangeError("brute_force_accuracy: support " + std::to_string(k) + " exceeds " +
                     std::to_string(kBruteForceMaxSupport));
  double best = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
    double acc = 0.0;
    for (std::size_t x = 0; x < k; ++x)
      acc += (mask >> x & 1) ? pr.prior_real * pr.p[x] : pr.prior_fake() * pr.q[x];
    best = std::max(best, acc);
  }
  return best;
}

struct LabeledOutcome {
  std::size_t outcome;
  bool real;
};

// Histogram estimates with Laplace (+1) smoothing; predicts real when
// pi_r p(x) >= pi_f q(x).
inline double plugin_classifier_accuracy(std::span<const std::size_t> samples_real,
                                         std::span<const std::size_t> samples_fake, double prior_real,
                                         std::span<const LabeledOutcome> heldout, std::size_t support) {
  if (samples_real.empty() || samples_fake.empty()) throw RangeError("plugin_classifier_accuracy: empty sample set");
  if (heldout.empty()) throw RangeError("plugin_classifier_accuracy: empty held-out set");
  if (!(prior_real > 0.0 && prior_real < 1.0)) throw RangeError("plugin_classifier_accuracy: prior must lie in (0, 1)");
  std::vector<double> cp(support, 1.0), cq(support, 1.0);
  for (auto x : samples_real) {
    if (x >= support) throw RangeError("plugin_classifier_accuracy: sample outside support");
    cp[x] += 1.0;
  }
  for (auto x : samples_fake) {
    if (x >= support) throw RangeError("plugin_classifier_accuracy: sample outside support");
    cq[x] += 1.0;
  }
  const double np = static_cast<double>(samples_real.size() + support);
  const double nq = static_cast<double>(samples_fake.size() + support);
  std::size_t correct = 0;
  for (const auto& h : heldout) {
    if (h.outcome >= support) throw RangeError("plugin_classifier_accuracy: held-out outcome outside support");
    const bool says_real = prior_real * cp[h.outcome] / np >= (1.0 - prior_real) * cq[h.outcome] / nq;
    correct += says_real == h.real;
  }
  return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

}  // namespace detectlab::bayes
