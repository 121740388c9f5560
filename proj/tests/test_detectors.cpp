#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "detectlab/datasets/procedural.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/detectors/harness.hpp"
#include "detectlab/diffusion/ddpm.hpp"
#include "detectlab/random.hpp"

using namespace detectlab;
using namespace detectlab::detectors;

namespace {

datasets::ImageDataset flat(std::size_t n, std::size_t res, std::uint8_t value, std::string name) {
  datasets::ImageDataset ds;
  ds.name = std::move(name);
  ds.height = ds.width = res;
  for (std::size_t i = 0; i < n; ++i) ds.push_back(std::vector<std::uint8_t>(res * res, value), 0);
  return ds;
}

struct Splits {
  datasets::ImageDataset train, val, test;
};

Splits cut(const datasets::ImageDataset& ds, std::size_t tr, std::size_t va, std::size_t te) {
  std::vector<std::size_t> a(tr), b(va), c(te);
  std::iota(a.begin(), a.end(), std::size_t{0});
  std::iota(b.begin(), b.end(), tr);
  std::iota(c.begin(), c.end(), tr + va);
  return {datasets::select(ds, a), datasets::select(ds, b), datasets::select(ds, c)};
}

double train_and_score(DetectorSpec spec, const Splits& real, const Splits& fake, std::uint64_t seed,
                       std::size_t iterations) {
  DetectorTrainConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = seed;
  const auto det = train_detector(spec, {&real.train, &real.val, &fake.train, &fake.val}, cfg);
  return evaluate(det, real.test, fake.test).accuracy;
}

}  // namespace

TEST(Fourier, ConstantImage) {
  const std::vector<double> img(4 * 8, 3.0);
  const auto f = fourier_features<double>(img, 1, 4, 8);
  EXPECT_NEAR(f[0], std::log1p(3.0 * 32), 1e-6);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_NEAR(f[i], 0.0, 1e-6);
}

TEST(Fourier, CosineHasTwoBins) {
  const std::size_t h = 8, w = 16, k = 3;
  std::vector<double> img(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img[y * w + x] = std::cos(2 * std::numbers::pi * k * x / w);
  const auto f = fft2d(img, h, w);
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (std::abs(f[i]) > 1e-9) nonzero.push_back(i);
  EXPECT_EQ(nonzero, (std::vector<std::size_t>{k, w - k}));
  EXPECT_NEAR(std::abs(f[k]), h * w / 2.0, 1e-9);
}

// Properties: Parseval and exact circular-shift invariance on random images.
TEST(Fourier, ParsevalAndShiftInvariance) {
  Rng rng = make_rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 16, w = 32;
    std::vector<double> img(h * w);
    for (auto& v : img) v = u(rng);
    const auto f = fft2d(img, h, w);
    double ef = 0, ex = 0;
    for (auto c : f) ef += std::norm(c);
    for (double v : img) ex += v * v;
    EXPECT_NEAR(ef / (h * w * ex), 1.0, 1e-6);
    const std::size_t dy = trial % h, dx = (3 * trial) % w;
    std::vector<double> shifted(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) shifted[((y + dy) % h) * w + (x + dx) % w] = img[y * w + x];
    const auto a = fourier_features<double>(img, 1, h, w), b = fourier_features<double>(shifted, 1, h, w);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-5);
  }
}

TEST(Fourier, RejectsNonPowerOfTwo) {
  const std::vector<double> img(12, 0.0);
  EXPECT_THROW(fourier_features<double>(img, 1, 3, 4), ShapeError);
  EXPECT_THROW(fourier_features<double>(img, 1, 4, 4), ShapeError);
}

TEST(Zoo, ParameterBudgets) {
  for (std::size_t c : {1, 3}) {
    for (auto f : kAllFamilies) {
      const auto spec = detector_graph({f, c, 32});
      const auto n = spec.count_params();
      const auto b = budget(f);
      EXPECT_GE(n, b.min) << to_string(f) << " C=" << c;
      EXPECT_LE(n, b.max) << to_string(f) << " C=" << c;
    }
    EXPECT_LE(detector_graph({Family::ProbeFrozen, c, 32}).count_params(), 1000u);
    EXPECT_GT(detector_graph({Family::ProbeFinetuned, c, 32}).count_params(), 1000u);
  }
  EXPECT_EQ(parse_family("fourier-big"), Family::FourierBig);
  EXPECT_THROW(parse_family("resnet"), RangeError);
}

TEST(Zoo, ProbeBackboneSharedAcrossSeeds) {
  auto a = build_detector({Family::ProbeFrozen, 1, 16}, 1);
  auto b = build_detector({Family::ProbeFrozen, 1, 16}, 2);
  EXPECT_EQ(a.params().front().value, b.params().front().value);
  EXPECT_NE(a.params()[a.params().size() - 2].value, b.params()[b.params().size() - 2].value);
}

TEST(Harness, BlackVersusWhiteIsPerfect) {
  // Not white: |DFT| cannot tell x from -x, so black and white share a spectrum.
  const auto real = cut(flat(300, 16, 0, "black"), 200, 50, 50);
  const auto fake = cut(flat(300, 16, 200, "light"), 200, 50, 50);
  for (auto f : {Family::PixelBase, Family::FourierBase, Family::ProbeFrozen})
    EXPECT_EQ(train_and_score({f}, real, fake, 3, f == Family::FourierBase ? 1000 : 200), 1.0) << to_string(f);
}

TEST(Harness, ConstantLogitScoresHalf) {
  const auto real = flat(10, 8, 0, "r"), fake = flat(10, 8, 255, "f");
  TrainedDetector det;
  det.spec = {Family::PixelBase, 1, 8};
  det.graph = Graph(detector_graph(det.spec), 1);
  det.graph.params()[det.graph.params().size() - 2].value.fill(0.0f);
  det.graph.params().back().value.fill(-1.0f);
  const auto ev = evaluate(det, real, fake);
  EXPECT_EQ(ev.accuracy, 0.5);
  EXPECT_EQ(ev.histogram.fake[9], 10u);
  ASSERT_EQ(ev.per_class.size(), 1u);
  EXPECT_EQ(ev.per_class[0].count, 20u);
  EXPECT_THROW(evaluate(det, datasets::ImageDataset{}, datasets::ImageDataset{}), RangeError);
}

// q = p: "fake" images are fresh samples of the real distribution.
TEST(Harness, SameDistributionNearChance) {
  const auto ds = datasets::generate_procedural(datasets::ProceduralSpec::of(datasets::Family::Shapes, 16, 1200, 4));
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto shuffled = datasets::subsample(ds, ds.size(), seed);
    const auto real = cut(datasets::select(shuffled, [] {
                            std::vector<std::size_t> v(600);
                            std::iota(v.begin(), v.end(), std::size_t{0});
                            return v;
                          }()),
                          400, 100, 100);
    const auto fake = cut(datasets::select(shuffled, [] {
                            std::vector<std::size_t> v(600);
                            std::iota(v.begin(), v.end(), std::size_t{600});
                            return v;
                          }()),
                          400, 100, 100);
    mean += train_and_score({Family::PixelBase}, real, fake, seed, 300) / 5.0;
  }
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
}

// No-leak sanity: labels carry no information when each side is a random
// half of the same black/white mixture.
TEST(Harness, ShuffledLabelsNearChance) {
  auto black = flat(600, 8, 0, "b"), white = flat(600, 8, 255, "w");
  auto both = datasets::concat({&black, &white});
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = datasets::subsample(both, both.size(), 100 + seed);
    std::vector<std::size_t> a(600), b(600);
    std::iota(a.begin(), a.end(), std::size_t{0});
    std::iota(b.begin(), b.end(), std::size_t{600});
    mean += train_and_score({Family::PixelBase}, cut(datasets::select(s, a), 400, 100, 100),
                            cut(datasets::select(s, b), 400, 100, 100), seed, 200) /
            5.0;
  }
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
}

TEST(Harness, DeterministicAndCheckpointRoundTrip) {
  const auto real = cut(datasets::generate_procedural(datasets::ProceduralSpec::of(datasets::Family::Stripes, 8, 300, 1)),
                        200, 50, 50);
  const auto fake = cut(datasets::generate_procedural(datasets::ProceduralSpec::of(datasets::Family::Texture, 8, 300, 2)),
                        200, 50, 50);
  DetectorTrainConfig cfg;
  cfg.iterations = 40;
  cfg.batch = 32;
  cfg.seed = 9;
  const RealFakeSplits data{&real.train, &real.val, &fake.train, &fake.val};
  const auto a = train_detector({Family::FourierBase}, data, cfg);
  const auto b = train_detector({Family::FourierBase}, data, cfg);
  EXPECT_EQ(a.val_loss, b.val_loss);
  EXPECT_EQ(a.val_loss.size(), 4u);  // 13 + 13 + 13 + 1 steps
  EXPECT_EQ(a.best_val_loss, *std::min_element(a.val_loss.begin(), a.val_loss.end()));
  for (std::size_t i = 0; i < a.graph.params().size(); ++i) EXPECT_EQ(a.graph.params()[i].value, b.graph.params()[i].value);
  const auto back = detector_from_checkpoint(microtensor::decode_checkpoint(microtensor::encode_checkpoint(detector_checkpoint(a))));
  EXPECT_EQ(back.transform.mean, a.transform.mean);
  const auto ea = evaluate(a, real.test, fake.test), eb = evaluate(back, real.test, fake.test);
  EXPECT_EQ(ea.accuracy, eb.accuracy);
  EXPECT_EQ(ea.histogram.real, eb.histogram.real);
}

TEST(Harness, RejectsEmptyOrMismatchedPools) {
  const auto a = flat(10, 8, 0, "a"), b = flat(10, 16, 0, "b"), none = datasets::ImageDataset{};
  DetectorTrainConfig cfg;
  EXPECT_THROW(train_detector({}, {&a, &a, &b, &b}, cfg), ShapeError);
  EXPECT_THROW(train_detector({}, {&none, &a, &a, &a}, cfg), RangeError);
}

// End-to-end: stripes at 32x32 against a briefly trained generator.
TEST(EndToEnd, StripesPixelBaseAbove08) {
  const auto ds = datasets::generate_procedural(datasets::ProceduralSpec::of(datasets::Family::Stripes, 16, 1000, 11));
  const auto real = cut(ds, 500, 250, 250);
  diffusion::GeneratorConfig gc;
  gc.denoiser.base_channels = 8;
  gc.denoiser.time_dim = 16;
  gc.timesteps = 50;
  gc.steps = 300;
  gc.seed = 11;
  const auto gen = diffusion::train_generator(real.train, gc);
  const auto fake = diffusion::emit_generated(real.train, real.val, real.test, gen.sampler(), gen.schedule, 500, 11);
  const double acc = train_and_score({Family::PixelBase}, real, {fake.train, fake.val, fake.test}, 11, 1500);
  EXPECT_GT(acc, 0.8);
}
