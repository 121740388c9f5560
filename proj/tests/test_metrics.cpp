#include <gtest/gtest.h>

#include <cmath>

#include "detectlab/datasets/procedural.hpp"
#include "detectlab/metrics/features.hpp"
#include "detectlab/metrics/frechet.hpp"
#include "detectlab/metrics/stats.hpp"
#include "detectlab/random.hpp"

using namespace detectlab;
using namespace detectlab::metrics;

namespace {

GaussianFit fit1d(double mu, double var) {
  GaussianFit f;
  f.mean = Eigen::VectorXd::Constant(1, mu);
  f.cov = Eigen::MatrixXd::Constant(1, 1, var);
  f.count = 100;
  return f;
}

Eigen::MatrixXd random_psd(int d, Rng& rng, int rank = -1) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(d, rank < 0 ? d : rank);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  return a * a.transpose() / d;
}

GaussianFit random_fit(int d, Rng& rng) {
  std::normal_distribution<double> g;
  GaussianFit f;
  f.mean = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) f.mean[i] = g(rng);
  f.cov = random_psd(d, rng);
  f.count = 1000;
  return f;
}

}  // namespace

TEST(Frechet, ClosedForms1D) {
  EXPECT_NEAR(frechet_distance(fit1d(0, 1), fit1d(1, 1)), 1.0, 1e-12);
  EXPECT_NEAR(frechet_distance(fit1d(2, 1), fit1d(2, 9)), 4.0, 1e-12);
}

TEST(Frechet, IdenticalAndSymmetric) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_fit(64, rng), b = random_fit(64, rng);
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
    EXPECT_GT(frechet_distance(a, b), 0.0);
  }
}

TEST(Frechet, DimensionMismatchAndNonFinite) {
  Rng rng = make_rng(4);
  EXPECT_THROW(frechet_distance(random_fit(3, rng), random_fit(4, rng)), ShapeError);
  auto bad = random_fit(3, rng);
  bad.cov(0, 0) = std::nan("");
  EXPECT_THROW(frechet_distance(bad, random_fit(3, rng)), NumericError);
}

TEST(Frechet, NegativeDefiniteRejected) {
  auto a = fit1d(0, -1.0);
  EXPECT_THROW(frechet_distance(a, fit1d(0, 1)), NumericError);
  auto tiny = fit1d(0, -1e-10);
  EXPECT_NO_THROW(frechet_distance(tiny, fit1d(0, 1)));
}

TEST(ImageFrechet, SharedSpaceAcrossResolutions) {
  using datasets::Family;
  using datasets::ProceduralSpec;
  const auto s8 = datasets::generate_procedural(ProceduralSpec::of(Family::Stripes, 8, 64, 1));
  const auto s32 = datasets::generate_procedural(ProceduralSpec::of(Family::Stripes, 32, 64, 1));
  const auto n32 = datasets::generate_procedural(ProceduralSpec::of(Family::Noise, 32, 64, 1));
  EXPECT_NEAR(image_frechet(s8, s8), 0.0, 1e-9);
  EXPECT_NEAR(image_frechet(s8, s32), image_frechet(s32, s8), 1e-9);
  EXPECT_GT(image_frechet(s32, n32), image_frechet(s32, s8));
  auto rgb = datasets::ProceduralSpec::of(Family::Stripes, 8, 4, 1);
  rgb.channels = 3;
  EXPECT_THROW(image_frechet(s8, datasets::generate_procedural(rgb)), ShapeError);
}

TEST(SqrtPsd, SquaresBack) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_psd(64, rng, trial % 2 ? 64 : 20);
    const auto r = sqrt_psd(a);
    EXPECT_LT((r * r - a).norm() / a.norm(), 1e-8);
  }
}

TEST(FitGaussian, IdenticalSamplesGiveShrinkageOnly) {
  Eigen::MatrixXd x(5, 3);
  x.rowwise() = Eigen::RowVector3d(1, 2, 3);
  const auto f = fit_gaussian(x);
  EXPECT_EQ(f.mean, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(f.cov, Eigen::Matrix3d::Zero());
}

TEST(FitGaussian, PermutationInvariantAndShrunk) {
  Rng rng = make_rng(6);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(50, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  Eigen::MatrixXd y = x.colwise().reverse();
  const auto fx = fit_gaussian(x), fy = fit_gaussian(y);
  EXPECT_LT((fx.mean - fy.mean).norm(), 1e-12);
  EXPECT_LT((fx.cov - fy.cov).norm(), 1e-12);
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd raw = c.transpose() * c / 49.0;
  EXPECT_NEAR(fx.cov(0, 0) - raw(0, 0), 1e-6 * raw.trace() / 4, 1e-12);
  EXPECT_NEAR(fx.cov(0, 1), raw(0, 1), 1e-12);
  EXPECT_THROW(fit_gaussian(x.topRows(1)), RangeError);
}

TEST(Spearman, Examples) {
  const std::vector<double> xs{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(spearman(xs, xs), 1.0);
  EXPECT_DOUBLE_EQ(spearman(xs, std::vector<double>{4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman(xs, std::vector<double>{1, 2, 4, 3}), 0.8, 1e-15);
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), NumericError);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), RangeError);
  EXPECT_THROW(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), ShapeError);
}

TEST(Spearman, TiesGetAverageRanks) {
  const auto r = fractional_ranks(std::vector<double>{10, 20, 20, 30});
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4}));
}

// Property: invariant under strictly monotone transforms.
TEST(Spearman, MonotoneInvariance) {
  Rng rng = make_rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs(12), ys(12), tx, ty;
    for (auto& v : xs) v = g(rng);
    for (auto& v : ys) v = g(rng);
    for (double v : xs) tx.push_back(std::exp(v));
    for (double v : ys) ty.push_back(v * v * v - 5.0);
    EXPECT_NEAR(spearman(xs, ys), spearman(tx, ty), 1e-12);
  }
}

TEST(Aggregate, Examples) {
  const auto a = aggregate_runs(std::vector<double>{0.8, 0.8, 0.8});
  EXPECT_DOUBLE_EQ(a.mean, 0.8);
  EXPECT_EQ(a.stddev, 0.0);
  EXPECT_TRUE(a.degenerate);
  const auto b = aggregate_runs(std::vector<double>{0.7, 0.9});
  EXPECT_NEAR(b.mean, 0.8, 1e-15);
  EXPECT_NEAR(b.stddev, 0.1414213562, 1e-9);
  EXPECT_FALSE(b.degenerate);
  EXPECT_THROW(aggregate_runs(std::vector<double>{0.5}), RangeError);
}
