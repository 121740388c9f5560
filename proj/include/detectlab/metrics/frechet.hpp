#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "detectlab/error.hpp"

namespace detectlab::metrics {

inline constexpr double kEigenClamp = -1e-8;

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

// Rows of `features` are samples. Covariance uses N-1 plus lambda*I with
// lambda = 1e-6 * trace / d.
inline GaussianFit fit_gaussian(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw RangeError("fit_gaussian: need at least 2 samples");
  GaussianFit fit;
  fit.count = static_cast<std::size_t>(n);
  fit.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
  fit.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  const double d = static_cast<double>(fit.cov.rows());
  fit.cov.diagonal().array() += 1e-6 * fit.cov.trace() / d;
  return fit;
}

// Eigenvalues of a symmetric matrix; values in [clamp, 0) become 0, anything
// more negative is an error. The tolerance scales with the spectrum size.
inline Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> checked_eigen(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < kEigenClamp * scale)
    throw NumericError(std::string(what) + ": matrix is not positive semidefinite (eigenvalue " +
                       std::to_string(es.eigenvalues().minCoeff()) + ")");
  return es;
}

inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  const auto es = checked_eigen(m, "sqrt_psd");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd out = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// |mu_a - mu_b|^2 + Tr(S_a + S_b) - 2 Tr sqrt(sqrt(S_a) S_b sqrt(S_a)).
inline double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.dim() != b.dim() || a.cov.rows() != b.cov.rows())
    throw ShapeError("frechet_distance: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()) + ")");
  if (!a.cov.allFinite() || !b.cov.allFinite()) throw NumericError("frechet_distance: non-finite covariance");
  const Eigen::MatrixXd ra = sqrt_psd(a.cov);
  Eigen::MatrixXd s = ra * b.cov * ra;
  s = 0.5 * (s + s.transpose());
  const auto es = checked_eigen(s, "frechet_distance");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

}  // namespace detectlab::metrics
