#include "epmc/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace epmc {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

GaussianFit fit_gaussian(const Matrix& samples) {
  const auto t = samples.rows();
  const auto d = samples.cols();
  require(t >= 2, "fit_gaussian: need at least 2 samples, got " + std::to_string(t));

  GaussianFit fit;
  fit.count = t;
  fit.mean = samples.colwise().mean();
  Matrix centered = samples.rowwise() - fit.mean.transpose();
  fit.cov = (centered.transpose() * centered) / static_cast<double>(t - 1);
  // symmetrize and jitter: 1e-8 * mean diagonal, floored at 1e-12
  fit.cov = ((fit.cov + fit.cov.transpose()) / 2.0).eval();
  const double jitter = std::max(1e-8 * fit.cov.trace() / static_cast<double>(d), 1e-12);
  fit.cov.diagonal().array() += jitter;
  return fit;
}

double log_mvn_isotropic(const Vector& x, const Vector& mean, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * (kLog2Pi + std::log(var)) - (x - mean).squaredNorm() / (2.0 * var);
}

MvnDensity::MvnDensity(Vector mean, const Matrix& cov) : mean_(std::move(mean)) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("MvnDensity: covariance is not positive definite");
  chol_lower_ = llt.matrixL();
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLog2Pi -
              chol_lower_.diagonal().array().log().sum();
}

double MvnDensity::log_pdf(const Vector& x) const {
  Vector z = chol_lower_.triangularView<Eigen::Lower>().solve(x - mean_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

Vector MvnDensity::sample(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return mean_ + chol_lower_ * z;
}

Matrix sample_mvn(const MvnDensity& density, std::int64_t count, Rng& rng) {
  Matrix out(count, density.mean().size());
  for (std::int64_t i = 0; i < count; ++i) out.row(i) = density.sample(rng).transpose();
  return out;
}

}  // namespace epmc
