#ifndef EPMC_GAUSSIAN_HPP
#define EPMC_GAUSSIAN_HPP

#include "epmc/common.hpp"

#include <Eigen/Cholesky>

#include <cstdint>

namespace epmc {

/// Sample mean and covariance of one machine's draws.
struct GaussianFit {
  Vector mean;
  Matrix cov;
  std::int64_t count = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Unbiased (T-1 divisor) fit with a small diagonal jitter so downstream
/// precision math never sees an exactly singular matrix.
GaussianFit fit_gaussian(const Matrix& samples);

/// log N_d(x | mean, var * I)
double log_mvn_isotropic(const Vector& x, const Vector& mean, double var);

/// Dense multivariate normal with cached Cholesky factor.
class MvnDensity {
 public:
  MvnDensity() = default;
  MvnDensity(Vector mean, const Matrix& cov);

  double log_pdf(const Vector& x) const;
  Vector sample(Rng& rng) const;
  const Vector& mean() const { return mean_; }
  const Matrix& chol_lower() const { return chol_lower_; }

 private:
  Vector mean_;
  Matrix chol_lower_;
  double log_norm_ = 0.0;  // -d/2 log(2pi) - log|L|
};

Matrix sample_mvn(const MvnDensity& density, std::int64_t count, Rng& rng);

}  // namespace epmc

#endif
