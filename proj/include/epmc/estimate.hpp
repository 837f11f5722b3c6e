#ifndef EPMC_ESTIMATE_HPP
#define EPMC_ESTIMATE_HPP

#include "epmc/common.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace epmc {

/// Gaussian kernel density estimate (1/T) sum_t N_d(theta | theta_t, h^2 I).
double kde(const Matrix& samples, double h, const Vector& theta);
double log_kde(const Matrix& samples, double h, const Vector& theta);

/// Per-dimension Silverman bandwidths: sd_j * (4 / ((d + 2) T))^(1/(d+4)).
Vector silverman_bandwidths(const Matrix& samples);

struct GridSpec {
  std::vector<double> lo;
  std::vector<double> hi;
  int points_per_dim = 512;

  int dim() const { return static_cast<int>(lo.size()); }
  std::vector<double> axis(int j) const;
};

/// Grid covering both sample sets, extended by 3 bandwidths per side.
GridSpec bounding_grid(const Matrix& a, const Matrix& b, const Vector& bw_a, const Vector& bw_b,
                       int points_per_dim = 512);

/// Evaluates a diagonal-bandwidth KDE on a tensor grid; d must be 1 or 2.
/// The Gaussian kernel factorizes over dimensions, so the 2-d case reduces
/// to a dense matrix product over per-axis kernel tables.
Matrix kde_on_grid(const Matrix& samples, const Vector& bandwidths, const GridSpec& grid);

/// Product of the per-machine KDEs at theta (unnormalized density product).
/// `normalized` divides by a quadrature normalizer (d <= 2 only). The free
/// function enforces the small-instance budget prod T_m <= 1e6; use the
/// sampling combiners beyond that.
double density_product_pdf(const std::vector<Matrix>& sets, double h, const Vector& theta,
                           bool normalized = false);

/// Unbudgeted evaluator behind density_product_pdf; also exposes grid
/// evaluation for the MSE harness.
class DensityProduct {
 public:
  DensityProduct(std::vector<Matrix> sets, double h);

  double log_value(const Vector& theta) const;
  double value(const Vector& theta) const;
  /// d = 1 only: values on a grid axis.
  Vector values_on_axis(const std::vector<double>& axis) const;
  double normalizer(const GridSpec& grid) const;  // d <= 2
  int dim() const { return dim_; }

 private:
  std::vector<Matrix> sets_;
  double h_;
  int dim_;
};

/// L2 distance between the densities behind two sample sets. d <= 2 uses
/// Silverman KDEs on a bounding grid with trapezoid integration; d > 2 uses
/// the plug-in estimator with closed-form Gaussian-mixture cross terms,
/// clamped at zero before the square root. Passing a grid forces the grid
/// path and is an error for d > 2.
double l2_distance(const Matrix& samples_p, const Matrix& samples_q,
                   const std::optional<GridSpec>& grid = std::nullopt);

/// Plug-in path exposed for the cross-validation of the two estimators.
double l2_distance_plugin(const Matrix& samples_p, const Matrix& samples_q);

/// A 1-d analytic density the MSE harness can sample and evaluate.
struct AnalyticDensity1D {
  std::function<double(Rng&)> sample;
  std::function<double(double)> pdf;
};

struct MseRatePoint {
  std::int64_t t = 0;
  double mse = 0.0;
};

/// Empirical MSE of the (normalized) density-product estimate against the
/// normalized true product at h = T^(-1/(2 beta + 1)), averaged over trials.
std::vector<MseRatePoint> mse_rate_harness(const std::vector<AnalyticDensity1D>& densities,
                                           const std::vector<std::int64_t>& t_grid,
                                           int trials, double beta, std::uint64_t seed,
                                           int grid_points = 512);

/// Least-squares slope of log(mse) against log(T).
double log_log_slope(const std::vector<MseRatePoint>& points);

}  // namespace epmc

#endif
