#include "epmc/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace epmc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_dim(const Matrix& samples, const Vector& theta, const char* what) {
  require(samples.rows() >= 1, std::string(what) + ": empty sample set");
  require(samples.cols() == theta.size(), std::string(what) + ": dimension mismatch");
}

double trapezoid_weight(std::int64_t i, std::int64_t n) {
  return (i == 0 || i == n - 1) ? 0.5 : 1.0;
}

// sum_i w_i f_i * dx over a 1-d axis
double trapezoid_1d(const Vector& values, double dx) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < values.size(); ++i)
    acc += trapezoid_weight(i, values.size()) * values[i];
  return acc * dx;
}

double trapezoid_2d(const Matrix& values, double dx, double dy) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < values.rows(); ++i) {
    const double wi = trapezoid_weight(i, values.rows());
    for (std::int64_t j = 0; j < values.cols(); ++j)
      acc += wi * trapezoid_weight(j, values.cols()) * values(i, j);
  }
  return acc * dx * dy;
}

// T x G table of 1-d kernel values N(g_j | x_t, bw^2)
Matrix kernel_table(const Eigen::Ref<const Vector>& centers, double bw,
                    const std::vector<double>& axis) {
  const auto t = centers.size();
  const auto g = static_cast<Eigen::Index>(axis.size());
  const double inv2v = 1.0 / (2.0 * bw * bw);
  const double norm = 1.0 / std::sqrt(2.0 * M_PI) / bw;
  Matrix table(t, g);
  for (Eigen::Index j = 0; j < g; ++j) {
    const double x = axis[static_cast<std::size_t>(j)];
    table.col(j) = (-(centers.array() - x).square() * inv2v).exp() * norm;
  }
  return table;
}

// Canonical argument order for the plug-in cross terms so l2(p, q) and
// l2(q, p) sum in exactly the same order.
bool canonical_before(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (std::int64_t i = 0; i < a.rows(); ++i)
    for (std::int64_t j = 0; j < a.cols(); ++j) {
      if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
    }
  return true;  // identical content: order is irrelevant
}

// integral of p_hat_a * p_hat_b for diagonal-bandwidth Gaussian mixtures:
// (1/(Ta Tb)) sum_ij prod_k N(a_ik - b_jk | 0, va_k + vb_k)
double mixture_cross_integral(const Matrix& a, const Matrix& b, const Vector& var_sum) {
  const auto d = a.cols();
  double log_norm = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) log_norm += -0.5 * (kLog2Pi + std::log(var_sum[k]));
  Vector inv_sqrt = var_sum.array().sqrt().inverse();
  Matrix as = a * inv_sqrt.asDiagonal();
  Matrix bs = b * inv_sqrt.asDiagonal();
  Vector a2 = as.rowwise().squaredNorm();
  Vector b2 = bs.rowwise().squaredNorm();

  double acc = 0.0;
  constexpr std::int64_t kBlock = 2048;
  for (std::int64_t i0 = 0; i0 < as.rows(); i0 += kBlock) {
    const std::int64_t ib = std::min<std::int64_t>(kBlock, as.rows() - i0);
    Matrix cross = as.middleRows(i0, ib) * bs.transpose();  // ib x Tb
    for (std::int64_t i = 0; i < ib; ++i)
      for (std::int64_t j = 0; j < bs.rows(); ++j)
        acc += std::exp(-0.5 * (a2[i0 + i] + b2[j] - 2.0 * cross(i, j)));
  }
  return std::exp(log_norm) * acc /
         (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double log_kde(const Matrix& samples, double h, const Vector& theta) {
  check_dim(samples, theta, "kde");
  require(h > 0, "kde: bandwidth must be positive");
  const double d = static_cast<double>(theta.size());
  Vector sq = (samples.rowwise() - theta.transpose()).rowwise().squaredNorm();
  const double best = sq.minCoeff();
  double acc = 0.0;
  for (Eigen::Index t = 0; t < sq.size(); ++t) acc += std::exp(-(sq[t] - best) / (2.0 * h * h));
  return -best / (2.0 * h * h) + std::log(acc) - std::log(static_cast<double>(samples.rows())) -
         0.5 * d * (kLog2Pi + 2.0 * std::log(h));
}

double kde(const Matrix& samples, double h, const Vector& theta) {
  return std::exp(log_kde(samples, h, theta));
}

Vector silverman_bandwidths(const Matrix& samples) {
  const double t = static_cast<double>(samples.rows());
  const double d = static_cast<double>(samples.cols());
  require(samples.rows() >= 2, "silverman_bandwidths: need at least 2 samples");
  Vector mean = samples.colwise().mean();
  Vector var = (samples.rowwise() - mean.transpose()).colwise().squaredNorm() / (t - 1.0);
  const double factor = std::pow(4.0 / ((d + 2.0) * t), 1.0 / (d + 4.0));
  Vector bw = var.array().sqrt() * factor;
  for (Eigen::Index j = 0; j < bw.size(); ++j)
    if (!(bw[j] > 0)) bw[j] = 1e-6;  // degenerate dimension
  return bw;
}

std::vector<double> GridSpec::axis(int j) const {
  require(j >= 0 && j < dim(), "grid: axis out of range");
  std::vector<double> points(static_cast<std::size_t>(points_per_dim));
  const double step = (hi[j] - lo[j]) / static_cast<double>(points_per_dim - 1);
  for (int i = 0; i < points_per_dim; ++i) points[static_cast<std::size_t>(i)] = lo[j] + step * i;
  return points;
}

GridSpec bounding_grid(const Matrix& a, const Matrix& b, const Vector& bw_a, const Vector& bw_b,
                       int points_per_dim) {
  require(a.cols() == b.cols(), "bounding_grid: dimension mismatch");
  GridSpec grid;
  grid.points_per_dim = points_per_dim;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double pad = 3.0 * std::max(bw_a[j], bw_b[j]);
    grid.lo.push_back(std::min(a.col(j).minCoeff(), b.col(j).minCoeff()) - pad);
    grid.hi.push_back(std::max(a.col(j).maxCoeff(), b.col(j).maxCoeff()) + pad);
  }
  return grid;
}

Matrix kde_on_grid(const Matrix& samples, const Vector& bandwidths, const GridSpec& grid) {
  const int d = static_cast<int>(samples.cols());
  require(d == grid.dim(), "kde_on_grid: grid dimension mismatch");
  require(d == 1 || d == 2, "kde_on_grid: only d <= 2 is supported");
  const double t = static_cast<double>(samples.rows());

  if (d == 1) {
    Matrix table = kernel_table(samples.col(0), bandwidths[0], grid.axis(0));
    return table.colwise().sum().transpose() / t;  // G x 1
  }

  const auto ax = grid.axis(0);
  const auto ay = grid.axis(1);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(ax.size()),
                            static_cast<Eigen::Index>(ay.size()));
  constexpr std::int64_t kBlock = 4096;
  for (std::int64_t t0 = 0; t0 < samples.rows(); t0 += kBlock) {
    const std::int64_t tb = std::min<std::int64_t>(kBlock, samples.rows() - t0);
    Matrix gx = kernel_table(samples.col(0).segment(t0, tb), bandwidths[0], ax);
    Matrix gy = kernel_table(samples.col(1).segment(t0, tb), bandwidths[1], ay);
    out.noalias() += gx.transpose() * gy;
  }
  return out / t;
}

DensityProduct::DensityProduct(std::vector<Matrix> sets, double h)
    : sets_(std::move(sets)), h_(h) {
  require(!sets_.empty(), "density product: no sample sets");
  require(h > 0, "density product: bandwidth must be positive");
  dim_ = static_cast<int>(sets_.front().cols());
  for (const auto& set : sets_) {
    require(set.rows() >= 1, "density product: empty sample set");
    require(static_cast<int>(set.cols()) == dim_, "density product: dimension mismatch");
  }
}

double DensityProduct::log_value(const Vector& theta) const {
  double acc = 0.0;
  for (const auto& set : sets_) acc += log_kde(set, h_, theta);
  return acc;
}

double DensityProduct::value(const Vector& theta) const { return std::exp(log_value(theta)); }

Vector DensityProduct::values_on_axis(const std::vector<double>& axis) const {
  require(dim_ == 1, "density product: axis evaluation is 1-d only");
  Vector log_values = Vector::Zero(static_cast<Eigen::Index>(axis.size()));
  for (const auto& set : sets_) {
    Matrix table = kernel_table(set.col(0), h_, axis);
    Vector kde_vals = table.colwise().sum().transpose() / static_cast<double>(set.rows());
    log_values += kde_vals.array().max(1e-300).log().matrix();
  }
  return log_values.array().exp();
}

double DensityProduct::normalizer(const GridSpec& grid) const {
  require(grid.dim() == dim_, "density product: grid dimension mismatch");
  require(dim_ <= 2, "density product: quadrature normalization is d <= 2 only");
  if (dim_ == 1) {
    const auto axis = grid.axis(0);
    Vector values = values_on_axis(axis);
    return trapezoid_1d(values, axis[1] - axis[0]);
  }
  Vector iso = Vector::Constant(2, h_);
  Matrix log_grid = Matrix::Zero(grid.points_per_dim, grid.points_per_dim);
  for (const auto& set : sets_)
    log_grid += kde_on_grid(set, iso, grid).array().max(1e-300).log().matrix();
  Matrix values = log_grid.array().exp();
  const auto ax = grid.axis(0);
  const auto ay = grid.axis(1);
  return trapezoid_2d(values, ax[1] - ax[0], ay[1] - ay[0]);
}

double density_product_pdf(const std::vector<Matrix>& sets, double h, const Vector& theta,
                           bool normalized) {
  require(!sets.empty(), "density_product_pdf: no sample sets");
  double budget = 1.0;
  for (const auto& set : sets) budget *= static_cast<double>(set.rows());
  require(budget <= 1e6,
          "density_product_pdf: component budget prod(T_m) exceeds 1e6; "
          "use the sampling combiners for instances this large");
  for (const auto& set : sets) check_dim(set, theta, "density_product_pdf");

  DensityProduct product(sets, h);
  if (!normalized) return product.value(theta);

  const int d = static_cast<int>(theta.size());
  require(d <= 2, "density_product_pdf: normalization is supported for d <= 2 only");
  Matrix pooled(0, d);
  for (const auto& set : sets) {
    Matrix tmp(pooled.rows() + set.rows(), d);
    tmp << pooled, set;
    pooled = std::move(tmp);
  }
  Vector pad = Vector::Constant(d, h);
  GridSpec grid = bounding_grid(pooled, pooled, pad, pad);
  if (d == 1) {
    const auto axis = grid.axis(0);
    DensityProduct p(sets, h);
    Vector values = p.values_on_axis(axis);
    const double z = trapezoid_1d(values, axis[1] - axis[0]);
    return p.value(theta) / z;
  }
  // d == 2: evaluate the product on the tensor grid via per-set KDE grids
  Vector iso = Vector::Constant(2, h);
  Matrix log_grid = Matrix::Zero(grid.points_per_dim, grid.points_per_dim);
  for (const auto& set : sets)
    log_grid += kde_on_grid(set, iso, grid).array().max(1e-300).log().matrix();
  Matrix values = log_grid.array().exp();
  const auto ax = grid.axis(0);
  const auto ay = grid.axis(1);
  const double z = trapezoid_2d(values, ax[1] - ax[0], ay[1] - ay[0]);
  return DensityProduct(sets, h).value(theta) / z;
}

double l2_distance(const Matrix& samples_p, const Matrix& samples_q,
                   const std::optional<GridSpec>& grid) {
  require(samples_p.rows() >= 2 && samples_q.rows() >= 2, "l2_distance: need >= 2 samples");
  require(samples_p.cols() == samples_q.cols(), "l2_distance: dimension mismatch");
  const int d = static_cast<int>(samples_p.cols());
  if (d > 2) {
    require(!grid.has_value(), "l2_distance: grid path is unavailable for d > 2");
    return l2_distance_plugin(samples_p, samples_q);
  }

  Vector bw_p = silverman_bandwidths(samples_p);
  Vector bw_q = silverman_bandwidths(samples_q);
  GridSpec box = grid.has_value() ? *grid : bounding_grid(samples_p, samples_q, bw_p, bw_q);
  Matrix kde_p = kde_on_grid(samples_p, bw_p, box);
  Matrix kde_q = kde_on_grid(samples_q, bw_q, box);
  Matrix diff_sq = (kde_p - kde_q).array().square();
  double integral;
  if (d == 1) {
    const auto axis = box.axis(0);
    integral = trapezoid_1d(diff_sq.col(0), axis[1] - axis[0]);
  } else {
    const auto ax = box.axis(0);
    const auto ay = box.axis(1);
    integral = trapezoid_2d(diff_sq, ax[1] - ax[0], ay[1] - ay[0]);
  }
  return std::sqrt(std::max(integral, 0.0));
}

double l2_distance_plugin(const Matrix& samples_p, const Matrix& samples_q) {
  require(samples_p.rows() >= 2 && samples_q.rows() >= 2, "l2_distance: need >= 2 samples");
  require(samples_p.cols() == samples_q.cols(), "l2_distance: dimension mismatch");
  Vector bw_p = silverman_bandwidths(samples_p);
  Vector bw_q = silverman_bandwidths(samples_q);
  Vector var_p = bw_p.array().square();
  Vector var_q = bw_q.array().square();

  const double pp = mixture_cross_integral(samples_p, samples_p, 2.0 * var_p);
  const double qq = mixture_cross_integral(samples_q, samples_q, 2.0 * var_q);
  const double pq = canonical_before(samples_p, samples_q)
                        ? mixture_cross_integral(samples_p, samples_q, var_p + var_q)
                        : mixture_cross_integral(samples_q, samples_p, var_q + var_p);
  return std::sqrt(std::max(pp + qq - 2.0 * pq, 0.0));
}

std::vector<MseRatePoint> mse_rate_harness(const std::vector<AnalyticDensity1D>& densities,
                                           const std::vector<std::int64_t>& t_grid, int trials,
                                           double beta, std::uint64_t seed, int grid_points) {
  require(!densities.empty(), "mse_rate_harness: no densities");
  require(trials >= 1, "mse_rate_harness: need at least one trial");
  const int machines = static_cast<int>(densities.size());

  std::vector<MseRatePoint> points;
  for (const std::int64_t t : t_grid) {
    require(t >= 2, "mse_rate_harness: T must be >= 2");
    const double h = std::pow(static_cast<double>(t), -1.0 / (2.0 * beta + 1.0));
    double mse_acc = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(trial)));
      std::vector<Matrix> sets(machines);
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int m = 0; m < machines; ++m) {
        sets[m].resize(t, 1);
        for (std::int64_t i = 0; i < t; ++i) {
          const double x = densities[m].sample(rng);
          sets[m](i, 0) = x;
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      }
      GridSpec grid;
      grid.lo = {lo - 3.0 * std::max(h, 1.0)};
      grid.hi = {hi + 3.0 * std::max(h, 1.0)};
      grid.points_per_dim = grid_points;
      const auto axis = grid.axis(0);
      const double dx = axis[1] - axis[0];

      DensityProduct product(sets, h);
      Vector estimate = product.values_on_axis(axis);
      Vector truth(static_cast<Eigen::Index>(axis.size()));
      for (std::size_t i = 0; i < axis.size(); ++i) {
        double value = 1.0;
        for (const auto& density : densities) value *= density.pdf(axis[i]);
        truth[static_cast<Eigen::Index>(i)] = value;
      }
      const double z_est = trapezoid_1d(estimate, dx);
      const double z_truth = trapezoid_1d(truth, dx);
      require(z_est > 0 && z_truth > 0, "mse_rate_harness: degenerate normalizer");
      estimate /= z_est;
      truth /= z_truth;
      Vector sq_diff = (estimate - truth).array().square();
      mse_acc += trapezoid_1d(sq_diff, dx);
    }
    points.push_back({t, mse_acc / trials});
  }
  return points;
}

double log_log_slope(const std::vector<MseRatePoint>& points) {
  require(points.size() >= 2, "log_log_slope: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(points.size());
  for (const auto& point : points) {
    const double x = std::log(static_cast<double>(point.t));
    const double y = std::log(point.mse);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace epmc
