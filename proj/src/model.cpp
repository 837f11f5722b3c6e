#include "epmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace epmc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var)) - (x - mean) * (x - mean) / (2.0 * var);
}

// log(1 + exp(z)) without overflow
double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

std::vector<DataShard> partition(const Dataset& dataset, int machines, std::uint64_t seed) {
  const std::int64_t n = dataset.size();
  require(machines >= 1, "partition: machine count must be >= 1, got " + std::to_string(machines));
  require(machines <= n, "partition: machine count " + std::to_string(machines) +
                             " exceeds record count " + std::to_string(n));

  std::vector<std::int64_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const std::int64_t base = n / machines;
  const std::int64_t extra = n % machines;  // first `extra` shards get one more
  std::vector<DataShard> shards;
  shards.reserve(machines);
  std::int64_t offset = 0;
  for (int m = 0; m < machines; ++m) {
    const std::int64_t rows = base + (m < extra ? 1 : 0);
    DataShard shard;
    shard.parent_id = dataset.id;
    shard.shard_index = m + 1;
    shard.machines = machines;
    shard.records.resize(rows, dataset.records.cols());
    for (std::int64_t r = 0; r < rows; ++r)
      shard.records.row(r) = dataset.records.row(perm[offset + r]);
    offset += rows;
    shards.push_back(std::move(shard));
  }
  return shards;
}

double TargetDensity::operator()(const Vector& theta) const {
  require(static_cast<int>(theta.size()) == dim,
          "target: parameter has dimension " + std::to_string(theta.size()) + ", expected " +
              std::to_string(dim));
  require(theta.allFinite(), "target: parameter has a non-finite entry");
  return log_density(theta);
}

double Model::log_likelihood_record(const Vector& record, const Vector& theta) const {
  Matrix one(1, record.size());
  one.row(0) = record.transpose();
  return log_likelihood(one, theta);
}

double subposterior_log_density(const Model& model, const DataShard& shard, const Vector& theta) {
  require(static_cast<int>(theta.size()) == model.dim(),
          "subposterior_log_density: dimension mismatch");
  require(theta.allFinite(), "subposterior_log_density: non-finite parameter entry");
  require(shard.machines >= 1, "subposterior_log_density: invalid machine count");
  const double lp = model.log_prior(theta) / static_cast<double>(shard.machines);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + model.log_likelihood(shard.records, theta);
}

double full_log_density(const Model& model, const Dataset& dataset, const Vector& theta) {
  require(static_cast<int>(theta.size()) == model.dim(), "full_log_density: dimension mismatch");
  require(theta.allFinite(), "full_log_density: non-finite parameter entry");
  const double lp = model.log_prior(theta);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + model.log_likelihood(dataset.records, theta);
}

TargetDensity subposterior_target(ModelPtr model, const DataShard& shard) {
  require(model != nullptr, "subposterior_target: null model");
  TargetDensity target;
  target.dim = model->dim();
  target.kind = TargetDensity::Kind::subposterior;
  target.shard_index = shard.shard_index;
  target.machines = shard.machines;
  target.records = shard.size();
  const double inv_m = 1.0 / static_cast<double>(shard.machines);
  target.log_density = [model, records = shard.records, inv_m](const Vector& theta) {
    const double lp = model->log_prior(theta) * inv_m;
    if (!std::isfinite(lp)) return kNegInf;
    return lp + model->log_likelihood(records, theta);
  };
  return target;
}

TargetDensity full_target(ModelPtr model, const Dataset& dataset) {
  require(model != nullptr, "full_target: null model");
  TargetDensity target;
  target.dim = model->dim();
  target.kind = TargetDensity::Kind::full_posterior;
  target.records = dataset.size();
  target.log_density = [model, records = dataset.records](const Vector& theta) {
    const double lp = model->log_prior(theta);
    if (!std::isfinite(lp)) return kNegInf;
    return lp + model->log_likelihood(records, theta);
  };
  return target;
}

// --- GaussianConjugate -------------------------------------------------------

GaussianConjugate::GaussianConjugate(int dim, double prior_mean, double prior_var,
                                     double likelihood_var)
    : dim_(dim), mean0_(prior_mean), tau2_(prior_var), sigma2_(likelihood_var) {
  require(dim >= 1, "gaussian_conjugate: dim must be >= 1");
  require(prior_var > 0 && likelihood_var > 0, "gaussian_conjugate: variances must be positive");
}

double GaussianConjugate::log_prior(const Vector& theta) const {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) lp += log_normal_pdf(theta[j], mean0_, tau2_);
  return lp;
}

double GaussianConjugate::log_likelihood(const Matrix& records, const Vector& theta) const {
  // deliberately scans the shard so evaluation cost scales with record count
  const double n = static_cast<double>(records.rows());
  const double sq = (records.rowwise() - theta.transpose()).squaredNorm();
  return -0.5 * n * dim_ * (kLog2Pi + std::log(sigma2_)) - sq / (2.0 * sigma2_);
}

Vector GaussianConjugate::prior_mean() const { return Vector::Constant(dim_, mean0_); }

nlohmann::json GaussianConjugate::to_json() const {
  return {{"kind", id()},
          {"dim", dim_},
          {"prior_mean", mean0_},
          {"prior_var", tau2_},
          {"likelihood_var", sigma2_}};
}

GaussianFit GaussianConjugate::analytic_posterior(const Matrix& records, double prior_weight) const {
  require(prior_weight > 0, "analytic_posterior: prior weight must be positive");
  const double n = static_cast<double>(records.rows());
  const double precision = prior_weight / tau2_ + n / sigma2_;
  const double var = 1.0 / precision;
  GaussianFit fit;
  fit.count = records.rows();
  fit.mean = var * (prior_weight * mean0_ / tau2_ +
                    records.colwise().sum().transpose().array() / sigma2_).matrix();
  fit.cov = Matrix::Identity(dim_, dim_) * var;
  return fit;
}

// --- LogisticRegression ------------------------------------------------------

LogisticRegression::LogisticRegression(int dim, double prior_scale)
    : dim_(dim), prior_scale_(prior_scale) {
  require(dim >= 1, "logistic_regression: dim must be >= 1");
  require(prior_scale > 0, "logistic_regression: prior scale must be positive");
}

double LogisticRegression::log_prior(const Vector& theta) const {
  double lp = 0.0;
  const double var = prior_scale_ * prior_scale_;
  for (Eigen::Index j = 0; j < theta.size(); ++j) lp += log_normal_pdf(theta[j], 0.0, var);
  return lp;
}

double LogisticRegression::log_likelihood(const Matrix& records, const Vector& theta) const {
  const auto x = records.leftCols(dim_);
  const auto y = records.col(dim_);
  Vector z = x * theta;
  double ll = y.dot(z);
  for (Eigen::Index i = 0; i < z.size(); ++i) ll -= softplus(z[i]);
  return ll;
}

Vector LogisticRegression::prior_mean() const { return Vector::Zero(dim_); }

nlohmann::json LogisticRegression::to_json() const {
  return {{"kind", id()}, {"dim", dim_}, {"prior_scale", prior_scale_}};
}

// --- GaussianMixtureMeans ----------------------------------------------------

GaussianMixtureMeans::GaussianMixtureMeans(int components, int data_dim, double component_var,
                                           double prior_scale)
    : components_(components),
      data_dim_(data_dim),
      component_var_(component_var),
      prior_scale_(prior_scale) {
  require(components >= 1 && data_dim >= 1, "gaussian_mixture_means: bad shape");
  require(component_var > 0 && prior_scale > 0, "gaussian_mixture_means: bad scales");
}

double GaussianMixtureMeans::log_prior(const Vector& theta) const {
  double lp = 0.0;
  const double var = prior_scale_ * prior_scale_;
  for (Eigen::Index j = 0; j < theta.size(); ++j) lp += log_normal_pdf(theta[j], 0.0, var);
  return lp;
}

double GaussianMixtureMeans::log_likelihood(const Matrix& records, const Vector& theta) const {
  const std::int64_t n = records.rows();
  // squared distance from every record to every component mean
  Matrix means(components_, data_dim_);
  for (int k = 0; k < components_; ++k)
    means.row(k) = theta.segment(k * data_dim_, data_dim_).transpose();

  Matrix sq = (-2.0 * records * means.transpose());
  sq.colwise() += records.rowwise().squaredNorm();
  sq.rowwise() += means.rowwise().squaredNorm().transpose();

  const double log_norm = -0.5 * data_dim_ * (kLog2Pi + std::log(component_var_)) -
                          std::log(static_cast<double>(components_));
  double ll = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double best = sq.row(i).minCoeff();
    double acc = 0.0;
    for (int k = 0; k < components_; ++k)
      acc += std::exp(-(sq(i, k) - best) / (2.0 * component_var_));
    ll += log_norm - best / (2.0 * component_var_) + std::log(acc);
  }
  return ll;
}

Vector GaussianMixtureMeans::prior_mean() const { return Vector::Zero(dim()); }

nlohmann::json GaussianMixtureMeans::to_json() const {
  return {{"kind", id()},
          {"components", components_},
          {"data_dim", data_dim_},
          {"component_var", component_var_},
          {"prior_scale", prior_scale_}};
}

// --- PoissonGamma -------------------------------------------------------------

PoissonGamma::PoissonGamma(double lambda, double alpha, double beta)
    : lambda_(lambda), alpha_(alpha), beta_(beta) {
  require(lambda > 0 && alpha > 0 && beta > 0, "poisson_gamma: hyperparameters must be positive");
}

double PoissonGamma::log_prior(const Vector& theta) const {
  // theta = (log a, log b); densities include the exp-transform Jacobian
  const double u = theta[0], v = theta[1];
  const double a = std::exp(u), b = std::exp(v);
  if (!std::isfinite(a) || !std::isfinite(b)) return kNegInf;
  const double lp_a = std::log(lambda_) - lambda_ * a + u;
  const double lp_b = alpha_ * std::log(beta_) - std::lgamma(alpha_) + (alpha_ - 1.0) * v -
                      beta_ * b + v;
  return lp_a + lp_b;
}

double PoissonGamma::log_likelihood(const Matrix& records, const Vector& theta) const {
  const double a = std::exp(theta[0]), b = std::exp(theta[1]);
  if (!std::isfinite(a) || !std::isfinite(b) || a <= 0 || b <= 0) return kNegInf;
  const auto counts = records.col(0);
  const auto exposures = records.col(1);
  // negative binomial from the marginalized gamma rate:
  //   log p(x) = lgamma(a+x) - lgamma(a) - lgamma(x+1)
  //              + a log(b/(b+t)) + x log(t/(b+t))
  double ll = 0.0;
  const double lgamma_a = std::lgamma(a);
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    const double x = counts[i];
    const double t = exposures[i];
    if (t < 0) return kNegInf;
    if (t == 0.0) {
      if (x > 0) return kNegInf;  // Poisson(0) puts all mass on zero
      continue;
    }
    ll += std::lgamma(a + x) - lgamma_a - std::lgamma(x + 1.0) + a * std::log(b / (b + t)) +
          x * std::log(t / (b + t));
  }
  return ll;
}

Vector PoissonGamma::prior_mean() const {
  // prior means of a and b on the log scale: E[a] = 1/lambda, E[b] = alpha/beta
  Vector mean(2);
  mean << std::log(1.0 / lambda_), std::log(alpha_ / beta_);
  return mean;
}

nlohmann::json PoissonGamma::to_json() const {
  return {{"kind", id()}, {"lambda", lambda_}, {"alpha", alpha_}, {"beta", beta_}};
}

// --- construction -------------------------------------------------------------

ModelPtr model_from_json(const nlohmann::json& spec) {
  require(spec.contains("kind"), "model spec: missing kind");
  const std::string kind = spec.at("kind");
  if (kind == "gaussian_conjugate") {
    return std::make_shared<GaussianConjugate>(
        spec.value("dim", 1), spec.value("prior_mean", 0.0), spec.value("prior_var", 100.0),
        spec.value("likelihood_var", 1.0));
  }
  if (kind == "logistic_regression") {
    return std::make_shared<LogisticRegression>(spec.value("dim", 2),
                                                spec.value("prior_scale", 10.0));
  }
  if (kind == "gaussian_mixture_means") {
    return std::make_shared<GaussianMixtureMeans>(
        spec.value("components", 2), spec.value("data_dim", 1), spec.value("component_var", 1.0),
        spec.value("prior_scale", 10.0));
  }
  if (kind == "poisson_gamma") {
    return std::make_shared<PoissonGamma>(spec.value("lambda", 1.0), spec.value("alpha", 2.0),
                                          spec.value("beta", 1.0));
  }
  throw std::invalid_argument("model spec: unsupported kind '" + kind + "'");
}

Synthetic generate_synthetic(const std::string& kind, int dim, std::int64_t n, std::uint64_t seed,
                             const nlohmann::json& options) {
  require(n >= 1, "generate_synthetic: need at least one record");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Synthetic out;
  nlohmann::json spec = options.is_object() ? options : nlohmann::json::object();
  spec["kind"] = kind;

  if (kind == "gaussian_conjugate") {
    if (!spec.contains("dim")) spec["dim"] = dim;
    out.model = model_from_json(spec);
    const auto* model = static_cast<const GaussianConjugate*>(out.model.get());
    Vector truth(dim);
    if (spec.contains("true_params")) {
      const auto& tp = spec.at("true_params");
      require(static_cast<int>(tp.size()) == dim, "generate_synthetic: true_params size mismatch");
      for (int j = 0; j < dim; ++j) truth[j] = tp.at(j).get<double>();
    } else {
      for (int j = 0; j < dim; ++j) truth[j] = normal(rng);
    }
    const double sd = std::sqrt(model->likelihood_var());
    Matrix records(n, dim);
    for (std::int64_t i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) records(i, j) = truth[j] + sd * normal(rng);
    out.data = Dataset{kind + "_n" + std::to_string(n) + "_s" + std::to_string(seed), kind,
                       std::move(records), seed, truth};
    out.true_params = truth;
    return out;
  }

  if (kind == "logistic_regression") {
    if (!spec.contains("dim")) spec["dim"] = dim;
    out.model = model_from_json(spec);
    Vector truth(dim);
    for (int j = 0; j < dim; ++j) truth[j] = normal(rng);  // beta ~ standard normal
    Matrix records(n, dim + 1);
    for (std::int64_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (int j = 0; j < dim; ++j) {
        records(i, j) = normal(rng);
        z += records(i, j) * truth[j];
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      records(i, dim) = unif(rng) < p ? 1.0 : 0.0;
    }
    out.data = Dataset{kind + "_n" + std::to_string(n) + "_s" + std::to_string(seed), kind,
                       std::move(records), seed, truth};
    out.true_params = truth;
    return out;
  }

  if (kind == "gaussian_mixture_means") {
    if (!spec.contains("data_dim")) spec["data_dim"] = 1;
    if (!spec.contains("components") && dim > 0 && spec.at("data_dim").get<int>() > 0)
      spec["components"] = dim / spec.at("data_dim").get<int>();
    out.model = model_from_json(spec);
    const auto* model = static_cast<const GaussianMixtureMeans*>(out.model.get());
    const int k = model->components();
    const int dd = model->data_dim();
    Vector truth(k * dd);
    if (spec.contains("true_means")) {
      const auto& tm = spec.at("true_means");
      require(static_cast<int>(tm.size()) == k * dd,
              "generate_synthetic: true_means size mismatch");
      for (int j = 0; j < k * dd; ++j) truth[j] = tm.at(j).get<double>();
    } else {
      // spread the component means evenly on a coarse lattice
      for (int c = 0; c < k; ++c)
        for (int j = 0; j < dd; ++j)
          truth[c * dd + j] = (2.0 * c - (k - 1)) * 3.0 + 0.5 * normal(rng);
    }
    const double sd = std::sqrt(spec.value("component_var", 1.0));
    Matrix records(n, dd);
    std::uniform_int_distribution<int> pick(0, k - 1);
    for (std::int64_t i = 0; i < n; ++i) {
      const int c = pick(rng);
      for (int j = 0; j < dd; ++j) records(i, j) = truth[c * dd + j] + sd * normal(rng);
    }
    out.data = Dataset{kind + "_n" + std::to_string(n) + "_s" + std::to_string(seed), kind,
                       std::move(records), seed, truth};
    out.true_params = truth;
    return out;
  }

  if (kind == "poisson_gamma") {
    out.model = model_from_json(spec);
    const double a = spec.value("true_a", 2.0);
    const double b = spec.value("true_b", 1.0);
    Matrix records(n, 2);
    std::gamma_distribution<double> gamma(a, 1.0 / b);  // shape a, rate b
    for (std::int64_t i = 0; i < n; ++i) {
      double t = 1.0;
      if (spec.contains("exposure")) {
        t = spec.at("exposure").get<double>();
      } else if (spec.value("exposure_jitter", false)) {
        t = 0.5 + unif(rng);
      }
      const double q = gamma(rng);
      const double rate = q * t;
      double x = 0.0;
      if (rate > 0.0) {
        std::poisson_distribution<long> pois(rate);
        x = static_cast<double>(pois(rng));
      }
      records(i, 0) = x;
      records(i, 1) = t;
    }
    Vector truth(2);
    truth << std::log(a), std::log(b);
    out.data = Dataset{kind + "_n" + std::to_string(n) + "_s" + std::to_string(seed), kind,
                       std::move(records), seed, truth};
    out.true_params = truth;
    return out;
  }

  throw std::invalid_argument("generate_synthetic: unsupported kind '" + kind + "'");
}

}  // namespace epmc
