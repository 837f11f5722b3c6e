#ifndef EPMC_MODEL_HPP
#define EPMC_MODEL_HPP

#include "epmc/common.hpp"
#include "epmc/gaussian.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace epmc {

/// N observation records, one per row; column layout is model specific.
struct Dataset {
  std::string id;
  std::string model_id;
  Matrix records;
  std::uint64_t seed = 0;
  Vector true_params;  // empty when unknown

  std::int64_t size() const { return records.rows(); }
};

/// One machine's slice of a dataset. shard_index is 1-based, in [1, machines].
struct DataShard {
  std::string parent_id;
  int shard_index = 1;
  int machines = 1;
  Matrix records;

  std::int64_t size() const { return records.rows(); }
};

/// Uniform random permutation, then contiguous blocks whose sizes differ by
/// at most one. Deterministic given the seed.
std::vector<DataShard> partition(const Dataset& dataset, int machines, std::uint64_t seed);

/// Unnormalized log target. Evaluations validate dimension and finiteness of
/// theta and may return -inf outside the support.
struct TargetDensity {
  enum class Kind { full_posterior, subposterior };

  std::function<double(const Vector&)> log_density;
  int dim = 0;
  Kind kind = Kind::full_posterior;
  int shard_index = 0;   // subposterior provenance
  int machines = 1;
  std::int64_t records = 0;  // records scanned per evaluation (cost models)

  double operator()(const Vector& theta) const;
};

/// A Bayesian model: log-prior and record log-likelihoods kept separate so
/// the 1/M prior exponent of a subposterior can be applied.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  virtual int record_width() const = 0;
  virtual double log_prior(const Vector& theta) const = 0;
  /// Sum of per-record log-likelihoods over a record block (vectorized).
  virtual double log_likelihood(const Matrix& records, const Vector& theta) const = 0;
  virtual double log_likelihood_record(const Vector& record, const Vector& theta) const;
  virtual Vector prior_mean() const = 0;
  /// Number of exchangeable parameter blocks (mixture components); 0 if the
  /// posterior has no label symmetry.
  virtual int permutation_blocks() const { return 0; }
  virtual nlohmann::json to_json() const = 0;
};

using ModelPtr = std::shared_ptr<const Model>;

/// (1/M) log p(theta) + sum over shard records of log p(x | theta).
double subposterior_log_density(const Model& model, const DataShard& shard, const Vector& theta);
double full_log_density(const Model& model, const Dataset& dataset, const Vector& theta);

TargetDensity subposterior_target(ModelPtr model, const DataShard& shard);
TargetDensity full_target(ModelPtr model, const Dataset& dataset);

// --- model variants ---------------------------------------------------------

/// iid N(theta, sigma2 * I_d) likelihood with N(mean0 * 1, tau2 * I_d) prior.
/// Posterior and subposteriors are Gaussian in closed form (the oracle model).
class GaussianConjugate : public Model {
 public:
  GaussianConjugate(int dim, double prior_mean, double prior_var, double likelihood_var);

  std::string id() const override { return "gaussian_conjugate"; }
  int dim() const override { return dim_; }
  int record_width() const override { return dim_; }
  double log_prior(const Vector& theta) const override;
  double log_likelihood(const Matrix& records, const Vector& theta) const override;
  Vector prior_mean() const override;
  nlohmann::json to_json() const override;

  /// Exact N(mean, var*I) posterior of a record block whose prior carries
  /// exponent prior_weight (1 for the full posterior, 1/M for a subposterior).
  GaussianFit analytic_posterior(const Matrix& records, double prior_weight) const;

  double prior_var() const { return tau2_; }
  double likelihood_var() const { return sigma2_; }

 private:
  int dim_;
  double mean0_;
  double tau2_;
  double sigma2_;
};

/// Bernoulli(logit^-1(x . beta)) outcomes, independent N(0, prior_scale^2)
/// prior per coefficient, no intercept. Record layout: d features, then y.
class LogisticRegression : public Model {
 public:
  LogisticRegression(int dim, double prior_scale);

  std::string id() const override { return "logistic_regression"; }
  int dim() const override { return dim_; }
  int record_width() const override { return dim_ + 1; }
  double log_prior(const Vector& theta) const override;
  double log_likelihood(const Matrix& records, const Vector& theta) const override;
  Vector prior_mean() const override;
  nlohmann::json to_json() const override;

 private:
  int dim_;
  double prior_scale_;
};

/// Mixture of K equally weighted Gaussians with known isotropic covariance;
/// the parameter is the stacked K * data_dim vector of component means.
class GaussianMixtureMeans : public Model {
 public:
  GaussianMixtureMeans(int components, int data_dim, double component_var, double prior_scale);

  std::string id() const override { return "gaussian_mixture_means"; }
  int dim() const override { return components_ * data_dim_; }
  int record_width() const override { return data_dim_; }
  double log_prior(const Vector& theta) const override;
  double log_likelihood(const Matrix& records, const Vector& theta) const override;
  Vector prior_mean() const override;
  int permutation_blocks() const override { return components_; }
  nlohmann::json to_json() const override;

  int components() const { return components_; }
  int data_dim() const { return data_dim_; }

 private:
  int components_;
  int data_dim_;
  double component_var_;
  double prior_scale_;
};

/// Hierarchical Poisson-gamma model with the per-record latent rates
/// marginalized out (negative-binomial record likelihood). Sampled on
/// theta = (log a, log b); the prior includes the change-of-variables
/// Jacobian so the subposterior product identity holds on the sampled space.
/// Record layout: count x, exposure t.
class PoissonGamma : public Model {
 public:
  PoissonGamma(double lambda, double alpha, double beta);

  std::string id() const override { return "poisson_gamma"; }
  int dim() const override { return 2; }
  int record_width() const override { return 2; }
  double log_prior(const Vector& theta) const override;
  double log_likelihood(const Matrix& records, const Vector& theta) const override;
  Vector prior_mean() const override;
  nlohmann::json to_json() const override;

 private:
  double lambda_;
  double alpha_;
  double beta_;
};

// --- construction -----------------------------------------------------------

ModelPtr model_from_json(const nlohmann::json& spec);

struct Synthetic {
  ModelPtr model;
  Dataset data;
  Vector true_params;
};

/// Deterministic synthetic data for a model kind. `options` may override the
/// model hyperparameters and generation details; unknown kinds are rejected.
Synthetic generate_synthetic(const std::string& kind, int dim, std::int64_t n,
                             std::uint64_t seed, const nlohmann::json& options = {});

}  // namespace epmc

#endif
