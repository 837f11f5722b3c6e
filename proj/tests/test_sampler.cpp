#include "epmc/sampler.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>

using namespace epmc;

namespace {

TargetDensity lambda_target(int dim, std::function<double(const Vector&)> f) {
  TargetDensity target;
  target.dim = dim;
  target.log_density = std::move(f);
  return target;
}

TargetDensity standard_normal_1d() {
  return lambda_target(1, [](const Vector& t) { return -0.5 * t[0] * t[0]; });
}

// batch-means standard error of the chain mean for one coordinate
double batch_means_se(const Vector& values) {
  const std::int64_t n = values.size();
  const std::int64_t batches = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
  const std::int64_t per = n / batches;
  Vector means(batches);
  for (std::int64_t b = 0; b < batches; ++b) means[b] = values.segment(b * per, per).mean();
  const double grand = means.mean();
  const double var = (means.array() - grand).square().sum() / (batches - 1);
  return std::sqrt(var / batches);
}

}  // namespace

TEST_CASE("chain on a standard normal recovers its moments") {
  MHConfig cfg = MHConfig::with_scale(2.4, 50000, 42);
  const ChainOutput out = run_mh(standard_normal_1d(), Vector::Zero(1), cfg);
  const double mean = out.samples.col(0).mean();
  const double var = (out.samples.col(0).array() - mean).square().sum() / (out.samples.rows() - 1);
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
  CHECK(out.accept_rate > 0.2);
  CHECK(out.accept_rate < 0.7);
}

TEST_CASE("vanishing proposal scale accepts nearly everything") {
  MHConfig cfg = MHConfig::with_scale(1e-8, 20000, 7);
  const ChainOutput out = run_mh(standard_normal_1d(), Vector::Constant(1, 0.3), cfg);
  CHECK(out.accept_rate > 0.999);
  CHECK(std::abs(out.samples.col(0).maxCoeff() - 0.3) < 1e-3);
}

TEST_CASE("chains are bit-identical under the same seed and config") {
  MHConfig cfg = MHConfig::with_scale(1.0, 5000, 99);
  const ChainOutput a = run_mh(standard_normal_1d(), Vector::Zero(1), cfg);
  const ChainOutput b = run_mh(standard_normal_1d(), Vector::Zero(1), cfg);
  CHECK(a.samples == b.samples);
  CHECK(a.accept_count == b.accept_count);
}

TEST_CASE("initial point outside the support is rejected") {
  auto target = lambda_target(1, [](const Vector& t) {
    return t[0] > 0 ? -t[0] : -std::numeric_limits<double>::infinity();
  });
  MHConfig cfg = MHConfig::with_scale(1.0, 100, 1);
  CHECK_THROWS_AS(run_mh(target, Vector::Constant(1, -1.0), cfg), std::invalid_argument);
}

TEST_CASE("burn-in drop follows the floor rule") {
  Matrix samples(6, 1);
  samples << 1, 2, 3, 4, 5, 6;
  const Matrix kept = remove_burn_in(samples);
  REQUIRE(kept.rows() == 5);
  CHECK(kept(0, 0) == 2);  // first row dropped, order preserved
  CHECK(kept(4, 0) == 6);

  CHECK(remove_burn_in(samples, 0.0) == samples);

  Matrix five(5, 1);
  five << 1, 2, 3, 4, 5;
  CHECK(remove_burn_in(five).rows() == 5);  // floor(5/6) = 0

  Matrix empty(0, 1);
  CHECK_THROWS_AS(remove_burn_in(empty), std::invalid_argument);
  CHECK_THROWS_AS(remove_burn_in(five, 1.0), std::invalid_argument);
}

TEST_CASE("double-well occupancy is symmetric") {
  auto target = lambda_target(1, [](const Vector& t) {
    const double w = t[0] * t[0] - 1.0;
    return -4.0 * w * w;
  });
  MHConfig cfg = MHConfig::with_scale(1.5, 2000000, 5);
  const ChainOutput out = run_mh(target, Vector::Constant(1, 1.0), cfg);
  const double right = (out.samples.col(0).array() > 0).cast<double>().mean();
  CHECK(std::abs(right - 0.5) <= 0.02);
}

TEST_CASE("adaptation settles the accept rate into the target band") {
  // start with an absurd scale; the pre-phase should walk it back
  MHConfig cfg = MHConfig::with_scale(500.0, 20000, 17);
  cfg.adapt = true;
  const ChainOutput out = run_mh(standard_normal_1d(), Vector::Zero(1), cfg);
  CHECK(out.scale_factor < 1.0);
  CHECK(out.accept_rate > 0.10);
  CHECK(out.accept_rate < 0.45);
}

TEST_CASE("block permutation moves between label-symmetric modes") {
  // two sharp modes at (-2, 2) and (2, -2); the walk cannot cross, the
  // permutation move can
  auto target = lambda_target(2, [](const Vector& t) {
    const double a = -((t[0] + 2) * (t[0] + 2) + (t[1] - 2) * (t[1] - 2)) / 0.02;
    const double b = -((t[0] - 2) * (t[0] - 2) + (t[1] + 2) * (t[1] + 2)) / 0.02;
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
  });
  MHConfig cfg = MHConfig::with_scale(0.1, 50000, 23);
  cfg.permute_blocks = 2;
  Vector init(2);
  init << -2, 2;
  const ChainOutput out = run_mh(target, init, cfg);
  const double first_mode = (out.samples.col(0).array() < 0).cast<double>().mean();
  CHECK(first_mode > 0.3);
  CHECK(first_mode < 0.7);
}

TEST_CASE("subposterior runs: M=1 equals a single full-posterior chain") {
  auto synthetic = generate_synthetic("gaussian_conjugate", 2, 50, 3);
  const auto shards = partition(synthetic.data, 1, 1);
  MHConfig cfg = MHConfig::with_scale(0.5, 3000, 0);
  const auto subs = run_subposteriors(synthetic.model, shards, cfg, 100);
  REQUIRE(subs.size() == 1);

  MHConfig direct = cfg;
  direct.seed = 101;  // base_seed + shard index
  const TargetDensity target = full_target(synthetic.model, synthetic.data);
  const ChainOutput chain = run_mh(target, synthetic.model->prior_mean(), direct);
  CHECK(subs[0].samples == remove_burn_in(chain.samples));
  CHECK(subs[0].seed == 101);
}

TEST_CASE("subposterior runs are identical serially and concurrently") {
  auto synthetic = generate_synthetic("gaussian_conjugate", 2, 120, 5);
  const auto shards = partition(synthetic.data, 4, 2);
  MHConfig cfg = MHConfig::with_scale(0.5, 2000, 0);

  setenv("EPMC_WORKERS", "1", 1);
  const auto serial = run_subposteriors(synthetic.model, shards, cfg, 7);
  setenv("EPMC_WORKERS", "4", 1);
  const auto parallel = run_subposteriors(synthetic.model, shards, cfg, 7);
  unsetenv("EPMC_WORKERS");

  REQUIRE(serial.size() == parallel.size());
  for (std::size_t m = 0; m < serial.size(); ++m) {
    CHECK(serial[m].samples == parallel[m].samples);
    CHECK(serial[m].seed == parallel[m].seed);
  }
}

TEST_CASE("conjugate subposterior chains land within three standard errors") {
  auto synthetic = generate_synthetic("gaussian_conjugate", 1, 400, 8,
                                      {{"prior_var", 25.0}, {"likelihood_var", 4.0}});
  const auto* model = static_cast<const GaussianConjugate*>(synthetic.model.get());
  const auto shards = partition(synthetic.data, 2, 4);
  MHConfig cfg = MHConfig::with_scale(1.0, 80000, 0);
  cfg.adapt = true;
  const auto subs = run_subposteriors(synthetic.model, shards, cfg, 50);

  for (int m = 0; m < 2; ++m) {
    const GaussianFit oracle = model->analytic_posterior(shards[m].records, 0.5);
    const double mean = subs[m].samples.col(0).mean();
    const double se = batch_means_se(subs[m].samples.col(0));
    CHECK(std::abs(mean - oracle.mean[0]) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("chain errors carry the shard index") {
  auto synthetic = generate_synthetic("gaussian_conjugate", 1, 20, 2);
  auto shards = partition(synthetic.data, 2, 1);
  MHConfig cfg = MHConfig::with_scale(1.0, 100, 0);
  cfg.proposal_scale = Vector::Constant(1, -1.0);  // invalid on purpose
  try {
    run_subposteriors(synthetic.model, shards, cfg, 1);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    CHECK(what.find("shard") != std::string::npos);
  }
}
