#include "epmc/model.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace epmc;

namespace {

Dataset make_dataset(const Matrix& records, const std::string& id = "test") {
  Dataset dataset;
  dataset.id = id;
  dataset.model_id = "test";
  dataset.records = records;
  return dataset;
}

double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * M_PI * var)) - (x - mean) * (x - mean) / (2.0 * var);
}

// every model used by the Eq. 1 identity and consistency checks
struct NamedCase {
  ModelPtr model;
  Dataset data;
};

std::vector<NamedCase> all_model_cases(std::int64_t n, std::uint64_t seed) {
  std::vector<NamedCase> cases;
  {
    auto s = generate_synthetic("gaussian_conjugate", 2, n, seed,
                                {{"prior_var", 25.0}, {"likelihood_var", 2.0}});
    cases.push_back({s.model, s.data});
  }
  {
    auto s = generate_synthetic("logistic_regression", 3, n, seed + 1);
    cases.push_back({s.model, s.data});
  }
  {
    auto s = generate_synthetic("gaussian_mixture_means", 2, n, seed + 2,
                                {{"components", 2}, {"data_dim", 1}});
    cases.push_back({s.model, s.data});
  }
  {
    auto s = generate_synthetic("poisson_gamma", 2, n, seed + 3);
    cases.push_back({s.model, s.data});
  }
  return cases;
}

}  // namespace

TEST_CASE("partition splits four records into two disjoint covering shards") {
  Matrix records(4, 1);
  records << 1, 2, 3, 4;
  const auto shards = partition(make_dataset(records), 2, 7);
  REQUIRE(shards.size() == 2);
  CHECK(shards[0].size() == 2);
  CHECK(shards[1].size() == 2);
  std::multiset<double> seen;
  for (const auto& shard : shards)
    for (std::int64_t i = 0; i < shard.size(); ++i) seen.insert(shard.records(i, 0));
  CHECK(seen == std::multiset<double>{1, 2, 3, 4});
}

TEST_CASE("partition balances five records as 3+2") {
  Matrix records(5, 1);
  records << 1, 2, 3, 4, 5;
  const auto shards = partition(make_dataset(records), 2, 3);
  std::multiset<std::int64_t> sizes{shards[0].size(), shards[1].size()};
  CHECK(sizes == std::multiset<std::int64_t>{2, 3});
}

TEST_CASE("partition rejects more machines than records and nonpositive M") {
  Matrix records(3, 1);
  records << 1, 2, 3;
  CHECK_THROWS_AS(partition(make_dataset(records), 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(partition(make_dataset(records), 0, 0), std::invalid_argument);
}

TEST_CASE("partition is deterministic in the seed and covers for many shapes") {
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 40);
    const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    Matrix records(n, 2);
    for (std::int64_t i = 0; i < n; ++i) {
      records(i, 0) = static_cast<double>(i);
      records(i, 1) = static_cast<double>(rng() % 1000);
    }
    const auto dataset = make_dataset(records);
    const auto a = partition(dataset, m, 5);
    const auto b = partition(dataset, m, 5);
    std::set<double> ids;
    std::int64_t max_size = 0, min_size = n;
    for (int k = 0; k < m; ++k) {
      CHECK(a[k].records == b[k].records);
      CHECK(a[k].shard_index == k + 1);
      max_size = std::max(max_size, a[k].size());
      min_size = std::min(min_size, a[k].size());
      for (std::int64_t i = 0; i < a[k].size(); ++i) ids.insert(a[k].records(i, 0));
    }
    CHECK(max_size - min_size <= 1);
    CHECK(ids.size() == static_cast<std::size_t>(n));  // disjoint cover
  }
}

TEST_CASE("subposterior with M=1 equals the full log density exactly") {
  for (const auto& test_case : all_model_cases(60, 11)) {
    DataShard full;
    full.parent_id = test_case.data.id;
    full.shard_index = 1;
    full.machines = 1;
    full.records = test_case.data.records;
    Rng rng(5);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int rep = 0; rep < 5; ++rep) {
      Vector theta(test_case.model->dim());
      for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = normal(rng);
      CHECK(subposterior_log_density(*test_case.model, full, theta) ==
            doctest::Approx(full_log_density(*test_case.model, test_case.data, theta))
                .epsilon(1e-14));
    }
  }
}

TEST_CASE("conjugate subposterior matches the hand-derived gaussian oracle") {
  // prior N(0, tau2), likelihood N(theta, sigma2), prior exponent 1/M:
  //   v* = (1/(M tau2) + n/sigma2)^-1, mu* = v* (sum x / sigma2)
  const double tau2 = 9.0, sigma2 = 2.0;
  auto model = std::make_shared<GaussianConjugate>(1, 0.0, tau2, sigma2);
  Matrix records(4, 1);
  records << 0.3, -1.1, 2.0, 0.7;
  const int machines = 3;
  DataShard shard;
  shard.shard_index = 1;
  shard.machines = machines;
  shard.records = records;

  const double v_star = 1.0 / (1.0 / (machines * tau2) + 4.0 / sigma2);
  const double mu_star = v_star * records.sum() / sigma2;

  // difference to the oracle log pdf must be constant in theta
  std::vector<double> offsets;
  for (double theta : {-2.0, -0.5, 0.0, 0.9, 3.1}) {
    Vector t(1);
    t << theta;
    offsets.push_back(subposterior_log_density(*model, shard, t) -
                      log_normal_pdf(theta, mu_star, v_star));
  }
  for (double offset : offsets) CHECK(offset == doctest::Approx(offsets.front()).epsilon(1e-10));

  // analytic_posterior agrees with the same derivation
  const GaussianFit fit = model->analytic_posterior(records, 1.0 / machines);
  CHECK(fit.mean[0] == doctest::Approx(mu_star).epsilon(1e-12));
  CHECK(fit.cov(0, 0) == doctest::Approx(v_star).epsilon(1e-12));
}

TEST_CASE("sum of subposterior log densities minus full log density is constant in theta") {
  for (const auto& test_case : all_model_cases(50, 21)) {
    const auto shards = partition(test_case.data, 5, 17);
    Rng rng(3);
    std::normal_distribution<double> normal(0.0, 0.7);
    double reference = 0.0;
    double reference_scale = 1.0;
    for (int rep = 0; rep < 100; ++rep) {
      Vector theta(test_case.model->dim());
      for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = normal(rng);
      double sub_sum = 0.0;
      for (const auto& shard : shards)
        sub_sum += subposterior_log_density(*test_case.model, shard, theta);
      const double full = full_log_density(*test_case.model, test_case.data, theta);
      const double diff = sub_sum - full;
      if (rep == 0) {
        reference = diff;
        reference_scale = std::max(1.0, std::abs(full));
      } else {
        CHECK(std::abs(diff - reference) / reference_scale <= 1e-8);
      }
    }
  }
}

TEST_CASE("logistic log likelihood on a zero design row is log one half") {
  auto model = std::make_shared<LogisticRegression>(1, 10.0);
  Matrix records(1, 2);
  records << 0.0, 1.0;  // x = 0, y = 1
  for (double theta : {0.7, 3.0, -5.0}) {
    Vector t(1);
    t << theta;
    CHECK(model->log_likelihood(records, t) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  }
}

TEST_CASE("log densities reject dimension mismatches and non-finite parameters") {
  auto model = std::make_shared<GaussianConjugate>(2, 0.0, 4.0, 1.0);
  Matrix records(3, 2);
  records << 0, 1, 2, 0, 1, 1;
  const auto dataset = make_dataset(records);
  Vector wrong(3);
  wrong << 0, 0, 0;
  CHECK_THROWS_AS(full_log_density(*model, dataset, wrong), std::invalid_argument);
  Vector bad(2);
  bad << std::nan(""), 0.0;
  CHECK_THROWS_AS(full_log_density(*model, dataset, bad), std::invalid_argument);
  DataShard shard;
  shard.machines = 2;
  shard.records = records;
  CHECK_THROWS_AS(subposterior_log_density(*model, shard, wrong), std::invalid_argument);
}

TEST_CASE("vectorized log likelihood equals the per-record sum") {
  for (const auto& test_case : all_model_cases(25, 31)) {
    Rng rng(8);
    std::normal_distribution<double> normal(0.0, 0.4);
    for (int rep = 0; rep < 3; ++rep) {
      Vector theta(test_case.model->dim());
      for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = normal(rng);
      double by_record = 0.0;
      for (std::int64_t i = 0; i < test_case.data.size(); ++i)
        by_record += test_case.model->log_likelihood_record(
            test_case.data.records.row(i).transpose(), theta);
      const double vectorized = test_case.model->log_likelihood(test_case.data.records, theta);
      CHECK(vectorized == doctest::Approx(by_record).epsilon(1e-9));
    }
  }
}

TEST_CASE("conjugate analytic densities match numeric normalization on a 1-d grid") {
  auto model = std::make_shared<GaussianConjugate>(1, 0.5, 4.0, 1.5);
  auto synthetic = generate_synthetic("gaussian_conjugate", 1, 40, 77,
                                      {{"prior_mean", 0.5}, {"prior_var", 4.0},
                                       {"likelihood_var", 1.5}});
  const auto* conjugate = static_cast<const GaussianConjugate*>(synthetic.model.get());
  const auto shards = partition(synthetic.data, 3, 9);

  auto check_grid = [&](const GaussianFit& oracle, auto&& log_density) {
    const double sd = std::sqrt(oracle.cov(0, 0));
    const double lo = oracle.mean[0] - 8.0 * sd, hi = oracle.mean[0] + 8.0 * sd;
    const int n = 8192;
    const double dx = (hi - lo) / (n - 1);
    Vector values(n), truth(n);
    for (int i = 0; i < n; ++i) {
      Vector t(1);
      t << lo + dx * i;
      values[i] = log_density(t);
      truth[i] = std::exp(log_normal_pdf(t[0], oracle.mean[0], oracle.cov(0, 0)));
    }
    values = (values.array() - values.maxCoeff()).exp();
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += (i == 0 || i == n - 1 ? 0.5 : 1.0) * values[i] * dx;
    values /= z;
    double l1 = 0.0;
    for (int i = 0; i < n; ++i)
      l1 += (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::abs(values[i] - truth[i]) * dx;
    CHECK(l1 <= 1e-6);
  };

  check_grid(conjugate->analytic_posterior(synthetic.data.records, 1.0), [&](const Vector& t) {
    return full_log_density(*conjugate, synthetic.data, t);
  });
  check_grid(conjugate->analytic_posterior(shards[1].records, 1.0 / 3.0), [&](const Vector& t) {
    return subposterior_log_density(*conjugate, shards[1], t);
  });
}

TEST_CASE("synthetic generation is deterministic") {
  const auto a = generate_synthetic("logistic_regression", 2, 100, 123);
  const auto b = generate_synthetic("logistic_regression", 2, 100, 123);
  CHECK(a.data.records == b.data.records);
  CHECK(a.true_params == b.true_params);
  const auto c = generate_synthetic("logistic_regression", 2, 100, 124);
  CHECK(a.data.records != c.data.records);
}

TEST_CASE("mixture data with symmetric means has small record mean") {
  auto synthetic = generate_synthetic(
      "gaussian_mixture_means", 2, 20000, 55,
      {{"components", 2}, {"data_dim", 1}, {"component_var", 0.01},
       {"true_means", {-5.0, 5.0}}});
  CHECK(std::abs(synthetic.data.records.col(0).mean()) < 0.15);
}

TEST_CASE("poisson gamma with zero exposure produces zero counts") {
  auto synthetic = generate_synthetic("poisson_gamma", 2, 200, 9, {{"exposure", 0.0}});
  CHECK(synthetic.data.records.col(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unsupported model kind is rejected") {
  CHECK_THROWS_AS(generate_synthetic("mystery_model", 2, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(model_from_json({{"kind", "mystery_model"}}), std::invalid_argument);
}

TEST_CASE("poisson gamma prior mean stays in support and targets are finite there") {
  auto synthetic = generate_synthetic("poisson_gamma", 2, 30, 13);
  const auto target = full_target(synthetic.model, synthetic.data);
  CHECK(std::isfinite(target(synthetic.model->prior_mean())));
}
