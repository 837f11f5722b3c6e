#include "epmc/runner.hpp"

#include "epmc/cli.hpp"
#include "epmc/estimate.hpp"
#include "epmc/io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace epmc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

nlohmann::json tiny_experiment_spec(const std::string& out_dir) {
  return {
      {"model",
       {{"kind", "gaussian_conjugate"}, {"dim", 1}, {"prior_mean", 0.0}, {"prior_var", 100.0},
        {"likelihood_var", 4.0}}},
      {"generate", {{"n", 60}, {"seed", 11}}},
      {"partition", {{"machines", 3}, {"seed", 12}}},
      {"sampler", {{"iterations", 900}, {"proposal_scale", 1.0}, {"adapt", true}, {"seed", 13}}},
      {"full_chain", {{"iterations", 900}}},
      {"groundtruth", {{"kind", "analytic"}, {"samples", 800}, {"seed", 14}}},
      {"combine",
       {{"methods", {"parametric", "subpost_avg", "regularChain"}}, {"seed", 15}}},
      {"evaluate", {{"checkpoints", {1e-9, 0.006, 10.0, 20.0}}, {"grid_points", 256}}},
      {"clock", {{"kind", "modeled"}, {"sec_per_record_eval", 1e-6}}},
      {"out", out_dir}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("experiment config round-trips through json and validates") {
  const auto spec = tiny_experiment_spec("x");
  const ExperimentConfig config = ExperimentConfig::from_json(spec);
  CHECK(config.machines == 3);
  CHECK(config.checkpoints.size() == 4);
  const ExperimentConfig again = ExperimentConfig::from_json(config.to_json());
  CHECK(again.to_json() == config.to_json());

  auto bad_method = spec;
  bad_method["combine"]["methods"] = {"parametric", "mystery"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_method), std::invalid_argument);

  auto bad_checkpoints = spec;
  bad_checkpoints["evaluate"]["checkpoints"] = {2.0, 1.0};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_checkpoints), std::invalid_argument);

  auto bad_model = spec;
  bad_model["model"]["kind"] = "mystery";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_model), std::invalid_argument);

  CHECK_THROWS_AS(ExperimentConfig::from_file("/nonexistent/config.json"), std::runtime_error);
}

TEST_CASE("experiment pipeline is byte-identical under the modeled clock") {
  TempDir dir_a("epmc_exp_a");
  TempDir dir_b("epmc_exp_b");
  auto spec_a = tiny_experiment_spec(dir_a.path.string());
  auto spec_b = tiny_experiment_spec(dir_b.path.string());
  const auto result_a = run_experiment(ExperimentConfig::from_json(spec_a));
  const auto result_b = run_experiment(ExperimentConfig::from_json(spec_b));
  CHECK(slurp(result_a.table_path) == slurp(result_b.table_path));
  for (const char* name : {"dataset.csv", "chain_1_of_3.csv", "chain_full.csv",
                           "groundtruth.csv"})
    CHECK(slurp(dir_a.path / name) == slurp(dir_b.path / name));
}

TEST_CASE("experiment rows honor the protocol") {
  TempDir dir("epmc_exp_rows");
  const auto config = ExperimentConfig::from_json(tiny_experiment_spec(dir.path.string()));
  const auto result = run_experiment(config);

  // parallel clock: phase time is the max over machines, below the sum
  CHECK(result.ledger.sampling_seconds < result.ledger.sampling_seconds_sum);
  // shards of 60 records over 3 machines: 20 each; 900 iterations at 1e-6 s
  CHECK(result.ledger.sampling_seconds == doctest::Approx(900 * 20 * 1e-6).epsilon(1e-9));
  CHECK(result.ledger.full_chain_seconds == doctest::Approx(900 * 60 * 1e-6).epsilon(1e-9));

  auto rows_of = [&](const std::string& method) {
    std::vector<ErrorRow> rows;
    for (const auto& row : result.rows)
      if (row.method == method) rows.push_back(row);
    return rows;
  };

  // the first checkpoint is too early for any samples
  for (const auto& method : {"parametric", "subpost_avg", "regularChain"}) {
    const auto rows = rows_of(method);
    REQUIRE(rows.size() == 4);
    CHECK_FALSE(rows[0].available);
    CHECK(std::isnan(rows[0].l2_error));
  }

  // regularChain carries no combination cost and follows the burn-in rule
  const auto regular = rows_of("regularChain");
  CHECK(regular[1].time_seconds == regular[1].checkpoint);
  const auto done = static_cast<std::int64_t>(std::floor(0.006 / (60 * 1e-6)));
  CHECK(regular[1].samples_used == done - done / 6);

  // saturated checkpoints use all samples and reproduce the batch error
  const auto parametric = rows_of("parametric");
  CHECK(parametric[2].samples_used == parametric[3].samples_used);
  CHECK(parametric[2].l2_error == parametric[3].l2_error);
  CHECK(parametric[2].time_seconds > parametric[2].checkpoint);  // transfer + combine added

  // subposterior phase wrote one raw chain per machine with full iterations
  for (int m = 1; m <= 3; ++m) {
    const Matrix chain = read_matrix_csv(dir.path / ("chain_" + std::to_string(m) + "_of_3.csv"));
    CHECK(chain.rows() == 900);
  }

  // written table parses back with the unavailable marker intact
  const auto parsed = read_error_table(result.table_path);
  REQUIRE(parsed.size() == result.rows.size());
  CHECK_FALSE(parsed[0].available);
  int available = 0;
  for (const auto& row : parsed) available += row.available ? 1 : 0;
  CHECK(available == 9);
}

TEST_CASE("report emits one row per method and checkpoint") {
  TempDir dir("epmc_exp_report");
  const auto config = ExperimentConfig::from_json(tiny_experiment_spec(dir.path.string()));
  const auto result = run_experiment(config);
  const std::string report = render_report(result.rows);
  const auto lines = std::count(report.begin(), report.end(), '\n');
  CHECK(lines == 1 + 3 * 4);  // header + methods x checkpoints
}

TEST_CASE("cli pipeline: generate, partition, sample, combine, evaluate") {
  TempDir dir("epmc_cli");
  const std::string data = (dir.path / "data").string();

  CHECK(run_cli({"generate", "--model", "gaussian_conjugate", "--dim", "1", "--n", "40",
                 "--seed", "3", "--out", data,
                 "--options", R"({"prior_var": 25.0, "likelihood_var": 4.0})"}) == 0);
  CHECK(run_cli({"partition", "--data", data, "--M", "2", "--seed", "4"}) == 0);
  CHECK(run_cli({"sample", "--data", data, "--M", "2", "--iterations", "1200", "--scale", "1.0",
                 "--seed", "5"}) == 0);

  // the sample files follow the burn-in drop rule exactly
  const Matrix sub1 = read_matrix_csv(fs::path(data) / "subpost_1_of_2.csv");
  CHECK(sub1.rows() == 1200 - 1200 / 6);

  const std::string combined = (dir.path / "combined.csv").string();
  CHECK(run_cli({"combine", "--inputs", data, "--method", "nonparametric", "--seed", "6",
                 "--out", combined}) == 0);
  const Matrix combined_samples = read_matrix_csv(combined);
  CHECK(combined_samples.rows() == sub1.rows());
  const auto meta = read_meta(combined);
  CHECK(meta.at("method") == "nonparametric");
  CHECK(meta.at("weight_evals").get<std::int64_t>() == combined_samples.rows() * 2);

  CHECK(run_cli({"evaluate", "--p", combined, "--q",
                 (fs::path(data) / "subpost_1_of_2.csv").string()}) == 0);

  // invalid configuration exits nonzero
  CHECK(run_cli({"combine", "--inputs", data, "--method", "mystery"}) != 0);
  CHECK(run_cli({"experiment", "--config", "/nonexistent.json"}) != 0);

  // deleting one machine's samples breaks combination loudly
  fs::remove(fs::path(data) / "subpost_2_of_2.csv");
  CHECK(run_cli({"combine", "--inputs", data, "--method", "nonparametric", "--seed", "6",
                 "--out", combined}) != 0);
}

TEST_CASE("cli parametric combine of a single machine matches its fit") {
  TempDir dir("epmc_cli_m1");
  const std::string data = (dir.path / "data").string();
  CHECK(run_cli({"generate", "--model", "gaussian_conjugate", "--dim", "1", "--n", "30",
                 "--seed", "9", "--out", data}) == 0);
  CHECK(run_cli({"sample", "--data", data, "--iterations", "9000", "--scale", "0.5",
                 "--seed", "10"}) == 0);
  const std::string combined = (dir.path / "combined.csv").string();
  CHECK(run_cli({"combine", "--inputs", data, "--method", "parametric", "--t-out", "40000",
                 "--seed", "11", "--out", combined}) == 0);

  const Matrix source = read_matrix_csv(fs::path(data) / "subpost_1_of_1.csv");
  const GaussianFit fit = fit_gaussian(source);
  const Matrix out = read_matrix_csv(combined);
  const double mean = out.col(0).mean();
  const double var = (out.col(0).array() - mean).square().sum() / (out.rows() - 1);
  CHECK(mean == doctest::Approx(fit.mean[0]).epsilon(0.02));
  CHECK(var == doctest::Approx(fit.cov(0, 0)).epsilon(0.05));
}

TEST_CASE("experiment with a chain groundtruth works on a non-conjugate model") {
  TempDir dir("epmc_exp_chain_truth");
  auto spec = tiny_experiment_spec(dir.path.string());
  spec["model"] = {{"kind", "poisson_gamma"}, {"lambda", 1.0}, {"alpha", 2.0}, {"beta", 1.0}};
  spec["generate"] = {{"n", 40}, {"seed", 21}};
  spec["groundtruth"] = {{"kind", "chain"}, {"iterations", 3000}, {"seed", 22}};
  spec["combine"] = {{"methods", {"semiparametric", "subpost_pool"}}, {"seed", 23}};
  spec["evaluate"] = {{"checkpoints", {5.0, 10.0}}, {"grid_points", 128}};
  const auto result = run_experiment(ExperimentConfig::from_json(spec));
  int available = 0;
  for (const auto& row : result.rows) {
    if (row.available) {
      ++available;
      CHECK(std::isfinite(row.l2_error));
    }
  }
  CHECK(available == 4);
}
