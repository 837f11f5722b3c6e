#ifndef EPMC_RUNNER_HPP
#define EPMC_RUNNER_HPP

#include "epmc/combine.hpp"
#include "epmc/common.hpp"
#include "epmc/model.hpp"
#include "epmc/sampler.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epmc {

/// Wall-clock accounting. The modeled clock derives every phase duration
/// from instruction counts (record evaluations, weight evaluations, bytes),
/// which keeps full pipelines byte-reproducible; the measured clock uses
/// real timers.
struct ClockModel {
  enum class Kind { modeled, measured };

  Kind kind = Kind::modeled;
  double sec_per_record_eval = 1e-6;
  double combine_sec_per_weight_eval = 1e-8;
  double combine_sec_per_output = 1e-9;
  double bytes_per_second = 1e8;

  static ClockModel from_json(const nlohmann::json& spec);
  nlohmann::json to_json() const;
};

struct ExperimentConfig {
  nlohmann::json model_spec;
  std::int64_t n = 1000;
  std::uint64_t generate_seed = 1;
  int machines = 4;
  std::uint64_t partition_seed = 2;

  std::int64_t chain_iterations = 10000;   // per subposterior chain
  double proposal_scale = 1.0;
  bool adapt = true;
  std::uint64_t sample_seed = 3;
  std::int64_t full_chain_iterations = 10000;

  // groundtruth: "analytic" (conjugate model only) or "chain" with half burn-in
  std::string groundtruth_kind = "analytic";
  std::int64_t groundtruth_iterations = 100000;
  std::int64_t groundtruth_samples = 20000;
  std::uint64_t groundtruth_seed = 4;

  std::vector<std::string> methods{"parametric", "nonparametric", "semiparametric",
                                   "subpost_avg"};
  std::int64_t t_out = 0;  // 0: min over machines
  std::uint64_t combine_seed = 5;
  BandwidthSchedule schedule = BandwidthSchedule::annealed();

  std::vector<double> checkpoints;
  int grid_points = 512;
  ClockModel clock;
  std::filesystem::path out_dir = "experiment_out";

  static ExperimentConfig from_json(const nlohmann::json& spec);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct TimingLedger {
  double sampling_seconds = 0.0;      // max over machines: the phase is parallel
  double sampling_seconds_sum = 0.0;  // for the parallel-clock invariant check
  double full_chain_seconds = 0.0;
  double groundtruth_seconds = 0.0;
  double transfer_seconds = 0.0;
  std::map<std::string, double> combine_seconds;
};

struct ErrorRow {
  std::string method;
  double checkpoint = 0.0;     // requested parallel wall time t
  double time_seconds = 0.0;   // t plus transfer and combination cost
  double l2_error = 0.0;
  std::int64_t samples_used = 0;
  bool available = true;
};

struct ExperimentResult {
  std::vector<ErrorRow> rows;
  TimingLedger ledger;
  std::filesystem::path table_path;
  ModelPtr model;
  Matrix groundtruth;
};

/// Dispatch a combination method by name over in-memory sample sets.
CombineResult run_combine_method(const std::string& method, const std::vector<Matrix>& sets,
                                 std::int64_t t_out, const BandwidthSchedule& schedule,
                                 std::uint64_t seed);
bool is_combine_method(const std::string& method);

/// Full protocol: generate, partition, sample subposteriors and the
/// comparison full-data chain, build groundtruth, then for every checkpoint
/// truncate each chain to the samples available by that parallel wall time,
/// apply the 1/6 burn-in, combine, and score against groundtruth. Combination
/// reads the sample files back from disk; that read is the transfer cost.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::vector<ErrorRow> error_vs_time(const ExperimentConfig& config);  // rows only

/// Error-table CSV: columns method, time_seconds, l2_error, seed.
void write_error_table(const std::filesystem::path& path, const std::vector<ErrorRow>& rows,
                       std::uint64_t seed);
std::vector<ErrorRow> read_error_table(const std::filesystem::path& path);

/// One summary line per (method, checkpoint).
std::string render_report(const std::vector<ErrorRow>& rows);

}  // namespace epmc

#endif
