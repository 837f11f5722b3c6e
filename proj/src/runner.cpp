#include "epmc/runner.hpp"

#include "epmc/estimate.hpp"
#include "epmc/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace epmc {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

double measured_seconds(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct StoredChain {
  Matrix samples;              // raw, no burn-in
  double iteration_seconds;    // per-iteration cost under the active clock
  std::int64_t records;
};

}  // namespace

ClockModel ClockModel::from_json(const nlohmann::json& spec) {
  ClockModel clock;
  if (spec.is_null()) return clock;
  const std::string kind = spec.value("kind", "modeled");
  if (kind == "modeled")
    clock.kind = Kind::modeled;
  else if (kind == "measured")
    clock.kind = Kind::measured;
  else
    throw std::invalid_argument("clock: unknown kind '" + kind + "'");
  clock.sec_per_record_eval = spec.value("sec_per_record_eval", clock.sec_per_record_eval);
  clock.combine_sec_per_weight_eval =
      spec.value("combine_sec_per_weight_eval", clock.combine_sec_per_weight_eval);
  clock.combine_sec_per_output = spec.value("combine_sec_per_output", clock.combine_sec_per_output);
  clock.bytes_per_second = spec.value("bytes_per_second", clock.bytes_per_second);
  return clock;
}

nlohmann::json ClockModel::to_json() const {
  return {{"kind", kind == Kind::modeled ? "modeled" : "measured"},
          {"sec_per_record_eval", sec_per_record_eval},
          {"combine_sec_per_weight_eval", combine_sec_per_weight_eval},
          {"combine_sec_per_output", combine_sec_per_output},
          {"bytes_per_second", bytes_per_second}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& spec) {
  ExperimentConfig config;
  require(spec.contains("model"), "experiment config: missing model spec");
  config.model_spec = spec.at("model");
  model_from_json(config.model_spec);  // validate early

  const auto generate = spec.value("generate", nlohmann::json::object());
  config.n = generate.value("n", config.n);
  config.generate_seed = generate.value("seed", config.generate_seed);

  const auto part = spec.value("partition", nlohmann::json::object());
  config.machines = part.value("machines", config.machines);
  config.partition_seed = part.value("seed", config.partition_seed);

  const auto sampler = spec.value("sampler", nlohmann::json::object());
  config.chain_iterations = sampler.value("iterations", config.chain_iterations);
  config.proposal_scale = sampler.value("proposal_scale", config.proposal_scale);
  config.adapt = sampler.value("adapt", config.adapt);
  config.sample_seed = sampler.value("seed", config.sample_seed);
  config.full_chain_iterations =
      spec.value("full_chain", nlohmann::json::object()).value("iterations", config.chain_iterations);

  const auto truth = spec.value("groundtruth", nlohmann::json::object());
  config.groundtruth_kind = truth.value("kind", config.groundtruth_kind);
  require(config.groundtruth_kind == "analytic" || config.groundtruth_kind == "chain",
          "experiment config: groundtruth kind must be 'analytic' or 'chain'");
  config.groundtruth_iterations = truth.value("iterations", config.groundtruth_iterations);
  config.groundtruth_samples = truth.value("samples", config.groundtruth_samples);
  config.groundtruth_seed = truth.value("seed", config.groundtruth_seed);

  const auto combine = spec.value("combine", nlohmann::json::object());
  if (combine.contains("methods"))
    config.methods = combine.at("methods").get<std::vector<std::string>>();
  for (const auto& method : config.methods)
    require(is_combine_method(method) || method == "regularChain",
            "experiment config: unknown method '" + method + "'");
  config.t_out = combine.value("t_out", config.t_out);
  config.combine_seed = combine.value("seed", config.combine_seed);
  if (combine.contains("schedule")) {
    const auto& sched = combine.at("schedule");
    const std::string kind = sched.value("kind", "annealed");
    const double beta = sched.value("beta", 2.0);
    if (kind == "annealed")
      config.schedule = BandwidthSchedule::annealed(beta);
    else if (kind == "fixed")
      config.schedule = BandwidthSchedule::fixed_for(sched.value("t", std::int64_t{1}), beta);
    else
      throw std::invalid_argument("experiment config: unknown schedule kind '" + kind + "'");
  }

  const auto evaluate = spec.value("evaluate", nlohmann::json::object());
  if (evaluate.contains("checkpoints"))
    config.checkpoints = evaluate.at("checkpoints").get<std::vector<double>>();
  for (std::size_t i = 1; i < config.checkpoints.size(); ++i)
    require(config.checkpoints[i] > config.checkpoints[i - 1],
            "experiment config: checkpoints must be strictly increasing");
  config.grid_points = evaluate.value("grid_points", config.grid_points);

  config.clock = ClockModel::from_json(spec.value("clock", nlohmann::json()));
  config.out_dir = spec.value("out", config.out_dir.string());
  return config;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json spec;
  try {
    in >> spec;
  } catch (const std::exception& e) {
    throw std::runtime_error("config parse error in " + path.string() + ": " + e.what());
  }
  return from_json(spec);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json sched{{"kind", schedule.kind == BandwidthSchedule::Kind::annealed ? "annealed"
                                                                                   : "fixed"},
                       {"beta", schedule.beta}};
  if (schedule.kind == BandwidthSchedule::Kind::fixed) sched["t"] = schedule.fixed_t;
  return {{"model", model_spec},
          {"generate", {{"n", n}, {"seed", generate_seed}}},
          {"partition", {{"machines", machines}, {"seed", partition_seed}}},
          {"sampler",
           {{"iterations", chain_iterations},
            {"proposal_scale", proposal_scale},
            {"adapt", adapt},
            {"seed", sample_seed}}},
          {"full_chain", {{"iterations", full_chain_iterations}}},
          {"groundtruth",
           {{"kind", groundtruth_kind},
            {"iterations", groundtruth_iterations},
            {"samples", groundtruth_samples},
            {"seed", groundtruth_seed}}},
          {"combine",
           {{"methods", methods}, {"t_out", t_out}, {"seed", combine_seed}, {"schedule", sched}}},
          {"evaluate", {{"checkpoints", checkpoints}, {"grid_points", grid_points}}},
          {"clock", clock.to_json()},
          {"out", out_dir.string()}};
}

CombineResult run_combine_method(const std::string& method, const std::vector<Matrix>& sets,
                                 std::int64_t t_out, const BandwidthSchedule& schedule,
                                 std::uint64_t seed) {
  if (method == "parametric") {
    std::vector<GaussianFit> fits;
    fits.reserve(sets.size());
    for (const auto& set : sets) fits.push_back(fit_gaussian(set));
    std::int64_t count = t_out;
    if (count <= 0) {
      count = sets.front().rows();
      for (const auto& set : sets) count = std::min(count, set.rows());
    }
    return parametric_combine(fits, count, seed);
  }
  if (method == "nonparametric") return img_combine_nonparametric(sets, t_out, schedule, seed);
  if (method == "semiparametric")
    return img_combine_semiparametric(sets, t_out, schedule, seed, SemiWeight::W);
  if (method == "semiparametric_w")
    return img_combine_semiparametric(sets, t_out, schedule, seed, SemiWeight::w);
  if (method == "pairwise_nonparametric")
    return pairwise_combine(sets, t_out, schedule, seed, PairMethod::nonparametric);
  if (method == "pairwise_semiparametric")
    return pairwise_combine(sets, t_out, schedule, seed, PairMethod::semiparametric);
  if (method == "pairwise_semiparametric_w")
    return pairwise_combine(sets, t_out, schedule, seed, PairMethod::semiparametric_w);
  if (method == "subpost_avg") return subpost_avg(sets, seed);
  if (method == "subpost_pool") return subpost_pool(sets);
  throw std::invalid_argument(
      "unknown combination method '" + method +
      "'; expected one of parametric, nonparametric, semiparametric, semiparametric_w, "
      "pairwise_nonparametric, pairwise_semiparametric, pairwise_semiparametric_w, "
      "subpost_avg, subpost_pool");
}

bool is_combine_method(const std::string& method) {
  static const char* kMethods[] = {
      "parametric", "nonparametric", "semiparametric", "semiparametric_w",
      "pairwise_nonparametric", "pairwise_semiparametric", "pairwise_semiparametric_w",
      "subpost_avg", "subpost_pool"};
  for (const char* m : kMethods)
    if (method == m) return true;
  return false;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  fs::create_directories(config.out_dir);

  // generate + partition
  ModelPtr model = model_from_json(config.model_spec);
  Synthetic synthetic = generate_synthetic(config.model_spec.at("kind").get<std::string>(),
                                           model->dim(), config.n, config.generate_seed,
                                           config.model_spec);
  model = synthetic.model;
  result.model = model;
  write_dataset(config.out_dir, synthetic.data, model->to_json());
  std::vector<DataShard> shards = partition(synthetic.data, config.machines, config.partition_seed);

  // subposterior chains: raw samples go to disk, per-machine timing recorded
  MHConfig cfg;
  cfg.proposal_scale = Vector::Constant(1, config.proposal_scale);
  cfg.iterations = config.chain_iterations;
  cfg.adapt = config.adapt;
  cfg.permute_blocks = model->permutation_blocks() > 1 ? model->permutation_blocks() : 0;

  auto chain_seconds = [&](double wall, std::int64_t iterations, std::int64_t records) {
    if (config.clock.kind == ClockModel::Kind::measured) return wall;
    return config.clock.sec_per_record_eval * static_cast<double>(records) *
           static_cast<double>(iterations);
  };

  std::vector<double> iteration_seconds(config.machines, 0.0);
  {
    std::vector<MHConfig> cfgs;
    for (const auto& shard : shards) {
      MHConfig c = cfg;
      c.seed = config.sample_seed + static_cast<std::uint64_t>(shard.shard_index);
      cfgs.push_back(c);
    }
    for (int m = 0; m < config.machines; ++m) {
      const TargetDensity target = subposterior_target(model, shards[m]);
      const ChainOutput chain = run_mh(target, model->prior_mean(), cfgs[m]);
      const double seconds =
          chain_seconds(chain.wall_seconds, config.chain_iterations, shards[m].size());
      iteration_seconds[m] = seconds / static_cast<double>(config.chain_iterations);
      result.ledger.sampling_seconds = std::max(result.ledger.sampling_seconds, seconds);
      result.ledger.sampling_seconds_sum += seconds;
      const fs::path path = config.out_dir / ("chain_" + std::to_string(m + 1) + "_of_" +
                                              std::to_string(config.machines) + ".csv");
      write_matrix_csv(path, chain.samples);
      write_meta(path, nlohmann::json{{"shard_index", m + 1},
                                      {"machines", config.machines},
                                      {"seed", cfgs[m].seed},
                                      {"iteration_seconds", iteration_seconds[m]},
                                      {"accept_rate", chain.accept_rate},
                                      {"records", shards[m].size()}});
    }
  }

  // full-data comparison chain
  double full_iteration_seconds = 0.0;
  {
    MHConfig c = cfg;
    c.iterations = config.full_chain_iterations;
    c.seed = config.sample_seed;
    const TargetDensity target = full_target(model, synthetic.data);
    const ChainOutput chain = run_mh(target, model->prior_mean(), c);
    const double seconds =
        chain_seconds(chain.wall_seconds, c.iterations, synthetic.data.size());
    full_iteration_seconds = seconds / static_cast<double>(c.iterations);
    result.ledger.full_chain_seconds = seconds;
    const fs::path path = config.out_dir / "chain_full.csv";
    write_matrix_csv(path, chain.samples);
    write_meta(path, nlohmann::json{{"seed", c.seed},
                                    {"iteration_seconds", full_iteration_seconds},
                                    {"accept_rate", chain.accept_rate}});
  }

  // groundtruth samples
  {
    const auto start = std::chrono::steady_clock::now();
    if (config.groundtruth_kind == "analytic") {
      const auto* conjugate = dynamic_cast<const GaussianConjugate*>(model.get());
      require(conjugate != nullptr,
              "experiment: analytic groundtruth requires the gaussian_conjugate model");
      const GaussianFit posterior = conjugate->analytic_posterior(synthetic.data.records, 1.0);
      MvnDensity density(posterior.mean, posterior.cov);
      Rng rng(config.groundtruth_seed);
      result.groundtruth = sample_mvn(density, config.groundtruth_samples, rng);
    } else {
      MHConfig c = cfg;
      c.iterations = config.groundtruth_iterations;
      c.seed = config.groundtruth_seed;
      const TargetDensity target = full_target(model, synthetic.data);
      const ChainOutput chain = run_mh(target, model->prior_mean(), c);
      // groundtruth keeps the second half of a long chain
      result.groundtruth = chain.samples.bottomRows(chain.samples.rows() / 2);
    }
    result.ledger.groundtruth_seconds = measured_seconds(start);
    write_matrix_csv(config.out_dir / "groundtruth.csv", result.groundtruth);
  }

  // transfer: combination reads the per-machine sample files back from disk
  std::vector<StoredChain> chains(config.machines);
  StoredChain full_chain;
  {
    const auto start = std::chrono::steady_clock::now();
    double bytes = 0.0;
    for (int m = 0; m < config.machines; ++m) {
      const fs::path path = config.out_dir / ("chain_" + std::to_string(m + 1) + "_of_" +
                                              std::to_string(config.machines) + ".csv");
      if (!fs::exists(path))
        throw std::runtime_error("experiment: missing sample file " + path.string());
      chains[m].samples = read_matrix_csv(path);
      chains[m].iteration_seconds = iteration_seconds[m];
      chains[m].records = shards[m].size();
      bytes += static_cast<double>(fs::file_size(path));
    }
    full_chain.samples = read_matrix_csv(config.out_dir / "chain_full.csv");
    full_chain.iteration_seconds = full_iteration_seconds;
    result.ledger.transfer_seconds = config.clock.kind == ClockModel::Kind::measured
                                         ? measured_seconds(start)
                                         : bytes / config.clock.bytes_per_second;
  }

  // checkpoints default: quartiles of the parallel sampling phase
  std::vector<double> checkpoints = config.checkpoints;
  if (checkpoints.empty()) {
    const double total = result.ledger.sampling_seconds;
    checkpoints = {0.25 * total, 0.5 * total, 0.75 * total, total};
  }

  const std::optional<GridSpec> no_grid;
  for (const double t : checkpoints) {
    for (const auto& method : config.methods) {
      ErrorRow row;
      row.method = method;
      row.checkpoint = t;

      if (method == "regularChain") {
        const auto done = std::min<std::int64_t>(
            full_chain.samples.rows(),
            static_cast<std::int64_t>(std::floor(t / full_chain.iteration_seconds)));
        row.time_seconds = t;
        if (done < 2) {
          row.available = false;
          row.l2_error = kNaN;
        } else {
          Matrix kept = remove_burn_in(full_chain.samples.topRows(done));
          row.samples_used = kept.rows();
          row.l2_error = l2_distance(kept, result.groundtruth, no_grid);
        }
        result.rows.push_back(row);
        continue;
      }

      std::vector<Matrix> sets;
      bool available = true;
      std::uint64_t truncation_tag = 0;  // same inputs => same combine seed
      for (int m = 0; m < config.machines; ++m) {
        const auto done = std::min<std::int64_t>(
            chains[m].samples.rows(),
            static_cast<std::int64_t>(std::floor(t / chains[m].iteration_seconds)));
        if (done < 3) {  // burn-in must leave at least two rows for the fits
          available = false;
          break;
        }
        truncation_tag = mix_seed(truncation_tag, static_cast<std::uint64_t>(done),
                                  static_cast<std::uint64_t>(m));
        sets.push_back(remove_burn_in(chains[m].samples.topRows(done)));
      }
      if (!available) {
        row.available = false;
        row.l2_error = kNaN;
        row.time_seconds = t;
        result.rows.push_back(row);
        continue;
      }

      CombineResult combined = run_combine_method(
          method, sets, config.t_out, config.schedule,
          mix_seed(config.combine_seed, fnv1a(method), truncation_tag));
      const double combine_time =
          config.clock.kind == ClockModel::Kind::measured
              ? combined.wall_seconds
              : config.clock.combine_sec_per_weight_eval *
                        static_cast<double>(combined.weight_evals) +
                    config.clock.combine_sec_per_output *
                        static_cast<double>(combined.samples.rows());
      result.ledger.combine_seconds[method] += combine_time;
      row.time_seconds = t + result.ledger.transfer_seconds + combine_time;
      row.samples_used = combined.samples.rows();
      row.l2_error = l2_distance(combined.samples, result.groundtruth, no_grid);
      result.rows.push_back(row);
    }
  }

  result.table_path = config.out_dir / "error_table.csv";
  write_error_table(result.table_path, result.rows, config.combine_seed);
  return result;
}

std::vector<ErrorRow> error_vs_time(const ExperimentConfig& config) {
  return run_experiment(config).rows;
}

void write_error_table(const fs::path& path, const std::vector<ErrorRow>& rows,
                       std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "method,time_seconds,l2_error,seed\n";
  char buffer[64];
  for (const auto& row : rows) {
    out << row.method << ',';
    std::snprintf(buffer, sizeof(buffer), "%.17g", row.time_seconds);
    out << buffer << ',';
    if (row.available) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", row.l2_error);
      out << buffer;
    } else {
      out << "unavailable";
    }
    out << ',' << seed << '\n';
  }
}

std::vector<ErrorRow> read_error_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open error table: " + path.string());
  std::vector<ErrorRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string method, time_str, l2_str, seed_str;
    std::getline(ss, method, ',');
    std::getline(ss, time_str, ',');
    std::getline(ss, l2_str, ',');
    std::getline(ss, seed_str, ',');
    ErrorRow row;
    row.method = method;
    row.time_seconds = std::stod(time_str);
    if (l2_str == "unavailable") {
      row.available = false;
      row.l2_error = kNaN;
    } else {
      row.l2_error = std::stod(l2_str);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string render_report(const std::vector<ErrorRow>& rows) {
  std::ostringstream out;
  out << "method,time_seconds,l2_error,status\n";
  for (const auto& row : rows) {
    out << row.method << ',' << row.time_seconds << ',';
    if (row.available)
      out << row.l2_error << ",ok\n";
    else
      out << "nan,unavailable\n";
  }
  return out.str();
}

}  // namespace epmc
