#include "epmc/cli.hpp"

#include "epmc/combine.hpp"
#include "epmc/estimate.hpp"
#include "epmc/io.hpp"
#include "epmc/model.hpp"
#include "epmc/runner.hpp"
#include "epmc/sampler.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace epmc {

namespace fs = std::filesystem;

namespace {

std::vector<Matrix> load_subposterior_sets(const fs::path& dir, int machines) {
  std::vector<Matrix> sets;
  for (int m = 1; m <= machines; ++m) {
    const fs::path path = subposterior_path(dir, m, machines);
    if (!fs::exists(path))
      throw std::runtime_error("missing subposterior sample file: " + path.string());
    sets.push_back(read_matrix_csv(path));
  }
  return sets;
}

int detect_machines(const fs::path& dir) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("subpost_", 0) == 0) {
      const auto of = name.find("_of_");
      const auto dot = name.find(".csv");
      if (of != std::string::npos && dot != std::string::npos)
        return std::stoi(name.substr(of + 4, dot - of - 4));
    }
  }
  throw std::runtime_error("no subpost_*_of_*.csv files under " + dir.string());
}

BandwidthSchedule schedule_from_flags(const std::string& kind, double beta, std::int64_t fixed_t) {
  if (kind == "annealed") return BandwidthSchedule::annealed(beta);
  if (kind == "fixed") return BandwidthSchedule::fixed_for(fixed_t, beta);
  throw std::invalid_argument("unknown schedule '" + kind + "' (annealed or fixed)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"embarrassingly parallel MCMC toolkit"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "draw a synthetic dataset");
  std::string gen_kind = "gaussian_conjugate";
  int gen_dim = 2;
  std::int64_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "data";
  std::string gen_options;
  generate->add_option("--model", gen_kind, "model kind");
  generate->add_option("--dim", gen_dim, "parameter dimension");
  generate->add_option("--n", gen_n, "record count");
  generate->add_option("--seed", gen_seed, "generation seed");
  generate->add_option("--out", gen_out, "output directory");
  generate->add_option("--options", gen_options, "json overrides for hyperparameters");

  // partition
  auto* part = app.add_subcommand("partition", "split a dataset into shards");
  std::string part_data = "data";
  int part_m = 4;
  std::uint64_t part_seed = 2;
  std::string part_out;
  part->add_option("--data", part_data, "dataset directory");
  part->add_option("--M", part_m, "machine count");
  part->add_option("--seed", part_seed, "permutation seed");
  part->add_option("--out", part_out, "shard directory (default: dataset directory)");

  // sample
  auto* sample = app.add_subcommand("sample", "run subposterior MH chains");
  std::string sample_data = "data";
  int sample_m = 0;
  std::int64_t sample_iters = 10000;
  double sample_scale = 1.0;
  bool sample_adapt = true;
  std::uint64_t sample_seed = 3;
  std::string sample_out;
  sample->add_option("--data", sample_data, "dataset/shard directory");
  sample->add_option("--M", sample_m, "machine count (0: full-data chain as M=1)");
  sample->add_option("--iterations", sample_iters, "chain length");
  sample->add_option("--scale", sample_scale, "proposal scale");
  sample->add_flag("--adapt,!--no-adapt", sample_adapt, "pre-phase scale adaptation");
  sample->add_option("--seed", sample_seed, "base seed (chain m uses seed+m)");
  sample->add_option("--out", sample_out, "output directory (default: data directory)");

  // combine
  auto* combine = app.add_subcommand("combine", "combine subposterior sample files");
  std::string combine_in = "data";
  std::string combine_method = "semiparametric";
  std::int64_t combine_t_out = 0;
  std::uint64_t combine_seed = 5;
  std::string combine_schedule = "annealed";
  double combine_beta = 2.0;
  std::int64_t combine_fixed_t = 0;
  std::string combine_out = "combined.csv";
  combine->add_option("--inputs", combine_in, "directory with subpost_*_of_*.csv");
  combine->add_option("--method", combine_method, "combination method");
  combine->add_option("--t-out", combine_t_out, "output sample count (0: min input size)");
  combine->add_option("--seed", combine_seed, "combiner seed");
  combine->add_option("--schedule", combine_schedule, "annealed or fixed");
  combine->add_option("--beta", combine_beta, "smoothness for the bandwidth rule");
  combine->add_option("--fixed-t", combine_fixed_t, "T for the fixed bandwidth rule");
  combine->add_option("--out", combine_out, "output csv");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "L2 distance between two sample files");
  std::string eval_p, eval_q;
  int eval_grid = 512;
  evaluate->add_option("--p", eval_p, "first sample csv")->required();
  evaluate->add_option("--q", eval_q, "second sample csv")->required();
  evaluate->add_option("--grid-points", eval_grid, "grid resolution per dimension");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "full error-vs-time protocol");
  std::string experiment_config;
  experiment->add_option("--config", experiment_config, "experiment config json")->required();

  // report
  auto* report = app.add_subcommand("report", "summarize an error table");
  std::string report_table;
  std::string report_out;
  report->add_option("--table", report_table, "error table csv")->required();
  report->add_option("--out", report_out, "write the summary here as well");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (generate->parsed()) {
      nlohmann::json options = nlohmann::json::object();
      if (!gen_options.empty()) options = nlohmann::json::parse(gen_options);
      Synthetic synthetic = generate_synthetic(gen_kind, gen_dim, gen_n, gen_seed, options);
      write_dataset(gen_out, synthetic.data, synthetic.model->to_json());
      std::cout << "wrote " << synthetic.data.size() << " records to " << gen_out << "\n";
      return 0;
    }

    if (part->parsed()) {
      Dataset dataset = read_dataset(part_data);
      const fs::path out = part_out.empty() ? part_data : part_out;
      for (const auto& shard : partition(dataset, part_m, part_seed)) write_shard(out, shard);
      std::cout << "wrote " << part_m << " shards to " << out.string() << "\n";
      return 0;
    }

    if (sample->parsed()) {
      const fs::path dir = sample_data;
      const fs::path out = sample_out.empty() ? dir : fs::path(sample_out);
      ModelPtr model = model_from_json(read_dataset_model_spec(dir));
      MHConfig cfg;
      cfg.proposal_scale = Vector::Constant(1, sample_scale);
      cfg.iterations = sample_iters;
      cfg.adapt = sample_adapt;
      cfg.permute_blocks = model->permutation_blocks() > 1 ? model->permutation_blocks() : 0;

      std::vector<DataShard> shards;
      if (sample_m <= 1) {
        Dataset dataset = read_dataset(dir);
        DataShard full;
        full.parent_id = dataset.id;
        full.shard_index = 1;
        full.machines = 1;
        full.records = dataset.records;
        shards.push_back(std::move(full));
      } else {
        for (int m = 1; m <= sample_m; ++m) shards.push_back(read_shard(dir, m, sample_m));
      }
      const auto results = run_subposteriors(model, shards, cfg, sample_seed);
      for (const auto& r : results) write_subposterior(out, r);
      std::cout << "wrote " << results.size() << " chains to " << out.string() << "\n";
      return 0;
    }

    if (combine->parsed()) {
      const int machines = detect_machines(combine_in);
      std::vector<Matrix> sets = load_subposterior_sets(combine_in, machines);
      const BandwidthSchedule schedule =
          schedule_from_flags(combine_schedule, combine_beta,
                              combine_fixed_t > 0 ? combine_fixed_t : sets.front().rows());
      CombineResult result =
          run_combine_method(combine_method, sets, combine_t_out, schedule, combine_seed);
      write_matrix_csv(combine_out, result.samples);
      write_meta(combine_out, nlohmann::json{{"method", result.method},
                                             {"machines", machines},
                                             {"seed", combine_seed},
                                             {"schedule", combine_schedule},
                                             {"beta", combine_beta},
                                             {"accept_rate", result.accept_rate},
                                             {"weight_evals", result.weight_evals},
                                             {"wall_seconds", result.wall_seconds},
                                             {"rows", result.samples.rows()}});
      std::cout << result.method << ": " << result.samples.rows() << " samples, accept rate "
                << result.accept_rate << ", weight evals " << result.weight_evals << "\n";
      return 0;
    }

    if (evaluate->parsed()) {
      Matrix p = read_matrix_csv(eval_p);
      Matrix q = read_matrix_csv(eval_q);
      std::optional<GridSpec> grid;
      if (p.cols() <= 2 && eval_grid != 512) {
        Vector bw_p = silverman_bandwidths(p);
        Vector bw_q = silverman_bandwidths(q);
        grid = bounding_grid(p, q, bw_p, bw_q, eval_grid);
      }
      std::cout << l2_distance(p, q, grid) << "\n";
      return 0;
    }

    if (experiment->parsed()) {
      ExperimentConfig config = ExperimentConfig::from_file(experiment_config);
      ExperimentResult result = run_experiment(config);
      std::cout << "sampling (parallel) " << result.ledger.sampling_seconds << " s, transfer "
                << result.ledger.transfer_seconds << " s\n";
      std::cout << "error table: " << result.table_path.string() << "\n";
      return 0;
    }

    if (report->parsed()) {
      const auto rows = read_error_table(report_table);
      const std::string summary = render_report(rows);
      std::cout << summary;
      if (!report_out.empty()) {
        std::ofstream out(report_out);
        out << summary;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace epmc
