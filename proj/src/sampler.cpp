#include "epmc/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <future>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace epmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct MHState {
  Vector theta;
  double log_density;
};

// One proposal; returns true if accepted. The state's log density stays in
// sync with theta.
bool mh_step(const TargetDensity& target, MHState& state, const Vector& scale, Rng& rng,
             std::int64_t& nonfinite, std::normal_distribution<double>& normal,
             std::uniform_real_distribution<double>& unif) {
  Vector proposal = state.theta;
  for (Eigen::Index j = 0; j < proposal.size(); ++j) proposal[j] += scale[j] * normal(rng);
  const double lp = target(proposal);
  if (std::isnan(lp)) {
    ++nonfinite;
    unif(rng);  // keep the stream aligned with the accept draw
    return false;
  }
  const double log_u = std::log(unif(rng));
  if (log_u < lp - state.log_density) {
    state.theta = std::move(proposal);
    state.log_density = lp;
    return true;
  }
  return false;
}

void permute_blocks(Vector& theta, int blocks, Rng& rng) {
  const int block_dim = static_cast<int>(theta.size()) / blocks;
  std::vector<int> order(blocks);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Vector permuted(theta.size());
  for (int b = 0; b < blocks; ++b)
    permuted.segment(b * block_dim, block_dim) = theta.segment(order[b] * block_dim, block_dim);
  theta = std::move(permuted);
}

}  // namespace

MHConfig MHConfig::with_scale(double scale, std::int64_t iterations, std::uint64_t seed) {
  MHConfig cfg;
  cfg.proposal_scale = Vector::Constant(1, scale);
  cfg.iterations = iterations;
  cfg.seed = seed;
  return cfg;
}

ChainOutput run_mh(const TargetDensity& target, const Vector& init, const MHConfig& cfg) {
  require(cfg.iterations >= 1, "run_mh: iterations must be >= 1");
  require(cfg.proposal_scale.size() == 1 || cfg.proposal_scale.size() == target.dim,
          "run_mh: proposal scale must be scalar or match the target dimension");
  require((cfg.proposal_scale.array() > 0).all(), "run_mh: proposal scale must be positive");
  if (cfg.permute_blocks > 0)
    require(target.dim % cfg.permute_blocks == 0,
            "run_mh: dimension not divisible into permutation blocks");

  Vector scale = cfg.proposal_scale.size() == 1
                     ? Vector::Constant(target.dim, cfg.proposal_scale[0])
                     : cfg.proposal_scale;

  MHState state{init, target(init)};
  require(std::isfinite(state.log_density), "run_mh: initial point outside the target support");

  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  ChainOutput out;
  out.seed = cfg.seed;
  out.target_kind = target.kind;

  // Optional pre-phase: double/halve a scalar factor every 100 steps until
  // the round's accept rate lands in [0.15, 0.35]. These steps are discarded.
  double factor = 1.0;
  if (cfg.adapt) {
    constexpr int kRound = 100;
    constexpr int kMaxRounds = 50;
    for (int round = 0; round < kMaxRounds; ++round) {
      int accepted = 0;
      Vector scaled = factor * scale;
      for (int i = 0; i < kRound; ++i) {
        if (cfg.permute_blocks > 0) {
          permute_blocks(state.theta, cfg.permute_blocks, rng);
          state.log_density = target(state.theta);
        }
        if (mh_step(target, state, scaled, rng, out.nonfinite_proposals, normal, unif))
          ++accepted;
      }
      const double rate = static_cast<double>(accepted) / kRound;
      if (rate > 0.35)
        factor *= 2.0;
      else if (rate < 0.15)
        factor /= 2.0;
      else
        break;
    }
    scale *= factor;
  }
  out.scale_factor = factor;

  out.samples.resize(cfg.iterations, target.dim);
  for (std::int64_t i = 0; i < cfg.iterations; ++i) {
    if (cfg.permute_blocks > 0) {
      permute_blocks(state.theta, cfg.permute_blocks, rng);
      state.log_density = target(state.theta);
    }
    if (mh_step(target, state, scale, rng, out.nonfinite_proposals, normal, unif))
      ++out.accept_count;
    out.samples.row(i) = state.theta.transpose();
  }
  out.accept_rate = static_cast<double>(out.accept_count) / static_cast<double>(cfg.iterations);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

Matrix remove_burn_in(const Matrix& samples, double fraction) {
  require(samples.rows() >= 1, "remove_burn_in: empty sample matrix");
  require(fraction >= 0.0 && fraction < 1.0, "remove_burn_in: fraction must be in [0, 1)");
  const auto drop = static_cast<std::int64_t>(
      std::floor(fraction * static_cast<double>(samples.rows())));
  return samples.bottomRows(samples.rows() - drop);
}

int worker_limit() {
  if (const char* env = std::getenv("EPMC_WORKERS")) {
    const int workers = std::atoi(env);
    if (workers >= 1) return workers;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<SubposteriorSamples> run_subposteriors(ModelPtr model,
                                                   const std::vector<DataShard>& shards,
                                                   const MHConfig& cfg_template,
                                                   std::uint64_t base_seed) {
  require(!shards.empty(), "run_subposteriors: no shards");

  auto run_one = [&](const DataShard& shard) {
    const TargetDensity target = subposterior_target(model, shard);
    MHConfig cfg = cfg_template;
    cfg.seed = base_seed + static_cast<std::uint64_t>(shard.shard_index);
    try {
      const ChainOutput chain = run_mh(target, model->prior_mean(), cfg);
      SubposteriorSamples result;
      result.samples = remove_burn_in(chain.samples);
      result.shard_index = shard.shard_index;
      result.machines = shard.machines;
      result.seed = cfg.seed;
      result.model_id = model->id();
      result.accept_rate = chain.accept_rate;
      result.wall_seconds = chain.wall_seconds;
      return result;
    } catch (const std::exception& e) {
      throw std::runtime_error("shard " + std::to_string(shard.shard_index) + " of " +
                               std::to_string(shard.machines) + ": " + e.what());
    }
  };

  std::vector<SubposteriorSamples> results(shards.size());
  const int workers = std::min<int>(worker_limit(), static_cast<int>(shards.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < shards.size(); ++i) results[i] = run_one(shards[i]);
    return results;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> tasks;
  std::mutex error_mutex;
  std::exception_ptr error;
  for (int w = 0; w < workers; ++w) {
    tasks.push_back(std::async(std::launch::async, [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= shards.size()) return;
        try {
          results[i] = run_one(shards[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    }));
  }
  for (auto& task : tasks) task.get();
  if (error) std::rethrow_exception(error);
  return results;
}

}  // namespace epmc
