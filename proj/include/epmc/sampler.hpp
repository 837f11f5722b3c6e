#ifndef EPMC_SAMPLER_HPP
#define EPMC_SAMPLER_HPP

#include "epmc/common.hpp"
#include "epmc/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace epmc {

struct MHConfig {
  Vector proposal_scale;        // per-dimension; broadcast from a scalar if size 1
  std::int64_t iterations = 1000;
  std::uint64_t seed = 0;
  bool adapt = false;           // pre-phase scale tuning, samples discarded
  int permute_blocks = 0;       // >0: random block permutation before each proposal

  static MHConfig with_scale(double scale, std::int64_t iterations, std::uint64_t seed);
};

struct ChainOutput {
  Matrix samples;               // iterations x d, generation order
  double accept_rate = 0.0;
  std::int64_t accept_count = 0;
  std::int64_t nonfinite_proposals = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  double scale_factor = 1.0;    // multiplier settled on by adaptation
  TargetDensity::Kind target_kind = TargetDensity::Kind::full_posterior;
};

/// Gaussian random-walk Metropolis-Hastings. Deterministic given
/// (target, init, cfg); proposals that evaluate to NaN are rejected and
/// counted. When cfg.permute_blocks > 0 the current state's parameter blocks
/// are uniformly permuted before each proposal (an equal-density move for
/// label-symmetric targets).
ChainOutput run_mh(const TargetDensity& target, const Vector& init, const MHConfig& cfg);

/// Drops the first floor(fraction * T) rows, preserving order.
Matrix remove_burn_in(const Matrix& samples, double fraction = kBurnInFraction);

struct SubposteriorSamples {
  Matrix samples;               // burn-in already removed
  int shard_index = 1;
  int machines = 1;
  std::uint64_t seed = 0;
  std::string model_id;
  double accept_rate = 0.0;
  double wall_seconds = 0.0;
};

/// Runs one independent chain per shard (seed = base_seed + shard_index),
/// starting from the model's prior mean, with the 1/6 burn-in rule applied.
/// Chains share no state; worker count comes from the EPMC_WORKERS
/// environment variable (default: hardware concurrency).
std::vector<SubposteriorSamples> run_subposteriors(ModelPtr model,
                                                   const std::vector<DataShard>& shards,
                                                   const MHConfig& cfg_template,
                                                   std::uint64_t base_seed);

int worker_limit();

}  // namespace epmc

#endif
