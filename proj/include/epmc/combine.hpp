#ifndef EPMC_COMBINE_HPP
#define EPMC_COMBINE_HPP

#include "epmc/common.hpp"
#include "epmc/gaussian.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace epmc {

/// Kernel width rule. The annealed rule follows the per-output-index
/// schedule h(i) = i^(-1/(2*beta+d)) (the listing's i^(-1/(4+d)) at the
/// default beta = 2); the fixed rule pins h = T^(-1/(2*beta+d)) for a
/// given subposterior sample count T.
struct BandwidthSchedule {
  enum class Kind { annealed, fixed };

  Kind kind = Kind::annealed;
  double beta = 2.0;
  std::int64_t fixed_t = 0;

  double bandwidth(std::int64_t i, int d) const;

  static BandwidthSchedule annealed(double beta = 2.0);
  static BandwidthSchedule fixed_for(std::int64_t t, double beta = 2.0);
};

struct CombineResult {
  Matrix samples;
  std::string method;
  double accept_rate = 1.0;            // IMG methods only; 1 otherwise
  std::int64_t weight_evals = 0;       // proposal-weight evaluations
  double wall_seconds = 0.0;
};

/// Product of Gaussian subposterior fits: precision-summed covariance and
/// precision-weighted mean.
struct GaussianProduct {
  Vector mean;
  Matrix cov;
};
GaussianProduct gaussian_product(const std::vector<GaussianFit>& fits);

/// Draws t_out iid samples from the Gaussian density product of the fits.
CombineResult parametric_combine(const std::vector<GaussianFit>& fits, std::int64_t t_out,
                                 std::uint64_t seed);

/// Mixture-component mean and unnormalized log weight for one index tuple:
/// theta_bar = mean of the selected samples, log w = sum over machines of
/// log N_d(theta_m | theta_bar, h^2 I). All weight math stays in log space.
std::pair<Vector, double> component_log_weight(const std::vector<Matrix>& sets,
                                               const std::vector<std::int64_t>& index, double h);

enum class SemiWeight { W, w };

/// Semiparametric mixture-component parameters and log weight for one index
/// tuple, given the per-machine fits and their Gaussian product.
struct SemiComponent {
  Vector mean;
  Matrix cov;
  double log_weight_w = 0.0;   // nonparametric log w
  double log_weight_W = 0.0;   // semiparametric log W
};
SemiComponent semiparametric_params(const std::vector<Matrix>& sets,
                                    const std::vector<std::int64_t>& index, double h,
                                    const std::vector<GaussianFit>& fits);

/// Independent Metropolis within Gibbs over mixture-index tuples:
/// systematic scan over machines, uniform index proposals, accept by
/// log-weight difference, then emit from the current component.
CombineResult img_combine_nonparametric(const std::vector<Matrix>& sets, std::int64_t t_out,
                                        const BandwidthSchedule& schedule, std::uint64_t seed);

CombineResult img_combine_semiparametric(const std::vector<Matrix>& sets, std::int64_t t_out,
                                         const BandwidthSchedule& schedule, std::uint64_t seed,
                                         SemiWeight weight_mode = SemiWeight::W);

enum class PairMethod { nonparametric, semiparametric, semiparametric_w };

/// Combines adjacent pairs per round (odd set passes through) until one set
/// remains: ceil(log2 M) rounds, M-1 pair combinations, 2*t_out*(M-1) weight
/// evaluations. M = 1 returns the input unchanged.
CombineResult pairwise_combine(const std::vector<Matrix>& sets, std::int64_t t_out,
                               const BandwidthSchedule& schedule, std::uint64_t seed,
                               PairMethod method = PairMethod::nonparametric);

/// Consensus-style baseline: after a seeded independent permutation of each
/// set's rows, output row i is the across-machine mean of the rows at i.
CombineResult subpost_avg(const std::vector<Matrix>& sets, std::uint64_t seed);

/// Baseline: concatenation of all sets.
CombineResult subpost_pool(const std::vector<Matrix>& sets);

/// Diagnostic for the IMG chain: run `steps` single-index proposals at a
/// fixed bandwidth and count visits per index tuple (row-major over the
/// tuple space). Feasible only for tiny T^M; used by the stationarity oracle.
std::vector<std::int64_t> img_index_occupancy(const std::vector<Matrix>& sets, double h,
                                              std::int64_t steps, std::uint64_t seed);

enum class OnlineMethod { nonparametric, semiparametric, semiparametric_w };

/// Streaming combination: samples are pushed one at a time per machine while
/// running Gaussian fits are maintained; once every machine has a sample the
/// combiner emits one output per completed round of M pushes by advancing an
/// IMG chain over the growing reservoirs. drain() tops the output up to the
/// batch default (min reservoir size).
class OnlineCombiner {
 public:
  OnlineCombiner(int machines, BandwidthSchedule schedule, OnlineMethod method,
                 std::uint64_t seed);
  ~OnlineCombiner();
  OnlineCombiner(OnlineCombiner&&) noexcept;
  OnlineCombiner& operator=(OnlineCombiner&&) noexcept;

  /// machine is 1-based in [1, machines].
  void push(int machine, const Vector& theta);
  /// Returns emitted samples accumulated since the last call and clears them.
  Matrix pop_ready();
  /// Emits until the output count reaches min over machines of the reservoir
  /// size (the batch t_out default).
  void drain();

  GaussianFit running_fit(int machine) const;
  std::int64_t emitted() const;
  std::int64_t weight_evals() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epmc

#endif
