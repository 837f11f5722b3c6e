#include "epmc/combine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace epmc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void validate_sets(const std::vector<Matrix>& sets) {
  require(!sets.empty(), "combine: no sample sets");
  const auto d = sets.front().cols();
  for (std::size_t m = 0; m < sets.size(); ++m) {
    require(sets[m].rows() >= 1, "combine: sample set " + std::to_string(m + 1) + " is empty");
    require(sets[m].cols() == d, "combine: sample sets disagree on dimension");
  }
}

std::int64_t default_t_out(const std::vector<Matrix>& sets, std::int64_t t_out) {
  if (t_out > 0) return t_out;
  std::int64_t min_t = sets.front().rows();
  for (const auto& s : sets) min_t = std::min(min_t, s.rows());
  return min_t;
}

struct SemiContext {
  std::vector<GaussianFit> fits;
  GaussianProduct product;
  Matrix lambda;                    // product.cov^{-1}
  Vector lambda_mu;                 // lambda * product.mean
  std::vector<Vector> log_denom;    // [m][t] = log N(theta^m_t | fit_m)
  bool need_denoms = true;
};

Matrix spd_inverse(const Matrix& m, const std::string& what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(what + ": matrix is not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  return ((inv + inv.transpose()) / 2.0).eval();
}

SemiContext make_semi_context(const std::vector<Matrix>& sets, std::vector<GaussianFit> fits,
                              bool need_denoms) {
  SemiContext ctx;
  ctx.fits = std::move(fits);
  ctx.product = gaussian_product(ctx.fits);
  ctx.lambda = spd_inverse(ctx.product.cov, "semiparametric combine");
  ctx.lambda_mu = ctx.lambda * ctx.product.mean;
  ctx.need_denoms = need_denoms;
  if (need_denoms) {
    ctx.log_denom.resize(sets.size());
    for (std::size_t m = 0; m < sets.size(); ++m) {
      MvnDensity density(ctx.fits[m].mean, ctx.fits[m].cov);
      Vector col(sets[m].rows());
      for (std::int64_t t = 0; t < sets[m].rows(); ++t)
        col[t] = density.log_pdf(sets[m].row(t).transpose());
      ctx.log_denom[m] = std::move(col);
    }
  }
  return ctx;
}

enum class ImgMode { nonparametric, semi_W, semi_w };

// IMG chain over index tuples. Holds the systematic-scan state: current
// indices, their selected rows, running mean and log weight. Set the
// bandwidth before scanning; it refreshes the cached state weight.
class ImgChain {
 public:
  ImgChain(const std::vector<Matrix>& sets, ImgMode mode, const SemiContext* semi, Rng& rng)
      : sets_(sets),
        mode_(mode),
        semi_(semi),
        machines_(static_cast<int>(sets.size())),
        dim_(static_cast<int>(sets.front().cols())),
        indices_(sets.size()),
        selected_(static_cast<Eigen::Index>(sets.size()), sets.front().cols()) {
    for (int m = 0; m < machines_; ++m) {
      std::uniform_int_distribution<std::int64_t> pick(0, sets_[m].rows() - 1);
      indices_[m] = pick(rng);
      selected_.row(m) = sets_[m].row(indices_[m]);
    }
  }

  void set_bandwidth(double h) {
    require(h > 0, "img: bandwidth must be positive");
    h_ = h;
    h2_ = h * h;
    if (mode_ != ImgMode::nonparametric) {
      Matrix prec = (static_cast<double>(machines_) / h2_) *
                        Matrix::Identity(dim_, dim_) + semi_->lambda;
      comp_cov_ = spd_inverse(prec, "semiparametric component");
      Eigen::LLT<Matrix> llt(comp_cov_);
      comp_chol_ = llt.matrixL();
      Matrix mean_cov = semi_->product.cov +
                        (h2_ / static_cast<double>(machines_)) * Matrix::Identity(dim_, dim_);
      mean_density_ = MvnDensity(semi_->product.mean, mean_cov);
    }
    refresh_state();
  }

  // Recomputes the cached state quantities from the current indices; needed
  // after a bandwidth change or after the underlying sets grow.
  void refresh_state() {
    theta_bar_ = selected_.colwise().mean().transpose();
    state_log_w_ = log_w_of(selected_, theta_bar_);
    if (mode_ != ImgMode::nonparametric && semi_->need_denoms) {
      state_denom_ = 0.0;
      for (int m = 0; m < machines_; ++m) state_denom_ += semi_->log_denom[m][indices_[m]];
    }
    state_score_ = score(state_log_w_, theta_bar_, state_denom_);
  }

  // One independence proposal on machine m: Algorithm line 5-10.
  bool step(int m, Rng& rng) {
    ++proposals_;
    ++weight_evals_;
    std::uniform_int_distribution<std::int64_t> pick(0, sets_[m].rows() - 1);
    const std::int64_t candidate = pick(rng);

    const Vector cand_row = sets_[m].row(candidate).transpose();
    Vector cand_mean =
        theta_bar_ + (cand_row - selected_.row(m).transpose()) / static_cast<double>(machines_);
    double sq = 0.0;
    for (int k = 0; k < machines_; ++k) {
      if (k == m)
        sq += (cand_row - cand_mean).squaredNorm();
      else
        sq += (selected_.row(k).transpose() - cand_mean).squaredNorm();
    }
    const double cand_log_w = -0.5 * machines_ * dim_ * (kLog2Pi + std::log(h2_)) - sq / (2.0 * h2_);
    double cand_denom = state_denom_;
    if (mode_ != ImgMode::nonparametric && semi_->need_denoms)
      cand_denom += semi_->log_denom[m][candidate] - semi_->log_denom[m][indices_[m]];
    const double cand_score = score(cand_log_w, cand_mean, cand_denom);

    const double u = unif_(rng);
    // a state with weight zero is always abandoned
    const bool accept = state_score_ == kNegInf || std::log(u) < cand_score - state_score_;
    if (accept) {
      indices_[m] = candidate;
      selected_.row(m) = cand_row.transpose();
      theta_bar_ = std::move(cand_mean);
      state_log_w_ = cand_log_w;
      state_denom_ = cand_denom;
      state_score_ = cand_score;
      ++accepts_;
    }
    return accept;
  }

  void scan(Rng& rng) {
    for (int m = 0; m < machines_; ++m) step(m, rng);
  }

  Vector emit(Rng& rng) {
    Vector z(dim_);
    for (int j = 0; j < dim_; ++j) z[j] = normal_(rng);
    if (mode_ == ImgMode::nonparametric)
      return theta_bar_ + (h_ / std::sqrt(static_cast<double>(machines_))) * z;
    Vector mu = comp_cov_ * ((static_cast<double>(machines_) / h2_) * theta_bar_ +
                             semi_->lambda_mu);
    return mu + comp_chol_ * z;
  }

  const std::vector<std::int64_t>& indices() const { return indices_; }
  std::int64_t weight_evals() const { return weight_evals_; }
  std::int64_t accepts() const { return accepts_; }
  std::int64_t proposals() const { return proposals_; }

 private:
  double log_w_of(const Matrix& selected, const Vector& mean) const {
    const double sq = (selected.rowwise() - mean.transpose()).squaredNorm();
    return -0.5 * machines_ * dim_ * (kLog2Pi + std::log(h2_)) - sq / (2.0 * h2_);
  }

  double score(double log_w, const Vector& mean, double denom) const {
    switch (mode_) {
      case ImgMode::nonparametric:
      case ImgMode::semi_w:
        return log_w;
      case ImgMode::semi_W:
        return log_w + mean_density_.log_pdf(mean) - denom;
    }
    return log_w;
  }

  const std::vector<Matrix>& sets_;
  ImgMode mode_;
  const SemiContext* semi_;
  int machines_;
  int dim_;
  std::vector<std::int64_t> indices_;
  Matrix selected_;  // M x d rows of the current component
  Vector theta_bar_;
  double h_ = 1.0, h2_ = 1.0;
  double state_log_w_ = 0.0;
  double state_denom_ = 0.0;
  double state_score_ = 0.0;
  Matrix comp_cov_, comp_chol_;
  MvnDensity mean_density_;
  std::int64_t weight_evals_ = 0, accepts_ = 0, proposals_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

CombineResult run_img(const std::vector<Matrix>& sets, std::int64_t t_out,
                      const BandwidthSchedule& schedule, std::uint64_t seed, ImgMode mode,
                      const SemiContext* semi, const std::string& method) {
  validate_sets(sets);
  t_out = default_t_out(sets, t_out);
  const int d = static_cast<int>(sets.front().cols());

  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  ImgChain chain(sets, mode, semi, rng);

  CombineResult result;
  result.method = method;
  result.samples.resize(t_out, d);
  for (std::int64_t i = 1; i <= t_out; ++i) {
    chain.set_bandwidth(schedule.bandwidth(i, d));
    chain.scan(rng);
    result.samples.row(i - 1) = chain.emit(rng).transpose();
  }
  result.weight_evals = chain.weight_evals();
  result.accept_rate =
      static_cast<double>(chain.accepts()) / static_cast<double>(chain.proposals());
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

double BandwidthSchedule::bandwidth(std::int64_t i, int d) const {
  require(i >= 1, "bandwidth schedule: output index must be >= 1");
  require(d >= 1, "bandwidth schedule: dimension must be >= 1");
  const double exponent = -1.0 / (2.0 * beta + static_cast<double>(d));
  if (kind == Kind::annealed) return std::pow(static_cast<double>(i), exponent);
  require(fixed_t >= 1, "bandwidth schedule: fixed rule needs a sample count");
  return std::pow(static_cast<double>(fixed_t), exponent);
}

BandwidthSchedule BandwidthSchedule::annealed(double beta) {
  require(beta > 0, "bandwidth schedule: beta must be positive");
  return BandwidthSchedule{Kind::annealed, beta, 0};
}

BandwidthSchedule BandwidthSchedule::fixed_for(std::int64_t t, double beta) {
  require(beta > 0, "bandwidth schedule: beta must be positive");
  require(t >= 1, "bandwidth schedule: fixed rule needs a sample count");
  return BandwidthSchedule{Kind::fixed, beta, t};
}

GaussianProduct gaussian_product(const std::vector<GaussianFit>& fits) {
  require(!fits.empty(), "gaussian_product: no fits");
  const int d = fits.front().dim();
  for (const auto& fit : fits)
    require(fit.dim() == d, "gaussian_product: fits disagree on dimension");

  Matrix precision_sum = Matrix::Zero(d, d);
  Vector weighted_mean = Vector::Zero(d);
  for (std::size_t m = 0; m < fits.size(); ++m) {
    Eigen::LLT<Matrix> llt(fits[m].cov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("gaussian_product: machine " + std::to_string(m + 1) +
                               ": singular covariance after regularization");
    precision_sum += llt.solve(Matrix::Identity(d, d));
    weighted_mean += llt.solve(fits[m].mean);
  }
  GaussianProduct product;
  product.cov = spd_inverse(precision_sum, "gaussian_product");
  product.mean = product.cov * weighted_mean;
  return product;
}

CombineResult parametric_combine(const std::vector<GaussianFit>& fits, std::int64_t t_out,
                                 std::uint64_t seed) {
  require(t_out >= 1, "parametric_combine: output count must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const GaussianProduct product = gaussian_product(fits);
  MvnDensity density(product.mean, product.cov);
  Rng rng(seed);
  CombineResult result;
  result.method = "parametric";
  result.samples = sample_mvn(density, t_out, rng);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::pair<Vector, double> component_log_weight(const std::vector<Matrix>& sets,
                                               const std::vector<std::int64_t>& index, double h) {
  validate_sets(sets);
  require(h > 0, "component_log_weight: bandwidth must be positive");
  require(index.size() == sets.size(), "component_log_weight: index tuple size mismatch");
  const int machines = static_cast<int>(sets.size());
  const int d = static_cast<int>(sets.front().cols());

  Matrix selected(machines, d);
  for (int m = 0; m < machines; ++m) {
    require(index[m] >= 0 && index[m] < sets[m].rows(),
            "component_log_weight: index out of range for machine " + std::to_string(m + 1));
    selected.row(m) = sets[m].row(index[m]);
  }
  Vector mean = selected.colwise().mean().transpose();
  const double sq = (selected.rowwise() - mean.transpose()).squaredNorm();
  const double log_w =
      -0.5 * machines * d * (kLog2Pi + std::log(h * h)) - sq / (2.0 * h * h);
  return {std::move(mean), log_w};
}

SemiComponent semiparametric_params(const std::vector<Matrix>& sets,
                                    const std::vector<std::int64_t>& index, double h,
                                    const std::vector<GaussianFit>& fits) {
  require(fits.size() == sets.size(), "semiparametric_params: one fit per machine required");
  auto [theta_bar, log_w] = component_log_weight(sets, index, h);
  const int machines = static_cast<int>(sets.size());
  const int d = static_cast<int>(sets.front().cols());
  const double h2 = h * h;

  const GaussianProduct product = gaussian_product(fits);
  const Matrix lambda = spd_inverse(product.cov, "semiparametric_params");

  SemiComponent comp;
  comp.cov = spd_inverse(
      (machines / h2) * Matrix::Identity(d, d) + lambda, "semiparametric_params component");
  comp.mean = comp.cov * ((machines / h2) * theta_bar + lambda * product.mean);
  comp.log_weight_w = log_w;

  Matrix mean_cov = product.cov + (h2 / machines) * Matrix::Identity(d, d);
  MvnDensity mean_density(product.mean, mean_cov);
  double denom = 0.0;
  for (int m = 0; m < machines; ++m) {
    MvnDensity fit_density(fits[m].mean, fits[m].cov);
    denom += fit_density.log_pdf(sets[m].row(index[m]).transpose());
  }
  comp.log_weight_W = log_w + mean_density.log_pdf(theta_bar) - denom;
  return comp;
}

CombineResult img_combine_nonparametric(const std::vector<Matrix>& sets, std::int64_t t_out,
                                        const BandwidthSchedule& schedule, std::uint64_t seed) {
  return run_img(sets, t_out, schedule, seed, ImgMode::nonparametric, nullptr, "nonparametric");
}

CombineResult img_combine_semiparametric(const std::vector<Matrix>& sets, std::int64_t t_out,
                                         const BandwidthSchedule& schedule, std::uint64_t seed,
                                         SemiWeight weight_mode) {
  validate_sets(sets);
  std::vector<GaussianFit> fits;
  fits.reserve(sets.size());
  for (const auto& set : sets) fits.push_back(fit_gaussian(set));
  const bool use_W = weight_mode == SemiWeight::W;
  SemiContext ctx = make_semi_context(sets, std::move(fits), use_W);
  return run_img(sets, t_out, schedule, seed, use_W ? ImgMode::semi_W : ImgMode::semi_w, &ctx,
                 use_W ? "semiparametric" : "semiparametric_w");
}

CombineResult pairwise_combine(const std::vector<Matrix>& sets, std::int64_t t_out,
                               const BandwidthSchedule& schedule, std::uint64_t seed,
                               PairMethod method) {
  validate_sets(sets);
  const auto start = std::chrono::steady_clock::now();

  std::string tag = "pairwise_";
  switch (method) {
    case PairMethod::nonparametric: tag += "nonparametric"; break;
    case PairMethod::semiparametric: tag += "semiparametric"; break;
    case PairMethod::semiparametric_w: tag += "semiparametric_w"; break;
  }

  CombineResult result;
  result.method = tag;
  if (sets.size() == 1) {
    // recursion base: nothing to pair
    result.samples = sets.front();
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
  }

  t_out = default_t_out(sets, t_out);
  std::vector<Matrix> current = sets;
  std::int64_t accepts = 0, proposals = 0;
  int round = 0;
  while (current.size() > 1) {
    std::vector<Matrix> next;
    next.reserve((current.size() + 1) / 2);
    for (std::size_t pair = 0; 2 * pair + 1 < current.size(); ++pair) {
      const std::vector<Matrix> two{current[2 * pair], current[2 * pair + 1]};
      const std::uint64_t pair_seed = mix_seed(seed, static_cast<std::uint64_t>(round), pair);
      CombineResult sub;
      switch (method) {
        case PairMethod::nonparametric:
          sub = img_combine_nonparametric(two, t_out, schedule, pair_seed);
          break;
        case PairMethod::semiparametric:
          sub = img_combine_semiparametric(two, t_out, schedule, pair_seed, SemiWeight::W);
          break;
        case PairMethod::semiparametric_w:
          sub = img_combine_semiparametric(two, t_out, schedule, pair_seed, SemiWeight::w);
          break;
      }
      result.weight_evals += sub.weight_evals;
      accepts += static_cast<std::int64_t>(
          std::llround(sub.accept_rate * static_cast<double>(sub.weight_evals)));
      proposals += sub.weight_evals;
      next.push_back(std::move(sub.samples));
    }
    if (current.size() % 2 == 1) next.push_back(std::move(current.back()));
    current = std::move(next);
    ++round;
  }
  result.samples = std::move(current.front());
  result.accept_rate =
      proposals > 0 ? static_cast<double>(accepts) / static_cast<double>(proposals) : 1.0;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

CombineResult subpost_avg(const std::vector<Matrix>& sets, std::uint64_t seed) {
  validate_sets(sets);
  const auto start = std::chrono::steady_clock::now();
  const int machines = static_cast<int>(sets.size());
  const std::int64_t t_out = default_t_out(sets, 0);
  const auto d = sets.front().cols();

  CombineResult result;
  result.method = "subpost_avg";
  result.samples = Matrix::Zero(t_out, d);
  for (int m = 0; m < machines; ++m) {
    std::vector<std::int64_t> perm(sets[m].rows());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(m)));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::int64_t i = 0; i < t_out; ++i) result.samples.row(i) += sets[m].row(perm[i]);
  }
  result.samples /= static_cast<double>(machines);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

CombineResult subpost_pool(const std::vector<Matrix>& sets) {
  validate_sets(sets);
  std::int64_t total = 0;
  for (const auto& set : sets) total += set.rows();
  CombineResult result;
  result.method = "subpost_pool";
  result.samples.resize(total, sets.front().cols());
  std::int64_t offset = 0;
  for (const auto& set : sets) {
    result.samples.middleRows(offset, set.rows()) = set;
    offset += set.rows();
  }
  return result;
}

std::vector<std::int64_t> img_index_occupancy(const std::vector<Matrix>& sets, double h,
                                              std::int64_t steps, std::uint64_t seed) {
  validate_sets(sets);
  require(h > 0, "img_index_occupancy: bandwidth must be positive");
  const int machines = static_cast<int>(sets.size());
  std::int64_t cells = 1;
  for (const auto& set : sets) {
    cells *= set.rows();
    require(cells <= (1 << 22), "img_index_occupancy: component space too large to enumerate");
  }

  Rng rng(seed);
  ImgChain chain(sets, ImgMode::nonparametric, nullptr, rng);
  chain.set_bandwidth(h);

  std::vector<std::int64_t> counts(static_cast<std::size_t>(cells), 0);
  auto flatten = [&](const std::vector<std::int64_t>& idx) {
    std::int64_t flat = 0;
    for (int m = 0; m < machines; ++m) flat = flat * sets[m].rows() + idx[m];
    return flat;
  };
  for (std::int64_t s = 0; s < steps; ++s) {
    chain.step(static_cast<int>(s % machines), rng);
    ++counts[static_cast<std::size_t>(flatten(chain.indices()))];
  }
  return counts;
}

// --- online combiner ---------------------------------------------------------

struct OnlineCombiner::Impl {
  int machines;
  BandwidthSchedule schedule;
  OnlineMethod method;
  Rng rng;
  int dim = -1;

  std::vector<Matrix> reservoirs;          // logical row counts in `sizes`
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> counts;        // running-moment state per machine
  std::vector<Vector> means;
  std::vector<Matrix> m2s;

  bool warm = false;
  std::int64_t pushes_since_emit = 0;
  std::vector<std::int64_t> indices;
  Matrix selected;
  std::int64_t emitted = 0;
  std::int64_t weight_evals = 0;
  std::vector<Vector> ready;

  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> unif{0.0, 1.0};

  std::int64_t warm_threshold() const {
    // semiparametric fits need two samples per machine
    return method == OnlineMethod::nonparametric ? 1 : 2;
  }

  GaussianFit fit_of(int m) const {
    require(counts[m] >= 2, "online combiner: machine " + std::to_string(m + 1) +
                                " needs >= 2 samples for a Gaussian fit");
    GaussianFit fit;
    fit.count = counts[m];
    fit.mean = means[m];
    fit.cov = m2s[m] / static_cast<double>(counts[m] - 1);
    fit.cov = ((fit.cov + fit.cov.transpose()) / 2.0).eval();
    const double jitter =
        std::max(1e-8 * fit.cov.trace() / static_cast<double>(dim), 1e-12);
    fit.cov.diagonal().array() += jitter;
    return fit;
  }

  void append(int m, const Vector& theta) {
    if (reservoirs[m].rows() == sizes[m]) {
      const std::int64_t capacity = std::max<std::int64_t>(16, 2 * reservoirs[m].rows());
      reservoirs[m].conservativeResize(capacity, dim);
    }
    reservoirs[m].row(sizes[m]) = theta.transpose();
    ++sizes[m];

    // Welford update of mean and scatter
    ++counts[m];
    const Vector delta = theta - means[m];
    means[m] += delta / static_cast<double>(counts[m]);
    m2s[m] += delta * (theta - means[m]).transpose();
  }

  double log_w_at(const Matrix& sel, const Vector& mean, double h2) const {
    const double sq = (sel.rowwise() - mean.transpose()).squaredNorm();
    return -0.5 * machines * dim * (kLog2Pi + std::log(h2)) - sq / (2.0 * h2);
  }

  void emit_one() {
    const std::int64_t i = emitted + 1;
    const double h = schedule.bandwidth(i, dim);
    const double h2 = h * h;

    // rebuilt every emission: the running fits move with each push
    std::optional<SemiContext> ctx;
    Matrix comp_cov, comp_chol;
    std::optional<MvnDensity> mean_density;
    std::vector<MvnDensity> fit_densities;
    if (method != OnlineMethod::nonparametric) {
      std::vector<GaussianFit> fits;
      fits.reserve(machines);
      for (int m = 0; m < machines; ++m) fits.push_back(fit_of(m));
      ctx = SemiContext{};
      ctx->fits = std::move(fits);
      ctx->product = gaussian_product(ctx->fits);
      ctx->lambda = spd_inverse(ctx->product.cov, "online combiner");
      ctx->lambda_mu = ctx->lambda * ctx->product.mean;
      Matrix prec =
          (machines / h2) * Matrix::Identity(dim, dim) + ctx->lambda;
      comp_cov = spd_inverse(prec, "online combiner component");
      comp_chol = Eigen::LLT<Matrix>(comp_cov).matrixL();
      mean_density = MvnDensity(ctx->product.mean,
                                ctx->product.cov + (h2 / machines) * Matrix::Identity(dim, dim));
      for (int m = 0; m < machines; ++m)
        fit_densities.emplace_back(ctx->fits[m].mean, ctx->fits[m].cov);
    }

    const bool use_W = method == OnlineMethod::semiparametric;
    auto denom_of = [&](int m, std::int64_t t) {
      return fit_densities[m].log_pdf(reservoirs[m].row(t).transpose());
    };

    Vector theta_bar = selected.colwise().mean().transpose();
    double state_log_w = log_w_at(selected, theta_bar, h2);
    double state_denom = 0.0;
    if (use_W)
      for (int m = 0; m < machines; ++m) state_denom += denom_of(m, indices[m]);
    double state_score =
        use_W ? state_log_w + mean_density->log_pdf(theta_bar) - state_denom : state_log_w;

    for (int m = 0; m < machines; ++m) {
      ++weight_evals;
      std::uniform_int_distribution<std::int64_t> pick(0, sizes[m] - 1);
      const std::int64_t candidate = pick(rng);
      const Vector cand_row = reservoirs[m].row(candidate).transpose();
      Vector cand_mean =
          theta_bar + (cand_row - selected.row(m).transpose()) / static_cast<double>(machines);
      double sq = 0.0;
      for (int k = 0; k < machines; ++k) {
        if (k == m)
          sq += (cand_row - cand_mean).squaredNorm();
        else
          sq += (selected.row(k).transpose() - cand_mean).squaredNorm();
      }
      const double cand_log_w =
          -0.5 * machines * dim * (kLog2Pi + std::log(h2)) - sq / (2.0 * h2);
      double cand_denom = state_denom;
      if (use_W) cand_denom += denom_of(m, candidate) - denom_of(m, indices[m]);
      const double cand_score =
          use_W ? cand_log_w + mean_density->log_pdf(cand_mean) - cand_denom : cand_log_w;

      const double u = unif(rng);
      if (state_score == kNegInf || std::log(u) < cand_score - state_score) {
        indices[m] = candidate;
        selected.row(m) = cand_row.transpose();
        theta_bar = std::move(cand_mean);
        state_log_w = cand_log_w;
        state_denom = cand_denom;
        state_score = cand_score;
      }
    }

    Vector z(dim);
    for (int j = 0; j < dim; ++j) z[j] = normal(rng);
    if (method == OnlineMethod::nonparametric) {
      ready.push_back(theta_bar + (h / std::sqrt(static_cast<double>(machines))) * z);
    } else {
      Vector mu = comp_cov * ((machines / h2) * theta_bar + ctx->lambda_mu);
      ready.push_back(mu + comp_chol * z);
    }
    ++emitted;
  }
};

OnlineCombiner::OnlineCombiner(int machines, BandwidthSchedule schedule, OnlineMethod method,
                               std::uint64_t seed)
    : impl_(std::make_unique<Impl>()) {
  require(machines >= 1, "online combiner: machine count must be >= 1");
  impl_->machines = machines;
  impl_->schedule = schedule;
  impl_->method = method;
  impl_->rng.seed(seed);
  impl_->reservoirs.resize(machines);
  impl_->sizes.assign(machines, 0);
  impl_->counts.assign(machines, 0);
  impl_->means.resize(machines);
  impl_->m2s.resize(machines);
  impl_->indices.assign(machines, 0);
}

OnlineCombiner::~OnlineCombiner() = default;
OnlineCombiner::OnlineCombiner(OnlineCombiner&&) noexcept = default;
OnlineCombiner& OnlineCombiner::operator=(OnlineCombiner&&) noexcept = default;

void OnlineCombiner::push(int machine, const Vector& theta) {
  auto& s = *impl_;
  require(machine >= 1 && machine <= s.machines,
          "online combiner: machine index " + std::to_string(machine) + " outside [1, " +
              std::to_string(s.machines) + "]");
  require(theta.allFinite(), "online combiner: non-finite sample");
  if (s.dim < 0) {
    s.dim = static_cast<int>(theta.size());
    for (int m = 0; m < s.machines; ++m) {
      s.means[m] = Vector::Zero(s.dim);
      s.m2s[m] = Matrix::Zero(s.dim, s.dim);
      s.reservoirs[m].resize(0, s.dim);
    }
    s.selected.resize(s.machines, s.dim);
  }
  require(static_cast<int>(theta.size()) == s.dim, "online combiner: sample dimension mismatch");

  s.append(machine - 1, theta);

  if (!s.warm) {
    const bool all_ready = std::all_of(s.sizes.begin(), s.sizes.end(), [&](std::int64_t n) {
      return n >= s.warm_threshold();
    });
    if (all_ready) {
      s.warm = true;
      for (int m = 0; m < s.machines; ++m) {
        std::uniform_int_distribution<std::int64_t> pick(0, s.sizes[m] - 1);
        s.indices[m] = pick(s.rng);
        s.selected.row(m) = s.reservoirs[m].row(s.indices[m]);
      }
      s.emit_one();
      s.pushes_since_emit = 0;
    }
    return;
  }
  if (++s.pushes_since_emit >= s.machines) {
    s.emit_one();
    s.pushes_since_emit = 0;
  }
}

Matrix OnlineCombiner::pop_ready() {
  auto& s = *impl_;
  Matrix out(static_cast<std::int64_t>(s.ready.size()), std::max(s.dim, 0));
  for (std::size_t i = 0; i < s.ready.size(); ++i) out.row(static_cast<std::int64_t>(i)) =
      s.ready[i].transpose();
  s.ready.clear();
  return out;
}

void OnlineCombiner::drain() {
  auto& s = *impl_;
  if (!s.warm) return;
  const std::int64_t target = *std::min_element(s.sizes.begin(), s.sizes.end());
  while (s.emitted < target) s.emit_one();
}

GaussianFit OnlineCombiner::running_fit(int machine) const {
  require(machine >= 1 && machine <= impl_->machines, "online combiner: machine index out of range");
  return impl_->fit_of(machine - 1);
}

std::int64_t OnlineCombiner::emitted() const { return impl_->emitted; }
std::int64_t OnlineCombiner::weight_evals() const { return impl_->weight_evals; }

}  // namespace epmc
