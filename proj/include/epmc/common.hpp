#ifndef EPMC_COMMON_HPP
#define EPMC_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace epmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowRef = Eigen::MatrixXd::ConstRowXpr;
using Rng = std::mt19937_64;

/// Fraction of samples dropped from the front of every chain.
inline constexpr double kBurnInFraction = 1.0 / 6.0;

/// Mixes words into a fresh 64-bit seed; used to derive independent
/// per-shard / per-pair RNG streams from one user seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ (0xd1b54a32d192ed03ULL * (a + 1))) ^
                    (0x8cb92ba72f3d8dd7ULL * (b + 1)));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace epmc

#endif
