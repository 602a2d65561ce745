#ifndef ALIGNFLOW_RANDOM_HPP
#define ALIGNFLOW_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>

namespace alignflow {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Maps a 64-bit word to a double in the open interval (0, 1). Only 52 bits
/// are used so the largest value, 1 - 2^-53, is still below one.
constexpr double uniform_open(std::uint64_t word) noexcept {
  return (static_cast<double>(word >> 12) + 0.5) * 0x1.0p-52;
}

/// Counter-based seed for record j of a stream rooted at `master`:
/// one SplitMix64 step from state master ^ (j * golden gamma).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t j) noexcept {
  return splitmix64_mix((master ^ (j * kGoldenGamma)) + kGoldenGamma);
}

/// Sequential SplitMix64 stream. Normal variates come from Box-Muller on
/// consecutive word pairs; the sine half of each pair is cached.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += kGoldenGamma;
    return splitmix64_mix(state_);
  }

  double uniform() noexcept { return uniform_open(next()); }

  /// Uniform integer in [0, n) by multiply-shift; n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Standard-normal vector regenerated from a stored seed. The algorithm is
/// part of the pair-file contract: word pairs (u1, u2) from a SplitMix64
/// stream seeded with `seed`, coordinate 2k = r cos(2 pi u2) and 2k+1 =
/// r sin(2 pi u2) with r = sqrt(-2 ln u1). Odd dimensions drop the last sine.
inline Eigen::VectorXd noise_from_seed(std::uint64_t seed, Eigen::Index dim) {
  Eigen::VectorXd out(dim);
  SplitMix64 stream(seed);
  for (Eigen::Index k = 0; k < dim; k += 2) {
    const double u1 = stream.uniform();
    const double u2 = stream.uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[k] = radius * std::cos(angle);
    if (k + 1 < dim) out[k + 1] = radius * std::sin(angle);
  }
  return out;
}

}  // namespace alignflow

#endif  // ALIGNFLOW_RANDOM_HPP
