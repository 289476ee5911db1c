#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "lmmom/errors.hpp"

namespace lmmom::rng {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

/// splitmix64 finalizer: a bijective 64-bit mix whose outputs pass
/// statistical tests even on counter inputs.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

/// Counter-based deterministic random stream (splitmix64 core).
///
/// Every stream is a pure function of its 64-bit construction key, so code
/// that derives one stream per entity (group, row, role) can draw from them
/// in any order, on any number of threads, and still produce identical
/// values. That property is the basis of the byte-identical reproducibility
/// contract of the simulation and Monte Carlo layers.
///
/// Sampling routines are hand-rolled rather than taken from <random>
/// because the standard distributions do not promise identical output
/// across implementations, which would silently break golden outputs.
class Stream {
 public:
  explicit Stream(std::uint64_t state) noexcept : state_(state) {}

  std::uint64_t next_u64() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Uniform draw strictly inside (0,1): top 53 bits offset by half a step,
  /// so 0 and 1 are unreachable and logs of draws are always finite.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller. The second value of each pair is
  /// cached, so consecutive calls on one stream consume uniforms in a fixed
  /// pattern.
  double normal() noexcept {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Unit exponential by inversion.
  double exponential() noexcept { return -std::log(uniform()); }

  /// Chi-squared with 8 degrees of freedom: twice a Gamma(4,1) variable,
  /// where the Gamma is a sum of four unit exponentials folded into a
  /// single log of a product of uniforms.
  double chi_squared_8() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    const double u3 = uniform();
    const double u4 = uniform();
    return -2.0 * std::log(u1 * u2 * u3 * u4);
  }

  /// Student t with 8 degrees of freedom as normal / sqrt(chi2_8 / 8).
  double student_t8() noexcept {
    const double z = normal();
    const double v = chi_squared_8();
    return z / std::sqrt(v / 8.0);
  }

  /// Poisson by CDF inversion. Adequate for the small means used here; the
  /// guard keeps exp(-mean) away from underflow.
  long poisson(double mean) {
    if (!(mean > 0.0) || mean > 80.0) {
      throw UsageError("poisson mean must lie in (0, 80]");
    }
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    long k = 0;
    while (u > cdf && k < 4000) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Derive the stream owned by one keyed entity. Each component folds
/// through mix64, so distinct (seed, a, b, role) tuples give statistically
/// unrelated streams.
inline Stream substream(std::uint64_t seed, std::uint64_t a = 0,
                        std::uint64_t b = 0, std::uint64_t role = 0) noexcept {
  std::uint64_t h = mix64(seed + kGolden);
  h = mix64(h ^ (a + kGolden));
  h = mix64(h ^ (b + kGolden));
  h = mix64(h ^ (role + kGolden));
  return Stream(h);
}

}  // namespace lmmom::rng
