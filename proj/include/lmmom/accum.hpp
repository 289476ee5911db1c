#pragma once

#include <cmath>

namespace lmmom::detail {

/// Compensated accumulator (Kahan-Babuska in Neumaier's variant).
///
/// Keeps a running correction alongside the main sum so that cancellation
/// between large intermediate terms does not silently discard low-order
/// bits. The higher-moment power sums feed fourth powers of residuals into
/// alternating-sign polynomials, which is exactly the situation where a
/// plain left-to-right sum loses accuracy. Unlike classic Kahan, this
/// variant also survives the case where an addend dominates the sum so far.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double value) noexcept {
    const double t = sum + value;
    if (std::abs(sum) >= std::abs(value)) {
      comp += (sum - t) + value;
    } else {
      comp += (value - t) + sum;
    }
    sum = t;
  }

  double value() const noexcept { return sum + comp; }
};

}  // namespace lmmom::detail
