#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace anchors {

// Two-sided Hoeffding confidence half-width for a mean of n samples in [0,1]:
// P(|empirical - true| >= halfwidth) <= delta.
inline double hoeffding_halfwidth(std::int64_t n, double delta) {
  if (n < 1) throw std::invalid_argument("hoeffding_halfwidth: n must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("hoeffding_halfwidth: delta must be in (0,1)");
  }
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

// Bernoulli sample statistics with a Hoeffding interval at confidence delta.
struct PrecisionEstimate {
  std::int64_t n_samples = 0;
  std::int64_t n_matches = 0;
  double delta = 0.5;

  double mean() const {
    return n_samples > 0
               ? static_cast<double>(n_matches) / static_cast<double>(n_samples)
               : 0.0;
  }
  double halfwidth() const { return hoeffding_halfwidth(n_samples, delta); }
  double lower() const { return std::max(0.0, mean() - halfwidth()); }
  double upper() const { return std::min(1.0, mean() + halfwidth()); }
};

}  // namespace anchors
