#pragma once
// Marchenko-Pastur samples at gamma = 1 by inverting the closed-form CDF.
// With x = 4 sin^2(phi) the density becomes (4 / pi) cos^2(phi) d phi, so
// F(phi) = (2 phi + sin 2 phi) / pi on [0, pi / 2].
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline double mp_quantile_gamma1(double u) {
  double lo = 0.0, hi = std::numbers::pi / 2;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((2 * mid + std::sin(2 * mid)) / std::numbers::pi < u) lo = mid;
    else hi = mid;
  }
  const double s = std::sin(0.5 * (lo + hi));
  return 4 * s * s;
}

inline std::vector<double> mp_samples_gamma1(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(count);
  for (double& x : out) x = mp_quantile_gamma1(unit(rng));
  return out;
}

}  // namespace oracle
