#pragma once

// Deterministic samplers for phase-space initial data. Two modes:
//  - "halton": scrambling-free low-discrepancy points through the inverse CDF,
//  - "pseudo": mt19937_64 with an explicit Box-Muller, so streams are
//    bit-identical across platforms.
// Both draw from a product-Gaussian density f_I on (x, p).

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pwps/spectral.hpp"

namespace pwps {

// Product Gaussian in phase space: independent per-axis means and sigmas.
struct PhaseSpaceGaussian {
  int d = 2;
  std::array<double, 3> x0{0.0, 0.0, 0.0};
  std::array<double, 3> p0{0.0, 0.0, 0.0};
  std::array<double, 3> sx{0.3, 0.3, 0.3};
  std::array<double, 3> sp{0.3, 0.3, 0.3};

  double density(const std::array<double, 3>& x, const std::array<double, 3>& p) const;
  // closed-form first/second moments used by test oracles
  double var_x(int axis) const { return sx[axis] * sx[axis]; }
  double var_p(int axis) const { return sp[axis] * sp[axis]; }
};

struct PhasePoint {
  std::array<double, 3> x{0.0, 0.0, 0.0};
  std::array<double, 3> p{0.0, 0.0, 0.0};
};

class PhaseSampler {
public:
  // mode: "halton" or "pseudo"
  PhaseSampler(const PhaseSpaceGaussian& density, const std::string& mode, std::uint64_t seed);

  PhasePoint next();
  const PhaseSpaceGaussian& density() const { return f_; }
  const std::string& mode() const { return mode_; }

private:
  PhaseSpaceGaussian f_;
  std::string mode_;
  std::uint64_t index_ = 0;
  std::mt19937_64 rng_;
};

double halton(std::uint64_t index, std::uint32_t base);
double inverse_normal_cdf(double u);  // Acklam's rational approximation, refined
double uniform_from_bits(std::mt19937_64& rng);

}  // namespace pwps
