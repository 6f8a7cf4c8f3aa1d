#include "pwps/sampling.hpp"

#include <cmath>

namespace pwps {

double PhaseSpaceGaussian::density(const std::array<double, 3>& x,
                                   const std::array<double, 3>& p) const {
  double v = 1.0;
  for (int a = 0; a < d; ++a) {
    const double zx = (x[a] - x0[a]) / sx[a];
    const double zp = (p[a] - p0[a]) / sp[a];
    v *= std::exp(-0.5 * (zx * zx + zp * zp)) / (kTwoPi * sx[a] * sp[a]);
  }
  return v;
}

double halton(std::uint64_t index, std::uint32_t base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

double inverse_normal_cdf(double u) {
  // Acklam's algorithm with one Halley refinement step.
  if (!(u > 0.0 && u < 1.0)) fail(Stage::limitlab, "inverse cdf argument outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (u < plow) {
    const double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (u <= phigh) {
    const double q = u - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  // Halley refinement against erfc
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - u;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(kTwoPi);
  const double un = e * std::sqrt(kTwoPi) * std::exp(0.5 * x * x);
  x = x - un / (1.0 + 0.5 * x * un);
  (void)pdf;
  return x;
}

double uniform_from_bits(std::mt19937_64& rng) {
  // 53 uniform bits in (0,1); identical on every platform
  return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

PhaseSampler::PhaseSampler(const PhaseSpaceGaussian& density, const std::string& mode,
                           std::uint64_t seed)
    : f_(density), mode_(mode), rng_(seed) {
  if (mode_ != "halton" && mode_ != "pseudo")
    fail(Stage::limitlab, "sampler mode must be 'halton' or 'pseudo'");
  index_ = 1 + seed * 101;  // distinct deterministic Halton offsets per seed
}

PhasePoint PhaseSampler::next() {
  static const std::uint32_t bases[6] = {2, 3, 5, 7, 11, 13};
  PhasePoint pt;
  if (mode_ == "halton") {
    for (int a = 0; a < f_.d; ++a) {
      const double ux = halton(index_, bases[a]);
      const double up = halton(index_, bases[f_.d + a]);
      pt.x[a] = f_.x0[a] + f_.sx[a] * inverse_normal_cdf(ux);
      pt.p[a] = f_.p0[a] + f_.sp[a] * inverse_normal_cdf(up);
    }
    ++index_;
  } else {
    for (int a = 0; a < f_.d; ++a) {
      // Box-Muller, one pair per axis
      const double u1 = uniform_from_bits(rng_);
      const double u2 = uniform_from_bits(rng_);
      const double r = std::sqrt(-2.0 * std::log(u1));
      pt.x[a] = f_.x0[a] + f_.sx[a] * r * std::cos(kTwoPi * u2);
      pt.p[a] = f_.p0[a] + f_.sp[a] * r * std::sin(kTwoPi * u2);
    }
  }
  return pt;
}

}  // namespace pwps
