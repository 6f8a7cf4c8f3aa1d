#pragma once

// Orchestration of the semiclassical experiments: hbar ladders, weak-star
// error measurement between the smoothed quantum phase-space density and the
// transported particle measure, spin-coupling ablation, current convergence,
// and the uniform-bound diagnostics recorded alongside.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pwps/kinetic.hpp"
#include "pwps/quantum.hpp"
#include "pwps/sampling.hpp"
#include "pwps/wigner.hpp"

namespace pwps {

struct SweepConfig {
  int d = 2;
  std::array<int, 3> n{64, 64, 1};
  std::array<double, 3> L{kTwoPi, kTwoPi, kTwoPi};
  std::vector<double> hbars{0.5, 0.25, 0.125, 0.0625};  // strictly decreasing
  double C = 4.0;
  double sigma_factor = 1.25;  // coherent width sigma = sigma_factor sqrt(hbar)
  std::array<cplx, 2> chi{cplx(1.0, 0.0), cplx(0.0, 0.0)};
  PhaseSpaceGaussian f_I;
  std::string field_preset = "sinusoidal_B_cosine_V";
  std::map<std::string, double> field_params;
  double T = 0.8;
  double dt0 = 0.32;
  bool dt_scale_hbar = true;  // dt = dt0 * min(1, hbar/4)
  int n_particles = 100000;
  double dt_kinetic = 0.004;
  std::uint64_t seed = 1;
  std::string sampler_mode = "halton";
  int battery_size = 10;
  std::vector<double> battery_width_x{0.5, 1.0};
  std::vector<double> battery_width_xi{0.3, 0.5};
  double xi_halfwidth = 0.0;       // 0: derived from the battery
  double y_halfwidth_factor = 12.0;  // y range = factor / sqrt(hbar)
  std::vector<double> tail_radii{1.0, 2.0, 4.0, 8.0};

  double dt_for(double hbar) const {
    return dt_scale_hbar ? dt0 * std::min(1.0, hbar / 4.0) : dt0;
  }
};

void validate(const SweepConfig& cfg);

std::vector<TestFunction> make_battery(const SweepConfig& cfg);

// Classical Hamiltonian of the symbol: (1/2)|xi - A(x)|^2 + V(x).
double symbol_eigenvalue(const std::array<double, 3>& x, const std::array<double, 3>& xi,
                         const FieldSet& fields);

// Per-test-function gaps |<f_q, phi>_(x,p) - sum_i w_i phi(x_i, p_i)|; f_q is
// paired in (x, p = xi - A(x)) variables.
std::vector<double> weak_error(const WignerFunction& f_q, const ParticleEnsemble& particles,
                               const std::vector<TestFunction>& battery,
                               const VectorField* shift_A);

struct HbarRow {
  double hbar = 0.0;
  int n_members = 0;
  int quantum_steps = 0;
  std::vector<double> weak_errors;
  double aggregate = 0.0;
  double q_drift = 0.0;
  double e_drift = 0.0;
  double l75_max = 0.0;
  double gram_dev = 0.0;
  double husimi_min = 0.0;
  double husimi_mass_err = 0.0;
  double marginal_err = 0.0;
  std::vector<double> tails;       // one per tail radius
  double tail_companion = 0.0;
};

struct ConvergenceReport {
  std::string mode;  // linear | self_consistent
  std::vector<HbarRow> rows;
  bool order_valid = false;
  double empirical_order = 0.0;
  std::uint64_t seed = 0;
  std::string sampler_mode;
  int admissibility_exponent = 0;  // the dimension d used in hbar^{-d}
  std::string config_hash;
};

ConvergenceReport run_hbar_sweep(const SweepConfig& cfg, const std::string& mode);

// Weak distance between runs with the spin-magnetic coupling on and off.
struct AblationReport {
  std::vector<double> hbars;
  std::vector<double> distances;
  std::string config_hash;
};
AblationReport sg_ablation(const SweepConfig& cfg);

struct CurrentReport {
  std::vector<double> hbars;
  std::vector<double> paired_errors;    // quantum vs kinetic current pairing
  std::vector<double> spin_curl_mags;   // paired magnitude of the spin-curl part
  double spin_slope = 0.0;              // log-log slope of spin_curl vs hbar
  std::string config_hash;
};
CurrentReport current_convergence(const SweepConfig& cfg, const std::string& mode);

// least-squares slope of log(err) against log(hbar)
double fit_loglog_slope(const std::vector<double>& hbars, const std::vector<double>& errs);

void write_report_json(const ConvergenceReport& rep, const std::string& path);
void write_report_csv(const ConvergenceReport& rep, const std::string& path);

}  // namespace pwps
