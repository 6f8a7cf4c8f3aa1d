#pragma once

// Mixed-state spinor dynamics: state construction under the occupation-weight
// admissibility bound, Hamiltonian application, norm-preserving propagation,
// the self-consistent Poisson loop, and the conserved observables.

#include <array>
#include <string>
#include <vector>

#include "pwps/fields.hpp"
#include "pwps/sampling.hpp"
#include "pwps/spectral.hpp"

namespace pwps {

struct MixedState {
  double hbar = 1.0;
  Grid grid;
  double C = 1.0;  // admissibility constant
  std::vector<double> lambda;
  std::vector<SpinorField> members;

  int n_members() const { return static_cast<int>(members.size()); }
};

// hbar^{-d} * sum lambda_j^2; must stay <= C.
double admissibility_value(const MixedState& s);

// Validates weights, norms and the admissibility bound; throws on violation.
MixedState make_mixed_state(const Grid& grid, double hbar, double C,
                            std::vector<double> lambda, std::vector<SpinorField> members);

// Gaussian wave packet, periodized over neighbour images, exactly normalized.
// The momentum is snapped to the hbar * (2 pi / L) lattice so the phase is
// periodic; the snap distance vanishes as hbar -> 0.
SpinorField coherent_state(const Grid& grid, double hbar, std::span<const double> x0,
                           std::span<const double> p0, double sigma,
                           const std::array<cplx, 2>& chi);

// N = ceil(hbar^{-d} / C) members with uniform weights at sampled centers.
MixedState build_mixed_state(const Grid& grid, double hbar, double C, PhaseSampler& sampler,
                             const std::array<cplx, 2>& chi, double sigma);

// max |<u_i, u_j> - delta_ij| over pairs; reported, never enforced.
double gram_deviation(const MixedState& s);

// ---------------------------------------------------------------------------
// Hamiltonian. apply() evaluates
//   H u = -(1/2)(hbar grad - i A)^2 u + V u - (hbar/2) (sigma . B) u
// with the magnetic Laplacian expanded and all derivatives spectral;
// apply_pauli_identity() evaluates (1/2)(sigma.(-i hbar grad - A))^2 u + V u,
// which matches apply() whenever B = curl A (no override).

struct HamiltonianOpts {
  bool include_sg = true;
};

class PauliOperator {
public:
  PauliOperator(const FieldSet& fields, const ScalarField& V, double hbar,
                HamiltonianOpts opts = {});

  SpinorField apply(const SpinorField& u) const;
  SpinorField apply_pauli_identity(const SpinorField& u) const;

  // sigma.(-i hbar grad - A) u; shared by the energy and the compact current
  SpinorField sigma_pi(const SpinorField& u) const;

  double hbar() const { return hbar_; }
  const Grid& grid() const { return grid_; }

private:
  Grid grid_;
  double hbar_;
  HamiltonianOpts opts_;
  bool has_A_ = false;
  std::array<std::vector<double>, 3> A_;
  std::vector<double> divA_;
  std::vector<double> A2_;
  std::vector<double> V_;
  // Stern-Gerlach data: sg_mode 0 none, 1 scalar sigma3 (d=2 curl), 2 full vector
  int sg_mode_ = 0;
  std::vector<double> Bz_;
  std::array<std::vector<double>, 3> Bv_;
  std::array<double, 3> b_uniform_{0.0, 0.0, 0.0};
  bool b_is_uniform_ = false;
};

SpinorField apply_pauli_hamiltonian(const SpinorField& u, const FieldSet& fields,
                                    const ScalarField& V, double hbar,
                                    HamiltonianOpts opts = {});

// ---------------------------------------------------------------------------
// Propagation: u <- exp(-i dt H / hbar) u per member with V frozen.

struct PropagatorOpts {
  std::string method = "krylov";  // krylov | strang (strang needs A == 0)
  int max_krylov = 40;
  double krylov_tol = 1e-10;
  bool include_sg = true;
};

SpinorField propagate_member(const SpinorField& u, const FieldSet& fields,
                             const ScalarField& V, double hbar, double dt,
                             const PropagatorOpts& opts = {});

MixedState propagate_step(const MixedState& s, const FieldSet& fields, const ScalarField& V,
                          double dt, const PropagatorOpts& opts = {});

// ---------------------------------------------------------------------------
// Observables.

ScalarField density(const MixedState& s);  // sum_j lambda_j |u_j|^2, real

// Spin density sum_j lambda_j (conj(u_j) sigma u_j), three real components.
std::array<std::vector<double>, 3> spin_density(const MixedState& s);

// Current density J = sum_j lambda_j [ Im(conj(u_j)(hbar grad - iA)u_j)
//                                      - hbar curl(conj(u_j) sigma u_j) ].
// d=1 keeps the convective part only (flagged via Observables).
VectorField current(const MixedState& s, const FieldSet& fields);
VectorField current_convective(const MixedState& s, const FieldSet& fields);
// Re(conj(u) sigma (sigma.(-i hbar grad - A)) u); equals the convective part
// plus (hbar/2) curl(spin density).
VectorField current_compact(const MixedState& s, const FieldSet& fields);

struct Observables {
  double t = 0.0;
  ScalarField rho;
  VectorField J;
  double Q = 0.0;
  double E_kin = 0.0;
  double E_pot = 0.0;
  double E_total = 0.0;
  double l75 = 0.0;  // L^{7/5} norm of rho
  bool j_convective_only = false;
};

// V_self is the solved Poisson potential (zero field when absent); external
// potential energy int V_ext rho is folded into E_pot.
Observables charge_energy(const MixedState& s, const FieldSet& fields,
                          const ScalarField& V_self);

// ---------------------------------------------------------------------------
// Time evolution.

struct EvolveOpts {
  bool self_consistent = true;  // Poisson coupling on
  bool zero_coupling = false;   // force the Poisson source to zero (consistency tests)
  int state_every = 0;          // record full states every k steps (0: endpoints only)
  double abort_drift = 1e-3;    // relative energy drift that aborts the run
  PropagatorOpts prop;
};

struct Trajectory {
  double dt = 0.0;
  std::vector<Observables> obs;        // one entry per time level, t = 0 first
  std::vector<MixedState> states;      // recorded snapshots
  std::vector<double> state_times;
};

Trajectory evolve_pauli_poisson(const MixedState& s0, const FieldSet& fields, double T,
                                double dt, const EvolveOpts& opts = {});

// r(t) = ||(rho(t+dt) - rho(t-dt)) / (2 dt) + div J(t)|| / ||div J(t)||;
// absolute residual when the denominator vanishes.
std::vector<double> continuity_residual(const Trajectory& traj);

void write_diagnostics_csv(const Trajectory& traj, const std::string& path,
                           const std::string& config_hash);

}  // namespace pwps
