#pragma once

// Lagrangian side of the semiclassical comparison: charged-particle
// characteristics under the Lorentz force, transport of sampled initial
// measures, grid deposition, and the self-consistent particle-in-cell loop.

#include <array>
#include <string>
#include <vector>

#include "pwps/fields.hpp"
#include "pwps/sampling.hpp"
#include "pwps/spectral.hpp"

namespace pwps {

struct ParticleEnsemble {
  int d = 2;
  std::array<double, 3> box{0.0, 0.0, 0.0};  // periodic wrap lengths
  std::vector<std::array<double, 3>> x;
  std::vector<std::array<double, 3>> p;
  std::vector<double> w;

  std::size_t size() const { return w.size(); }
  double mass() const {
    double m = 0.0;
    for (double v : w) m += v;
    return m;
  }
};

struct KineticMoments {
  ScalarField rho;
  VectorField J;
};

// Field evaluation at particle positions: analytic closures from the preset
// plus an optional self-consistent E carried on the grid (multilinear
// interpolation, matched to the deposition kernel).
struct ParticleFields {
  const FieldSet* fields = nullptr;
  const VectorField* E_grid = nullptr;

  std::array<double, 3> E(const std::array<double, 3>& xp) const;
  std::array<double, 3> B(const std::array<double, 3>& xp) const;
  double V(const std::array<double, 3>& xp) const;  // external potential only
};

// One time-symmetric Boris step: half drift, half electric kick, exact
// magnetic rotation by |B| dt, half electric kick, half drift. |p| is exactly
// invariant when E = 0; dt |B| > pi is rejected (rotation aliasing).
void lorentz_step(ParticleEnsemble& ps, const ParticleFields& pf, double dt);

struct FlowResult {
  std::array<double, 3> x{0.0, 0.0, 0.0};
  std::array<double, 3> p{0.0, 0.0, 0.0};
  std::vector<double> hamiltonian;  // (1/2)|p|^2 + V(x) at every step
};

FlowResult flow_map(const std::array<double, 3>& x0, const std::array<double, 3>& p0, int d,
                    const ParticleFields& pf, const std::array<double, 3>& box, double T,
                    double dt);

// Cloud-in-cell deposition of mass and momentum onto the grid; conserves the
// total mass exactly by construction.
KineticMoments deposit(const ParticleEnsemble& ps, const Grid& grid);

ParticleEnsemble sample_ensemble(PhaseSampler& sampler, int N, const std::array<double, 3>& box,
                                 int d);

ParticleEnsemble solve_linear_vlasov(PhaseSampler& sampler, const FieldSet& fields, double T,
                                     double dt, int N);

struct KineticTrajectory {
  double dt = 0.0;
  std::vector<double> t;
  std::vector<double> E_kin, E_field, E_total;
  std::vector<std::array<double, 3>> momentum;
  ParticleEnsemble final_state;
  std::vector<std::string> warnings;
};

KineticTrajectory solve_vlasov_poisson(PhaseSampler& sampler, const FieldSet& fields,
                                       double T, double dt, int N, const Grid& grid,
                                       bool self_consistent = true);

void write_particles(const ParticleEnsemble& ps, const std::string& path);

}  // namespace pwps
