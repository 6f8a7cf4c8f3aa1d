#pragma once

// Phase-space calculus: Wigner transform and Wigner matrix of a mixed state,
// Husimi smoothing, moments, the theta/beta pseudo-differential operators,
// the phase-space equation residual, and high-frequency tail diagnostics.
//
// Conventions. f(x,xi) = (2 pi)^{-d} int e^{-i xi.y} rho(x + hbar y/2,
// x - hbar y/2) dy with the prefactor chosen so that int f dxi = rho(x,x)
// holds exactly, also on the discrete lattice. The xi grid is pinned to the
// spatial grid: y_m = m h/(pad hbar) so shifted samples land on a refined
// grid and the transform needs no interpolation. pad >= 1 enlarges the
// momentum box Xi = 2 pad hbar k_max; truncating the y range (n_y below the
// full lattice) coarsens the xi resolution without shrinking the box.

#include <array>
#include <functional>
#include <vector>

#include "pwps/fields.hpp"
#include "pwps/quantum.hpp"
#include "pwps/spectral.hpp"

namespace pwps {

struct PhaseGrid {
  Grid x;
  double hbar = 1.0;
  int pad = 1;
  std::array<int, 3> n_y{1, 1, 1};
  std::array<double, 3> dy{0.0, 0.0, 0.0};
  std::array<double, 3> dxi{0.0, 0.0, 0.0};
  std::array<double, 3> Xi{0.0, 0.0, 0.0};
  std::array<std::vector<double>, 3> xi;  // FFT-ordered values per axis

  std::size_t xi_size() const {
    std::size_t s = 1;
    for (int a = 0; a < x.d; ++a) s *= static_cast<std::size_t>(n_y[a]);
    return s;
  }
  double xi_cell() const {
    double v = 1.0;
    for (int a = 0; a < x.d; ++a) v *= dxi[a];
    return v;
  }
  std::size_t size() const { return x.size() * xi_size(); }
};

struct PhaseGridOpts {
  double xi_halfwidth = 0.0;  // momentum coverage requirement (picks pad)
  double y_halfwidth = 0.0;   // y-range truncation; 0 keeps the full lattice
  int n_y = 0;                // explicit xi point count per axis (overrides y_halfwidth)
};

PhaseGrid make_phase_grid(const Grid& x, double hbar, const PhaseGridOpts& opts = {});

struct WignerFunction {
  PhaseGrid pg;
  std::vector<double> f;  // layout [x][xi], xi fastest
  double imag_residue = 0.0;

  double hbar() const { return pg.hbar; }
};

struct WignerMatrix {
  PhaseGrid pg;
  std::array<std::vector<cplx>, 4> F;  // 00, 01, 10, 11
  double herm_residue = 0.0;
};

struct WignerOpts {
  bool fold_xi_gaussian = false;  // multiply T by exp(-hbar|y|^2/4): momentum
                                  // half of the Husimi smoothing, applied in
                                  // the transform so the y range can be short
  double edge_mass_tol = 1e-6;    // y-truncation error gate
};

WignerFunction wigner_transform(const MixedState& s, const PhaseGrid& pg,
                                const WignerOpts& opts = {});
WignerMatrix wigner_matrix(const MixedState& s, const PhaseGrid& pg,
                           const WignerOpts& opts = {});

WignerFunction trace(const WignerMatrix& F);

// Gaussian smoothing with unit-mass kernels of variance hbar/2 per direction,
// the pair (x and xi) making the result pointwise nonnegative.
struct HusimiOpts {
  bool x_direction = true;
  bool xi_direction = true;
  // admissible wraparound of the periodized kernel at the box edge; the
  // periodized kernel stays positive, so nonnegativity and mass are safe at
  // any setting, only closed-form fidelity degrades
  double tail_tol = 1e-10;
};
WignerFunction husimi(const WignerFunction& f, const HusimiOpts& opts = {});

ScalarField moment_density(const WignerFunction& f);
VectorField moment_current(const WignerMatrix& F, const FieldSet& fields);

double total_mass(const WignerFunction& f);
double min_value(const WignerFunction& f);

// ---------------------------------------------------------------------------
// Pseudo-differential operators. theta[g] with
//   delta[g](x,y) = (i/hbar)(g(x + hbar y/2) - g(x - hbar y/2))
// acts by multiplication in the y representation. For a symbol with vanishing
// third derivatives, theta[g] F = -dg/dx . dF/dxi exactly.
using SymbolFn = std::function<double(const std::array<double, 3>&)>;

WignerFunction apply_theta(const ScalarField& g, const WignerFunction& F);
WignerFunction apply_theta(const SymbolFn& g, const WignerFunction& F);
WignerMatrix apply_theta(const ScalarField& g, const WignerMatrix& F);

// d/dxi along one momentum axis (spectral on the xi grid); test oracle helper.
WignerFunction xi_derivative(const WignerFunction& F, int axis);
WignerFunction x_derivative(const WignerFunction& F, int axis);

// ---------------------------------------------------------------------------
// Residual of the phase-space evolution equation
//   dF/dt + xi.grad_x F - conv_beta[A] - theta[A].(xi F) + theta[|A|^2]F/2
//   - (hbar/2) SG + theta[V] F = 0
// assembled from a trajectory of Wigner matrices at uniform spacing dt.
// The Stern-Gerlach operator is matrix-ordered: (i/hbar)(sB(x+) T - T sB(x-)).
std::vector<double> pauli_wigner_residual(const std::vector<WignerMatrix>& F_traj,
                                          const FieldSet& fields,
                                          const std::vector<ScalarField>& V_traj,
                                          double hbar, double dt);

// ---------------------------------------------------------------------------
// Spectral tail diagnostics: mass at wavenumbers |k| >= R / hbar, and the
// uniform bound hbar^2 sum_j lambda_j |grad u_j|_2^2 that dominates R^2 * tail.
struct OscillatoryTail {
  double tail = 0.0;
  double companion = 0.0;
};
OscillatoryTail oscillatory_tail(const MixedState& s, double R);

// ---------------------------------------------------------------------------
// Test functions (phase-space Gaussians; their xi-direction Fourier transform
// is integrable, so the dual pairing below is well defined).
struct TestFunction {
  int d = 1;
  std::array<double, 3> x0{0.0, 0.0, 0.0};
  std::array<double, 3> xi0{0.0, 0.0, 0.0};
  double width_x = 1.0;
  double width_xi = 1.0;
  std::array<double, 3> wrapL{0.0, 0.0, 0.0};  // box lengths for wrapped x distance

  double eval(const std::array<double, 3>& x, const std::array<double, 3>& xi) const;
};

// <f, phi> by phase-space quadrature. When shift_A is nonnull the test
// function is evaluated at (x, xi - A(x)), realizing the p = xi - A change of
// variables without resampling f.
double pair_against(const WignerFunction& f, const TestFunction& phi,
                    const VectorField* shift_A = nullptr);

}  // namespace pwps
