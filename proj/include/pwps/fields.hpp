#pragma once

// Electromagnetic field configurations: magnetic potential A with derived
// B = curl A, external electric potentials, analytic presets, and the
// spectral Poisson solver for the self-consistent potential.

#include <array>
#include <functional>
#include <map>
#include <string>

#include "pwps/spectral.hpp"

namespace pwps {

// Analytic point evaluators used by the particle pusher; grids cannot
// represent a uniform B gauge on the torus, closures can.
using PointVecFn = std::function<std::array<double, 3>(const std::array<double, 3>&)>;

struct FieldSet {
  Grid grid;
  VectorField A;     // real, d components; all-zero for A == 0
  ScalarField Bz;    // d == 2: out-of-plane scalar B
  VectorField Bvec;  // d == 3: 3-component B
  ScalarField V_ext;
  bool has_A = false;
  bool has_B = false;
  bool has_V_ext = false;

  // test mode: uniform B prescribed directly, A stays zero
  bool has_b_override = false;
  std::array<double, 3> b_override{0.0, 0.0, 0.0};

  std::string preset_name = "custom";
  std::map<std::string, double> preset_params;

  // optional closed forms for particle-side evaluation
  PointVecFn E_at;  // -grad V_ext
  PointVecFn B_at;  // magnetic field as a 3-vector (out-of-plane in d=2)
};

// curl of a real vector potential: scalar (out-of-plane) field for d=2,
// 3-component field for d=3; rejected for d=1.
ScalarField curl2d(const VectorField& A);
VectorField curl3d(const VectorField& A);

VectorField gradient(const ScalarField& V);
ScalarField divergence(const VectorField& A);

enum class PoissonMode { periodic, free_space };

// Periodic: -lap V = rho - mean(rho), Vhat(0) = 0.
// Free space (d=3 only): zero-padded convolution with 1/(4 pi |x|).
ScalarField solve_poisson(const ScalarField& rho, PoissonMode mode = PoissonMode::periodic);

// Presets: zero | sinusoidal_B | harmonic_V | uniform_B_override | cosine_V |
// sinusoidal_B_cosine_V. Parameters are looked up by name with documented
// defaults; unknown preset names are an error.
FieldSet preset_fields(const std::string& name, const Grid& grid,
                       const std::map<std::string, double>& params = {});

// Sidecar-accompanied dump of every stored component.
void write_fieldset(const FieldSet& fs, const std::string& dir, const std::string& stem,
                    const std::string& config_hash);

}  // namespace pwps
