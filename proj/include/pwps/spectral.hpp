#pragma once

// Periodic grids, Fourier transforms and exact spectral calculus on them.
// Everything downstream (field solves, quantum propagation, phase-space
// transforms, particle deposition) is built on these primitives.

#include <array>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pwps {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Errors carry the stage they originate from; the CLI maps stages to exit
// codes so batch drivers can tell configuration mistakes from solver failures.

enum class Stage { config, spectral, fields, quantum, wigner, kinetic, limitlab, io };

const char* stage_name(Stage s);

class Error : public std::runtime_error {
public:
  Error(Stage s, const std::string& msg)
      : std::runtime_error(std::string("[") + stage_name(s) + "] " + msg), stage_(s) {}
  Stage stage() const { return stage_; }

private:
  Stage stage_;
};

[[noreturn]] void fail(Stage s, const std::string& msg);

// ---------------------------------------------------------------------------
// Grid: uniform periodic grid on a d-dimensional box, d in {1,2,3}.
// Wavenumbers follow FFT ordering: k[i] = (2*pi/L) * (i < n/2 ? i : i - n).

struct Grid {
  int d = 0;
  std::array<int, 3> n{1, 1, 1};
  std::array<double, 3> L{1.0, 1.0, 1.0};
  std::array<double, 3> h{0.0, 0.0, 0.0};
  std::array<std::vector<double>, 3> k;

  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < d; ++a) s *= static_cast<std::size_t>(n[a]);
    return s;
  }
  double cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < d; ++a) v *= h[a];
    return v;
  }
  double coord(int axis, int i) const { return h[axis] * i; }
  double kmax(int axis) const { return kPi / h[axis]; }

  // flat index <-> per-axis indices, row-major with the last axis fastest
  std::size_t flat(const std::array<int, 3>& idx) const {
    std::size_t f = 0;
    for (int a = 0; a < d; ++a) f = f * n[a] + static_cast<std::size_t>(idx[a]);
    return f;
  }
  std::array<int, 3> unflat(std::size_t f) const {
    std::array<int, 3> idx{0, 0, 0};
    for (int a = d - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(f % n[a]);
      f /= n[a];
    }
    return idx;
  }
  bool same_shape(const Grid& o) const {
    if (d != o.d) return false;
    for (int a = 0; a < d; ++a)
      if (n[a] != o.n[a] || L[a] != o.L[a]) return false;
    return true;
  }
};

Grid make_grid(int d, std::span<const int> n, std::span<const double> L);
Grid make_grid_1d(int n, double L);

// ---------------------------------------------------------------------------
// Field containers. ScalarField stores complex samples; VectorField stores d
// real components; SpinorField stores the two complex spinor components.

struct ScalarField {
  Grid grid;
  std::vector<cplx> v;

  ScalarField() = default;
  explicit ScalarField(const Grid& g) : grid(g), v(g.size(), cplx(0.0, 0.0)) {}
};

struct VectorField {
  Grid grid;
  std::array<std::vector<double>, 3> comp;

  VectorField() = default;
  explicit VectorField(const Grid& g) : grid(g) {
    for (int a = 0; a < g.d; ++a) comp[a].assign(g.size(), 0.0);
  }
};

struct SpinorField {
  Grid grid;
  std::array<std::vector<cplx>, 2> c;

  SpinorField() = default;
  explicit SpinorField(const Grid& g) : grid(g) {
    c[0].assign(g.size(), cplx(0.0, 0.0));
    c[1].assign(g.size(), cplx(0.0, 0.0));
  }
};

// ---------------------------------------------------------------------------
// FFT wrappers (FFTW behind a guarded plan cache).
// Convention: forward returns amplitude coefficients, u(x) = sum_k uhat_k e^{ikx},
// i.e. forward includes the 1/N factor and inverse is unnormalized.

void fft_forward(const Grid& g, std::span<const cplx> in, std::span<cplx> out);
void fft_inverse(const Grid& g, std::span<const cplx> in, std::span<cplx> out);

// Batched 1-d-flattened transforms used by the phase-space module: `howmany`
// contiguous rows of length `len` each, unnormalized, sign -1 = forward kernel.
void fft_rows(int len, int howmany, cplx* data, int sign);

// Batched d-dimensional unnormalized transforms over contiguous blocks.
void fft_blocks(std::span<const int> dims, int howmany, cplx* data, int sign);

// ---------------------------------------------------------------------------
// Spectral calculus (exact for band-limited fields).

ScalarField spectral_derivative(const ScalarField& f, int axis);
ScalarField spectral_laplacian(const ScalarField& f);
ScalarField spectral_shift(const ScalarField& f, std::span<const double> offset);
SpinorField spectral_shift(const SpinorField& u, std::span<const double> offset);

// Band-limited upsampling onto a grid refined by `factor` per axis.
ScalarField spectral_upsample(const ScalarField& f, int factor);

// Quadrature and norms (plain periodic Riemann sums, spectrally accurate).
double integral_real(const ScalarField& f);
cplx integral(const ScalarField& f);
double l2_norm(const ScalarField& f);
double l2_norm(const SpinorField& u);
double linf_norm(const ScalarField& f);
double max_imag(const ScalarField& f);
cplx inner(const SpinorField& a, const SpinorField& b);  // int conj(a).b dx

double lp_norm_real(const ScalarField& f, double p);  // for real nonneg fields

// ---------------------------------------------------------------------------
// Binary field dump ("PWPS" format, little-endian).
// Header: magic "PWPS", u32 version, then d, n[0..d-1], L[0..d-1] as f64,
// then u32 component count and u32 complex flag. Payload is row-major
// (last axis fastest), f64, re/im interleaved when complex.

void write_field_dump(const std::string& path, const Grid& g,
                      std::span<const cplx> values, int ncomp, bool is_complex);
void write_field_dump_real(const std::string& path, const Grid& g,
                           std::span<const double> values, int ncomp);
struct FieldDump {
  Grid grid;
  int ncomp = 1;
  bool is_complex = false;
  std::vector<cplx> values;   // filled when complex
  std::vector<double> rvalues;  // filled when real
};
FieldDump read_field_dump(const std::string& path);

}  // namespace pwps
