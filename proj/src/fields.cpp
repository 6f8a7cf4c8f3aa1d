#include "pwps/fields.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace pwps {

namespace {

ScalarField to_scalar(const std::vector<double>& v, const Grid& g) {
  ScalarField f(g);
  for (std::size_t i = 0; i < v.size(); ++i) f.v[i] = cplx(v[i], 0.0);
  return f;
}

double wrap_disp(double dx, double L) {
  dx = std::fmod(dx, L);
  if (dx > 0.5 * L) dx -= L;
  if (dx < -0.5 * L) dx += L;
  return dx;
}

double param(const std::map<std::string, double>& p, const std::string& key, double def) {
  auto it = p.find(key);
  return it == p.end() ? def : it->second;
}

}  // namespace

ScalarField curl2d(const VectorField& A) {
  if (A.grid.d != 2) fail(Stage::fields, "curl2d needs d=2");
  ScalarField ax = to_scalar(A.comp[0], A.grid);
  ScalarField ay = to_scalar(A.comp[1], A.grid);
  ScalarField dxay = spectral_derivative(ay, 0);
  ScalarField dyax = spectral_derivative(ax, 1);
  ScalarField out(A.grid);
  for (std::size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = cplx(dxay.v[i].real() - dyax.v[i].real(), 0.0);
  return out;
}

VectorField curl3d(const VectorField& A) {
  if (A.grid.d != 3) fail(Stage::fields, "curl3d needs d=3");
  std::array<ScalarField, 3> a;
  for (int c = 0; c < 3; ++c) a[c] = to_scalar(A.comp[c], A.grid);
  VectorField out(A.grid);
  for (int c = 0; c < 3; ++c) {
    const int p = (c + 1) % 3, q = (c + 2) % 3;
    ScalarField dpq = spectral_derivative(a[q], p);
    ScalarField dqp = spectral_derivative(a[p], q);
    for (std::size_t i = 0; i < out.comp[c].size(); ++i)
      out.comp[c][i] = dpq.v[i].real() - dqp.v[i].real();
  }
  return out;
}

VectorField gradient(const ScalarField& V) {
  VectorField out(V.grid);
  for (int a = 0; a < V.grid.d; ++a) {
    ScalarField dv = spectral_derivative(V, a);
    for (std::size_t i = 0; i < out.comp[a].size(); ++i) out.comp[a][i] = dv.v[i].real();
  }
  return out;
}

ScalarField divergence(const VectorField& A) {
  ScalarField out(A.grid);
  for (int a = 0; a < A.grid.d; ++a) {
    ScalarField da = spectral_derivative(to_scalar(A.comp[a], A.grid), a);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += cplx(da.v[i].real(), 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// cell-averaged 1/(4 pi r) at the origin cell, cubic cells:
// (1/h^3) * int_{[-h/2,h/2]^3} dr / (4 pi |r|) = kCubeSelf / (4 pi h)
constexpr double kCubeSelf = 2.380077363979554;

// Cell-averaged Newtonian kernel for cells near the singularity; the pointwise
// sample is accurate only where 1/r varies slowly across a cell.
double kernel_cell_average(int m0, int m1, int m2, double h) {
  static const double gx[12] = {-0.9815606342467192, -0.9041172563704749,
                                -0.7699026741943047, -0.5873179542866175,
                                -0.3678314989981802, -0.1252334085114689,
                                0.1252334085114689,  0.3678314989981802,
                                0.5873179542866175,  0.7699026741943047,
                                0.9041172563704749,  0.9815606342467192};
  static const double gw[12] = {0.0471753363865118, 0.1069393259953184,
                                0.1600783285433462, 0.2031674267230659,
                                0.2334925365383548, 0.2491470458134028,
                                0.2491470458134028, 0.2334925365383548,
                                0.2031674267230659, 0.1600783285433462,
                                0.1069393259953184, 0.0471753363865118};
  double acc = 0.0;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      for (int k = 0; k < 12; ++k) {
        const double x = (m0 + 0.5 * gx[i]) * h;
        const double y = (m1 + 0.5 * gx[j]) * h;
        const double z = (m2 + 0.5 * gx[k]) * h;
        acc += gw[i] * gw[j] * gw[k] / std::sqrt(x * x + y * y + z * z);
      }
  return acc / (8.0 * 4.0 * kPi);  // mean over the cell, divided by 4 pi
}

ScalarField solve_poisson_free3d(const ScalarField& rho) {
  const Grid& g = rho.grid;
  if (g.d != 3) fail(Stage::fields, "free-space Poisson mode needs d=3");
  if (std::abs(g.h[0] - g.h[1]) > 1e-12 * g.h[0] || std::abs(g.h[0] - g.h[2]) > 1e-12 * g.h[0])
    fail(Stage::fields, "free-space Poisson mode needs cubic cells");
  std::array<int, 3> nn;
  std::array<double, 3> ll;
  for (int a = 0; a < 3; ++a) {
    nn[a] = 2 * g.n[a];
    ll[a] = 2.0 * g.L[a];
  }
  Grid big = make_grid(3, nn, ll);
  // quadrature of the convolution is midpoint in the source; the h^2/24
  // moment defect is removed by a spectral source correction
  ScalarField lap = spectral_laplacian(rho);
  std::vector<cplx> corrected(rho.v.size());
  for (std::size_t i = 0; i < corrected.size(); ++i)
    corrected[i] = rho.v[i] - (g.h[0] * g.h[0] / 24.0) * lap.v[i];
  std::vector<cplx> src(big.size(), cplx(0.0, 0.0));
  std::vector<cplx> ker(big.size(), cplx(0.0, 0.0));
  const double h = g.h[0];
  for (int i0 = 0; i0 < big.n[0]; ++i0)
    for (int i1 = 0; i1 < big.n[1]; ++i1)
      for (int i2 = 0; i2 < big.n[2]; ++i2) {
        const std::size_t f = big.flat({i0, i1, i2});
        if (i0 < g.n[0] && i1 < g.n[1] && i2 < g.n[2])
          src[f] = corrected[g.flat({i0, i1, i2})];
        const int m0 = (i0 <= big.n[0] / 2 ? i0 : i0 - big.n[0]);
        const int m1 = (i1 <= big.n[1] / 2 ? i1 : i1 - big.n[1]);
        const int m2 = (i2 <= big.n[2] / 2 ? i2 : i2 - big.n[2]);
        if (m0 == 0 && m1 == 0 && m2 == 0) {
          ker[f] = cplx(kCubeSelf / (4.0 * kPi * h), 0.0);
        } else if (std::abs(m0) <= 3 && std::abs(m1) <= 3 && std::abs(m2) <= 3) {
          ker[f] = cplx(kernel_cell_average(m0, m1, m2, h), 0.0);
        } else {
          const double r = h * std::sqrt(double(m0) * m0 + double(m1) * m1 + double(m2) * m2);
          ker[f] = cplx(1.0 / (4.0 * kPi * r), 0.0);
        }
      }
  std::vector<cplx> src_hat(big.size()), ker_hat(big.size());
  fft_forward(big, src, src_hat);
  fft_forward(big, ker, ker_hat);
  const double nb = static_cast<double>(big.size());
  for (std::size_t i = 0; i < src_hat.size(); ++i)
    src_hat[i] *= ker_hat[i] * nb * big.cell_volume();
  std::vector<cplx> conv(big.size());
  fft_inverse(big, src_hat, conv);
  ScalarField out(g);
  for (int i0 = 0; i0 < g.n[0]; ++i0)
    for (int i1 = 0; i1 < g.n[1]; ++i1)
      for (int i2 = 0; i2 < g.n[2]; ++i2)
        out.v[g.flat({i0, i1, i2})] = cplx(conv[big.flat({i0, i1, i2})].real(), 0.0);
  return out;
}

}  // namespace

ScalarField solve_poisson(const ScalarField& rho, PoissonMode mode) {
  if (max_imag(rho) > 1e-12 * (1.0 + linf_norm(rho)))
    fail(Stage::fields, "Poisson source must be real");
  if (mode == PoissonMode::free_space) return solve_poisson_free3d(rho);

  const Grid& g = rho.grid;
  ScalarField spec(g);
  fft_forward(g, rho.v, spec.v);
  std::array<int, 3> idx{0, 0, 0};
  const std::size_t total = g.size();
  for (std::size_t fl = 0; fl < total; ++fl) {
    double k2 = 0.0;
    for (int a = 0; a < g.d; ++a) k2 += g.k[a][idx[a]] * g.k[a][idx[a]];
    spec.v[fl] = (k2 == 0.0) ? cplx(0.0, 0.0) : spec.v[fl] / k2;
    for (int a = g.d - 1; a >= 0; --a) {
      if (++idx[a] < g.n[a]) break;
      idx[a] = 0;
    }
  }
  ScalarField out(g);
  fft_inverse(g, spec.v, out.v);
  for (auto& z : out.v) z = cplx(z.real(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Presets.

namespace {

void derive_B(FieldSet& fs) {
  const Grid& g = fs.grid;
  if (!fs.has_A || g.d == 1) return;
  if (g.d == 2) {
    fs.Bz = curl2d(fs.A);
    fs.has_B = true;
  } else {
    fs.Bvec = curl3d(fs.A);
    fs.has_B = true;
  }
}

void fill_sinusoidal_B(FieldSet& fs, double amp) {
  const Grid& g = fs.grid;
  if (g.d < 2) fail(Stage::fields, "sinusoidal_B needs d >= 2");
  const double q = kTwoPi / g.L[0];
  fs.A = VectorField(g);
  const std::size_t total = g.size();
  for (std::size_t fl = 0; fl < total; ++fl) {
    const auto idx = g.unflat(fl);
    fs.A.comp[1][fl] = amp * std::sin(q * g.coord(0, idx[0]));
  }
  fs.has_A = true;
  derive_B(fs);
  fs.B_at = [amp, q](const std::array<double, 3>& x) {
    return std::array<double, 3>{0.0, 0.0, amp * q * std::cos(q * x[0])};
  };
}

void fill_harmonic_V(FieldSet& fs, double omega) {
  const Grid& g = fs.grid;
  fs.V_ext = ScalarField(g);
  const std::size_t total = g.size();
  for (std::size_t fl = 0; fl < total; ++fl) {
    const auto idx = g.unflat(fl);
    double r2 = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double dx = wrap_disp(g.coord(a, idx[a]) - 0.5 * g.L[a], g.L[a]);
      r2 += dx * dx;
    }
    fs.V_ext.v[fl] = cplx(0.5 * omega * omega * r2, 0.0);
  }
  fs.has_V_ext = true;
  std::array<double, 3> Lc{fs.grid.L[0], fs.grid.L[1], fs.grid.L[2]};
  const int d = g.d;
  fs.E_at = [omega, Lc, d](const std::array<double, 3>& x) {
    std::array<double, 3> e{0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a)
      e[a] = -omega * omega * wrap_disp(x[a] - 0.5 * Lc[a], Lc[a]);
    return e;
  };
}

void fill_cosine_V(FieldSet& fs, double amp) {
  const Grid& g = fs.grid;
  fs.V_ext = ScalarField(g);
  const std::size_t total = g.size();
  for (std::size_t fl = 0; fl < total; ++fl) {
    const auto idx = g.unflat(fl);
    double v = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double q = kTwoPi / g.L[a];
      v += amp * (1.0 - std::cos(q * (g.coord(a, idx[a]) - 0.5 * g.L[a])));
    }
    fs.V_ext.v[fl] = cplx(v, 0.0);
  }
  fs.has_V_ext = true;
  std::array<double, 3> Lc{g.L[0], g.L[1], g.L[2]};
  const int d = g.d;
  fs.E_at = [amp, Lc, d](const std::array<double, 3>& x) {
    std::array<double, 3> e{0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a) {
      const double q = kTwoPi / Lc[a];
      e[a] = -amp * q * std::sin(q * (x[a] - 0.5 * Lc[a]));
    }
    return e;
  };
}

}  // namespace

FieldSet preset_fields(const std::string& name, const Grid& grid,
                       const std::map<std::string, double>& params) {
  FieldSet fs;
  fs.grid = grid;
  fs.A = VectorField(grid);
  fs.preset_name = name;
  fs.preset_params = params;

  if (name == "zero") {
    // nothing to fill
  } else if (name == "sinusoidal_B") {
    fill_sinusoidal_B(fs, param(params, "b_amp", 0.5));
  } else if (name == "harmonic_V") {
    fill_harmonic_V(fs, param(params, "omega", 1.0));
  } else if (name == "cosine_V") {
    fill_cosine_V(fs, param(params, "v_amp", 0.5));
  } else if (name == "sinusoidal_B_cosine_V") {
    fill_sinusoidal_B(fs, param(params, "b_amp", 0.5));
    fill_cosine_V(fs, param(params, "v_amp", 0.5));
  } else if (name == "uniform_B_override") {
    fs.has_b_override = true;
    if (params.count("b")) {
      fs.b_override = {0.0, 0.0, params.at("b")};
    } else {
      fs.b_override = {param(params, "bx", 0.0), param(params, "by", 0.0),
                       param(params, "bz", 0.0)};
    }
    auto b = fs.b_override;
    fs.B_at = [b](const std::array<double, 3>&) { return b; };
  } else {
    fail(Stage::fields, "unknown preset '" + name + "'");
  }

  if (grid.d == 1 && fs.has_A) fail(Stage::fields, "d=1 requires A == 0");
  return fs;
}

void write_fieldset(const FieldSet& fs, const std::string& dir, const std::string& stem,
                    const std::string& config_hash) {
  const Grid& g = fs.grid;
  nlohmann::json meta;
  meta["preset"] = fs.preset_name;
  meta["params"] = fs.preset_params;
  meta["config_hash"] = config_hash;
  meta["tool_version"] = kToolVersion;
  std::vector<std::string> files;
  auto dump_real = [&](const std::string& tag, const std::vector<double>& vals, int ncomp) {
    const std::string path = dir + "/" + stem + "_" + tag + ".pwps";
    write_field_dump_real(path, g, vals, ncomp);
    files.push_back(stem + "_" + tag + ".pwps");
  };
  if (fs.has_A)
    for (int a = 0; a < g.d; ++a) dump_real("A" + std::to_string(a), fs.A.comp[a], 1);
  if (fs.has_B) {
    if (g.d == 2) {
      std::vector<double> b(fs.Bz.v.size());
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = fs.Bz.v[i].real();
      dump_real("B", b, 1);
    } else {
      for (int a = 0; a < 3; ++a) dump_real("B" + std::to_string(a), fs.Bvec.comp[a], 1);
    }
  }
  if (fs.has_V_ext) {
    std::vector<double> v(fs.V_ext.v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fs.V_ext.v[i].real();
    dump_real("Vext", v, 1);
  }
  meta["files"] = files;
  if (fs.has_b_override) meta["b_override"] = fs.b_override;
  std::ofstream out(dir + "/" + stem + ".json");
  if (!out) fail(Stage::io, "cannot write fieldset sidecar");
  out << meta.dump(2) << "\n";
}

}  // namespace pwps
