#include "pwps/wigner.hpp"

#include <algorithm>
#include <cmath>

namespace pwps {

namespace {

constexpr int kChunkRows = 32;  // x rows per transform batch

int even_clamp(int v, int lo, int hi) {
  v = std::max(lo, std::min(v, hi));
  if (v % 2 != 0) ++v;
  return std::min(v, hi);
}

}  // namespace

PhaseGrid make_phase_grid(const Grid& x, double hbar, const PhaseGridOpts& opts) {
  if (!(hbar > 0.0)) fail(Stage::wigner, "hbar must be positive");
  PhaseGrid pg;
  pg.x = x;
  pg.hbar = hbar;

  // padding so the momentum box covers the requested half-width
  pg.pad = 1;
  if (opts.xi_halfwidth > 0.0) {
    for (int a = 0; a < x.d; ++a) {
      const double cover = hbar * x.kmax(a);
      pg.pad = std::max(pg.pad, static_cast<int>(std::ceil(opts.xi_halfwidth / cover - 1e-12)));
    }
  }

  for (int a = 0; a < x.d; ++a) {
    const int full = 2 * pg.pad * x.n[a];
    pg.dy[a] = x.h[a] / (pg.pad * hbar);
    int ny = full;
    if (opts.n_y > 0) {
      ny = even_clamp(opts.n_y, 8, full);
    } else if (opts.y_halfwidth > 0.0) {
      ny = even_clamp(static_cast<int>(std::ceil(2.0 * opts.y_halfwidth / pg.dy[a])), 8, full);
    }
    pg.n_y[a] = ny;
    pg.dxi[a] = kTwoPi / (ny * pg.dy[a]);
    pg.Xi[a] = ny * pg.dxi[a];
    pg.xi[a].resize(ny);
    for (int l = 0; l < ny; ++l) {
      const int freq = (l < ny / 2) ? l : l - ny;
      pg.xi[a][l] = pg.dxi[a] * freq;
    }
  }
  return pg;
}

// ---------------------------------------------------------------------------
// Shared index tables: fine-grid flat offsets of x_a +/- hbar y/2 for every
// (coarse index, momentum index) pair along one axis.

namespace {

struct AxisTables {
  // [i * n_y + l] -> flat offset contribution on the fine grid
  std::vector<std::size_t> plus, minus;
};

struct FineIndexer {
  Grid fine;
  std::array<AxisTables, 3> axis;
  std::array<std::size_t, 3> stride{1, 1, 1};

  void build(const PhaseGrid& pg) {
    const Grid& x = pg.x;
    const int factor = 2 * pg.pad;
    std::array<int, 3> nn;
    std::array<double, 3> ll;
    for (int a = 0; a < x.d; ++a) {
      nn[a] = x.n[a] * factor;
      ll[a] = x.L[a];
    }
    fine = make_grid(x.d, std::span<const int>(nn.data(), x.d),
                     std::span<const double>(ll.data(), x.d));
    for (int a = x.d - 1; a >= 0; --a)
      stride[a] = (a == x.d - 1) ? 1 : stride[a + 1] * fine.n[a + 1];
    for (int a = 0; a < x.d; ++a) {
      const int ny = pg.n_y[a], nf = fine.n[a];
      axis[a].plus.resize(static_cast<std::size_t>(x.n[a]) * ny);
      axis[a].minus.resize(static_cast<std::size_t>(x.n[a]) * ny);
      for (int i = 0; i < x.n[a]; ++i)
        for (int l = 0; l < ny; ++l) {
          const int m = (l < ny / 2) ? l : l - ny;
          int ip = (factor * i + m) % nf;
          if (ip < 0) ip += nf;
          int im = (factor * i - m) % nf;
          if (im < 0) im += nf;
          axis[a].plus[static_cast<std::size_t>(i) * ny + l] = ip * stride[a];
          axis[a].minus[static_cast<std::size_t>(i) * ny + l] = im * stride[a];
        }
    }
  }
};

// iterate per-axis momentum counters over the flattened xi index
struct XiCounter {
  const PhaseGrid* pg;
  std::array<int, 3> l{0, 0, 0};
  void reset() { l = {0, 0, 0}; }
  void advance() {
    for (int a = pg->x.d - 1; a >= 0; --a) {
      if (++l[a] < pg->n_y[a]) return;
      l[a] = 0;
    }
  }
};

// Smoothing multipliers built as DFTs of the sampled, periodized, normalized
// Gaussian kernel. Convolving with a sampled positive kernel keeps smoothed
// distributions nonnegative to roundoff, which sampling exp(-hbar y^2/4)
// directly would not (its inverse transform rings at the box-edge level).
std::vector<double> gaussian_kernel_multiplier(int n, double spacing, double period,
                                               double hbar) {
  std::vector<double> K(n, 0.0);
  double sum = 0.0;
  for (int l = 0; l < n; ++l) {
    const int f = (l < n / 2) ? l : l - n;
    const double z = f * spacing;
    for (int j = -1; j <= 1; ++j) {
      const double zz = z + j * period;
      K[l] += std::exp(-zz * zz / hbar);
    }
    sum += K[l];
  }
  for (double& v : K) v /= sum;
  std::vector<double> M(n, 0.0);
  for (int m = 0; m < n; ++m) {
    double acc = 0.0;
    for (int l = 0; l < n; ++l) acc += K[l] * std::cos(kTwoPi * l * m / n);
    M[m] = acc;
  }
  return M;
}

std::array<std::vector<double>, 3> xi_kernel_multipliers(const PhaseGrid& pg) {
  std::array<std::vector<double>, 3> M;
  for (int a = 0; a < pg.x.d; ++a)
    M[a] = gaussian_kernel_multiplier(pg.n_y[a], pg.dxi[a], pg.Xi[a], pg.hbar);
  return M;
}

std::array<std::vector<double>, 3> x_kernel_multipliers(const PhaseGrid& pg) {
  std::array<std::vector<double>, 3> M;
  for (int a = 0; a < pg.x.d; ++a)
    M[a] = gaussian_kernel_multiplier(pg.x.n[a], pg.x.h[a], pg.x.L[a], pg.hbar);
  return M;
}

bool at_y_edge(const PhaseGrid& pg, const std::array<int, 3>& l) {
  for (int a = 0; a < pg.x.d; ++a) {
    const int ny = pg.n_y[a];
    const int m = (l[a] < ny / 2) ? l[a] : l[a] - ny;
    if (std::abs(m) >= ny / 2 - 1) return true;
  }
  return false;
}

// Core accumulation shared by the scalar and matrix transforms.
template <typename Acc>
void transform_members(const MixedState& s, const PhaseGrid& pg, const WignerOpts& opts,
                       int comp_a, int comp_b, Acc&& accumulate) {
  const Grid& xg = pg.x;
  const std::size_t nx = xg.size(), nxi = pg.xi_size();
  const int factor = 2 * pg.pad;
  FineIndexer fx;
  fx.build(pg);

  std::array<int, 3> dims;
  for (int a = 0; a < xg.d; ++a) dims[a] = pg.n_y[a];

  std::vector<cplx> chunk(static_cast<std::size_t>(kChunkRows) * nxi);
  std::vector<double> fold(nxi, 1.0);
  if (opts.fold_xi_gaussian) {
    const auto M = xi_kernel_multipliers(pg);
    XiCounter ct{&pg};
    ct.reset();
    for (std::size_t q = 0; q < nxi; ++q, ct.advance()) {
      double v = 1.0;
      for (int a = 0; a < xg.d; ++a) v *= M[a][ct.l[a]];
      fold[q] = v;
    }
  }

  // the edge-mass gate is a truncation-error proxy; at the full lattice the
  // discrete transform is exact and nothing is truncated
  bool truncated = false;
  for (int a = 0; a < xg.d; ++a)
    if (pg.n_y[a] < 2 * pg.pad * xg.n[a]) truncated = true;

  double edge_mass = 0.0, total_mass_acc = 0.0;
  const double scale = std::pow(kTwoPi, -xg.d) *
                       [&] {
                         double v = 1.0;
                         for (int a = 0; a < xg.d; ++a) v *= pg.dy[a];
                         return v;
                       }();

  for (int j = 0; j < s.n_members(); ++j) {
    ScalarField ua(xg), ub(xg);
    ua.v = s.members[j].c[comp_a];
    ub.v = s.members[j].c[comp_b];
    ScalarField fa = spectral_upsample(ua, factor);
    ScalarField fb = spectral_upsample(ub, factor);
    const double lam = s.lambda[j];

    for (std::size_t x0 = 0; x0 < nx; x0 += kChunkRows) {
      const int rows = static_cast<int>(std::min<std::size_t>(kChunkRows, nx - x0));
      for (int r = 0; r < rows; ++r) {
        const auto xi_idx = xg.unflat(x0 + r);
        cplx* row = chunk.data() + static_cast<std::size_t>(r) * nxi;
        XiCounter ct{&pg};
        ct.reset();
        for (std::size_t q = 0; q < nxi; ++q, ct.advance()) {
          std::size_t ip = 0, im = 0;
          for (int a = 0; a < xg.d; ++a) {
            const std::size_t off = static_cast<std::size_t>(xi_idx[a]) * pg.n_y[a] + ct.l[a];
            ip += fx.axis[a].plus[off];
            im += fx.axis[a].minus[off];
          }
          cplx t = fa.v[ip] * std::conj(fb.v[im]);
          if (opts.fold_xi_gaussian) t *= fold[q];
          // truncation accounting on the effective integrand
          const double mag = std::abs(t);
          total_mass_acc += lam * mag;
          if (at_y_edge(pg, ct.l)) edge_mass += lam * mag;
          row[q] = t;
        }
      }
      fft_blocks(std::span<const int>(dims.data(), xg.d), rows, chunk.data(), -1);
      accumulate(x0, rows, chunk.data(), lam * scale);
    }
  }

  if (truncated && total_mass_acc > 0.0 && edge_mass / total_mass_acc > opts.edge_mass_tol)
    fail(Stage::wigner, "under-resolved momentum box: relative mass " +
                            std::to_string(edge_mass / total_mass_acc) +
                            " at the y-range boundary");
}

}  // namespace

WignerFunction wigner_transform(const MixedState& s, const PhaseGrid& pg,
                                const WignerOpts& opts) {
  if (!s.grid.same_shape(pg.x)) fail(Stage::wigner, "phase grid does not match state grid");
  WignerFunction w;
  w.pg = pg;
  w.f.assign(pg.size(), 0.0);
  const std::size_t nxi = pg.xi_size();
  double max_im = 0.0;

  for (int c = 0; c < 2; ++c) {
    transform_members(s, pg, opts, c, c,
                      [&](std::size_t x0, int rows, const cplx* data, double weight) {
                        for (int r = 0; r < rows; ++r) {
                          double* dst = w.f.data() + (x0 + r) * nxi;
                          const cplx* src = data + static_cast<std::size_t>(r) * nxi;
                          for (std::size_t q = 0; q < nxi; ++q) {
                            dst[q] += weight * src[q].real();
                            max_im = std::max(max_im, std::abs(weight * src[q].imag()));
                          }
                        }
                      });
  }
  w.imag_residue = max_im;
  return w;
}

WignerMatrix wigner_matrix(const MixedState& s, const PhaseGrid& pg, const WignerOpts& opts) {
  if (!s.grid.same_shape(pg.x)) fail(Stage::wigner, "phase grid does not match state grid");
  WignerMatrix W;
  W.pg = pg;
  for (int e = 0; e < 4; ++e) W.F[e].assign(pg.size(), cplx(0.0, 0.0));
  const std::size_t nxi = pg.xi_size();

  const int comp_of[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (int e = 0; e < 4; ++e) {
    transform_members(s, pg, opts, comp_of[e][0], comp_of[e][1],
                      [&](std::size_t x0, int rows, const cplx* data, double weight) {
                        for (int r = 0; r < rows; ++r) {
                          cplx* dst = W.F[e].data() + (x0 + r) * nxi;
                          const cplx* src = data + static_cast<std::size_t>(r) * nxi;
                          for (std::size_t q = 0; q < nxi; ++q) dst[q] += weight * src[q];
                        }
                      });
  }
  double herm = 0.0;
  for (std::size_t i = 0; i < W.F[0].size(); ++i) {
    herm = std::max(herm, std::abs(W.F[0][i].imag()));
    herm = std::max(herm, std::abs(W.F[3][i].imag()));
    herm = std::max(herm, std::abs(W.F[1][i] - std::conj(W.F[2][i])));
  }
  W.herm_residue = herm;
  return W;
}

WignerFunction trace(const WignerMatrix& F) {
  WignerFunction w;
  w.pg = F.pg;
  w.f.resize(F.pg.size());
  double max_im = 0.0;
  for (std::size_t i = 0; i < w.f.size(); ++i) {
    const cplx t = F.F[0][i] + F.F[3][i];
    w.f[i] = t.real();
    max_im = std::max(max_im, std::abs(t.imag()));
  }
  w.imag_residue = max_im;
  return w;
}

// ---------------------------------------------------------------------------
// Husimi smoothing.

namespace {

// Batched transform along the xi block for chunks of x rows; multiplier is a
// complex factor per xi-flat index evaluated once.
void xi_roundtrip(WignerFunction& w, const std::vector<cplx>& mult) {
  const PhaseGrid& pg = w.pg;
  const std::size_t nx = pg.x.size(), nxi = pg.xi_size();
  std::array<int, 3> dims;
  for (int a = 0; a < pg.x.d; ++a) dims[a] = pg.n_y[a];
  std::vector<cplx> chunk(static_cast<std::size_t>(kChunkRows) * nxi);
  const double inv = 1.0 / static_cast<double>(nxi);
  for (std::size_t x0 = 0; x0 < nx; x0 += kChunkRows) {
    const int rows = static_cast<int>(std::min<std::size_t>(kChunkRows, nx - x0));
    for (int r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < nxi; ++q)
        chunk[r * nxi + q] = cplx(w.f[(x0 + r) * nxi + q], 0.0);
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), rows, chunk.data(), 1);
    for (int r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < nxi; ++q) chunk[r * nxi + q] *= mult[q] * inv;
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), rows, chunk.data(), -1);
    for (int r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < nxi; ++q) w.f[(x0 + r) * nxi + q] = chunk[r * nxi + q].real();
  }
}

// Same along the x block (strided gather/scatter), multiplier per x-flat index.
void x_roundtrip(WignerFunction& w, const std::vector<cplx>& mult) {
  const PhaseGrid& pg = w.pg;
  const std::size_t nx = pg.x.size(), nxi = pg.xi_size();
  std::array<int, 3> dims;
  for (int a = 0; a < pg.x.d; ++a) dims[a] = pg.x.n[a];
  const std::size_t cols = std::min<std::size_t>(kChunkRows, nxi);
  std::vector<cplx> buf(cols * nx);
  const double inv = 1.0 / static_cast<double>(nx);
  for (std::size_t q0 = 0; q0 < nxi; q0 += cols) {
    const std::size_t nc = std::min(cols, nxi - q0);
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t xf = 0; xf < nx; ++xf)
        buf[c * nx + xf] = cplx(w.f[xf * nxi + q0 + c], 0.0);
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), static_cast<int>(nc), buf.data(), -1);
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t xf = 0; xf < nx; ++xf) buf[c * nx + xf] *= mult[xf] * inv;
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), static_cast<int>(nc), buf.data(), 1);
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t xf = 0; xf < nx; ++xf) w.f[xf * nxi + q0 + c] = buf[c * nx + xf].real();
  }
}

}  // namespace

WignerFunction husimi(const WignerFunction& f, const HusimiOpts& opts) {
  const PhaseGrid& pg = f.pg;
  const double hb = pg.hbar;

  if (opts.xi_direction) {
    double ximin = pg.Xi[0];
    double dximax = 0.0;
    for (int a = 0; a < pg.x.d; ++a) {
      ximin = std::min(ximin, pg.Xi[a]);
      dximax = std::max(dximax, pg.dxi[a]);
    }
    if (std::exp(-(0.5 * ximin) * (0.5 * ximin) / hb) > opts.tail_tol)
      fail(Stage::wigner, "Husimi kernel tail above tolerance at the momentum box edge");
    if (std::exp(-hb * (kPi / dximax) * (kPi / dximax) / 4.0) > opts.tail_tol)
      fail(Stage::wigner, "Husimi kernel under-resolved on the momentum grid");
  }
  if (opts.x_direction) {
    double lmin = pg.x.L[0], hmax = 0.0;
    for (int a = 0; a < pg.x.d; ++a) {
      lmin = std::min(lmin, pg.x.L[a]);
      hmax = std::max(hmax, pg.x.h[a]);
    }
    if (std::exp(-(0.5 * lmin) * (0.5 * lmin) / hb) > opts.tail_tol)
      fail(Stage::wigner, "Husimi kernel tail above tolerance at the box edge");
    if (std::exp(-hb * (kPi / hmax) * (kPi / hmax) / 4.0) > opts.tail_tol)
      fail(Stage::wigner, "Husimi kernel under-resolved on the spatial grid");
  }

  WignerFunction out = f;
  if (opts.xi_direction) {
    const auto M = xi_kernel_multipliers(pg);
    std::vector<cplx> mult(pg.xi_size());
    XiCounter ct{&pg};
    ct.reset();
    for (std::size_t q = 0; q < mult.size(); ++q, ct.advance()) {
      double v = 1.0;
      for (int a = 0; a < pg.x.d; ++a) v *= M[a][ct.l[a]];
      mult[q] = cplx(v, 0.0);
    }
    xi_roundtrip(out, mult);
  }
  if (opts.x_direction) {
    const auto M = x_kernel_multipliers(pg);
    std::vector<cplx> mult(pg.x.size());
    std::array<int, 3> idx{0, 0, 0};
    for (std::size_t xf = 0; xf < mult.size(); ++xf) {
      double v = 1.0;
      for (int a = 0; a < pg.x.d; ++a) v *= M[a][idx[a]];
      mult[xf] = cplx(v, 0.0);
      for (int a = pg.x.d - 1; a >= 0; --a) {
        if (++idx[a] < pg.x.n[a]) break;
        idx[a] = 0;
      }
    }
    x_roundtrip(out, mult);
  }
  return out;
}

// ---------------------------------------------------------------------------

ScalarField moment_density(const WignerFunction& f) {
  ScalarField rho(f.pg.x);
  const std::size_t nxi = f.pg.xi_size();
  const double cell = f.pg.xi_cell();
  for (std::size_t xf = 0; xf < rho.v.size(); ++xf) {
    double s = 0.0;
    const double* row = f.f.data() + xf * nxi;
    for (std::size_t q = 0; q < nxi; ++q) s += row[q];
    rho.v[xf] = cplx(s * cell, 0.0);
  }
  return rho;
}

double total_mass(const WignerFunction& f) { return integral_real(moment_density(f)); }

double min_value(const WignerFunction& f) {
  double m = f.f.empty() ? 0.0 : f.f[0];
  for (double v : f.f) m = std::min(m, v);
  return m;
}

VectorField moment_current(const WignerMatrix& F, const FieldSet& fields) {
  const PhaseGrid& pg = F.pg;
  const Grid& xg = pg.x;
  if (xg.d < 2) fail(Stage::wigner, "current moment needs d >= 2");
  if (!fields.grid.same_shape(xg)) fail(Stage::wigner, "field grid mismatch");
  const std::size_t nxi = pg.xi_size();
  const double cell = pg.xi_cell();

  VectorField J(xg);
  std::vector<double> xi_axis_val(nxi);
  for (int xf = 0; xf < static_cast<int>(xg.size()); ++xf) {
    // first moments m_a = int (xi_a - A_a) F dxi, 2x2 each
    std::array<std::array<cplx, 4>, 3> mom{};
    for (int a = 0; a < xg.d; ++a) {
      XiCounter ct{&pg};
      ct.reset();
      const double Aa = fields.has_A ? fields.A.comp[a][xf] : 0.0;
      std::array<cplx, 4> acc{};
      for (std::size_t q = 0; q < nxi; ++q, ct.advance()) {
        const double xv = pg.xi[a][ct.l[a]] - Aa;
        for (int e = 0; e < 4; ++e) acc[e] += xv * F.F[e][xf * nxi + q];
      }
      for (int e = 0; e < 4; ++e) mom[a][e] = acc[e] * cell;
    }
    // N = sum_a sigma_a m_a
    std::array<cplx, 4> N{};
    // sigma_1 m: rows swapped
    N[0] += mom[0][2]; N[1] += mom[0][3]; N[2] += mom[0][0]; N[3] += mom[0][1];
    if (xg.d >= 2) {  // sigma_2 m
      N[0] += cplx(0, -1) * mom[1][2];
      N[1] += cplx(0, -1) * mom[1][3];
      N[2] += cplx(0, 1) * mom[1][0];
      N[3] += cplx(0, 1) * mom[1][1];
    }
    if (xg.d >= 3) {  // sigma_3 m
      N[0] += mom[2][0]; N[1] += mom[2][1]; N[2] -= mom[2][2]; N[3] -= mom[2][3];
    }
    // J_k = Re Tr(sigma_k N)
    J.comp[0][xf] = (N[2] + N[1]).real();
    if (xg.d >= 2) J.comp[1][xf] = (cplx(0, -1) * N[2] + cplx(0, 1) * N[1]).real();
    if (xg.d >= 3) J.comp[2][xf] = (N[0] - N[3]).real();
  }
  return J;
}

// ---------------------------------------------------------------------------
// theta / beta operators in the y representation.

namespace {

// Round trip over the momentum block with a per-(x, y) complex multiplier.
// Mul: (x flat, per-axis l indices, xi-flat) -> cplx
template <typename Mul>
void y_multiplier_roundtrip(const PhaseGrid& pg, const std::vector<double>& in,
                            std::vector<double>& out, double& imag_residue, Mul&& mul) {
  const std::size_t nx = pg.x.size(), nxi = pg.xi_size();
  std::array<int, 3> dims;
  for (int a = 0; a < pg.x.d; ++a) dims[a] = pg.n_y[a];
  std::vector<cplx> row(nxi);
  const double inv = 1.0 / static_cast<double>(nxi);
  double max_im = 0.0;
  out.assign(nx * nxi, 0.0);
  for (std::size_t xf = 0; xf < nx; ++xf) {
    for (std::size_t q = 0; q < nxi; ++q) row[q] = cplx(in[xf * nxi + q], 0.0);
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), 1, row.data(), 1);
    XiCounter ct{&pg};
    ct.reset();
    for (std::size_t q = 0; q < nxi; ++q, ct.advance())
      row[q] *= mul(xf, ct.l, q) * inv;
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), 1, row.data(), -1);
    for (std::size_t q = 0; q < nxi; ++q) {
      out[xf * nxi + q] = row[q].real();
      max_im = std::max(max_im, std::abs(row[q].imag()));
    }
  }
  imag_residue = max_im;
}

// complex-valued variant for matrix components
template <typename Mul>
void y_multiplier_roundtrip_c(const PhaseGrid& pg, const std::vector<cplx>& in,
                              std::vector<cplx>& out, Mul&& mul) {
  const std::size_t nx = pg.x.size(), nxi = pg.xi_size();
  std::array<int, 3> dims;
  for (int a = 0; a < pg.x.d; ++a) dims[a] = pg.n_y[a];
  std::vector<cplx> row(nxi);
  const double inv = 1.0 / static_cast<double>(nxi);
  out.assign(nx * nxi, cplx(0.0, 0.0));
  for (std::size_t xf = 0; xf < nx; ++xf) {
    for (std::size_t q = 0; q < nxi; ++q) row[q] = in[xf * nxi + q];
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), 1, row.data(), 1);
    XiCounter ct{&pg};
    ct.reset();
    for (std::size_t q = 0; q < nxi; ++q, ct.advance())
      row[q] *= mul(xf, ct.l, q) * inv;
    fft_blocks(std::span<const int>(dims.data(), pg.x.d), 1, row.data(), -1);
    for (std::size_t q = 0; q < nxi; ++q) out[xf * nxi + q] = row[q];
  }
}

// Symbol values at the shifted points x +/- hbar y / 2, either from a grid
// field (band-limited upsampling) or from a callable on unwrapped coordinates.
class ShiftedSymbol {
public:
  ShiftedSymbol(const ScalarField& g, const PhaseGrid& pg) : pg_(pg) {
    if (!g.grid.same_shape(pg.x)) fail(Stage::wigner, "symbol grid mismatch");
    fx_.build(pg);
    fine_vals_ = spectral_upsample(g, 2 * pg.pad).v;
    grid_mode_ = true;
  }
  ShiftedSymbol(const SymbolFn& g, const PhaseGrid& pg) : pg_(pg), fn_(g) {
    grid_mode_ = false;
  }

  // plus/minus values for the (x flat, per-axis l) sample
  std::pair<double, double> at(std::size_t xf, const std::array<int, 3>& l) const {
    const Grid& xg = pg_.x;
    if (grid_mode_) {
      const auto xi_idx = xg.unflat(xf);
      std::size_t ip = 0, im = 0;
      for (int a = 0; a < xg.d; ++a) {
        const std::size_t off = static_cast<std::size_t>(xi_idx[a]) * pg_.n_y[a] + l[a];
        ip += fx_.axis[a].plus[off];
        im += fx_.axis[a].minus[off];
      }
      return {fine_vals_[ip].real(), fine_vals_[im].real()};
    }
    const auto xi_idx = xg.unflat(xf);
    std::array<double, 3> xp{0.0, 0.0, 0.0}, xm{0.0, 0.0, 0.0};
    for (int a = 0; a < xg.d; ++a) {
      const int ny = pg_.n_y[a];
      const int m = (l[a] < ny / 2) ? l[a] : l[a] - ny;
      const double shift = m * xg.h[a] / (2.0 * pg_.pad);
      const double x = xg.coord(a, xi_idx[a]);
      xp[a] = x + shift;
      xm[a] = x - shift;
    }
    return {fn_(xp), fn_(xm)};
  }

private:
  PhaseGrid pg_;
  FineIndexer fx_;
  std::vector<cplx> fine_vals_;
  SymbolFn fn_;
  bool grid_mode_ = true;
};

WignerFunction apply_theta_impl(const ShiftedSymbol& sym, const WignerFunction& F) {
  WignerFunction out;
  out.pg = F.pg;
  const double hb = F.pg.hbar;
  y_multiplier_roundtrip(F.pg, F.f, out.f, out.imag_residue,
                         [&](std::size_t xf, const std::array<int, 3>& l, std::size_t) {
                           const auto [gp, gm] = sym.at(xf, l);
                           return cplx(0.0, (gp - gm) / hb);
                         });
  return out;
}

}  // namespace

WignerFunction apply_theta(const ScalarField& g, const WignerFunction& F) {
  return apply_theta_impl(ShiftedSymbol(g, F.pg), F);
}

WignerFunction apply_theta(const SymbolFn& g, const WignerFunction& F) {
  return apply_theta_impl(ShiftedSymbol(g, F.pg), F);
}

WignerMatrix apply_theta(const ScalarField& g, const WignerMatrix& F) {
  WignerMatrix out;
  out.pg = F.pg;
  ShiftedSymbol sym(g, F.pg);
  const double hb = F.pg.hbar;
  for (int e = 0; e < 4; ++e)
    y_multiplier_roundtrip_c(F.pg, F.F[e], out.F[e],
                             [&](std::size_t xf, const std::array<int, 3>& l, std::size_t) {
                               const auto [gp, gm] = sym.at(xf, l);
                               return cplx(0.0, (gp - gm) / hb);
                             });
  return out;
}

WignerFunction xi_derivative(const WignerFunction& F, int axis) {
  if (axis < 0 || axis >= F.pg.x.d) fail(Stage::wigner, "xi axis out of range");
  WignerFunction out;
  out.pg = F.pg;
  y_multiplier_roundtrip(F.pg, F.f, out.f, out.imag_residue,
                         [&](std::size_t, const std::array<int, 3>& l, std::size_t) {
                           const int ny = F.pg.n_y[axis];
                           const int m = (l[axis] < ny / 2) ? l[axis] : l[axis] - ny;
                           if (m == -ny / 2) return cplx(0.0, 0.0);
                           return cplx(0.0, -m * F.pg.dy[axis]);
                         });
  return out;
}

WignerFunction x_derivative(const WignerFunction& F, int axis) {
  if (axis < 0 || axis >= F.pg.x.d) fail(Stage::wigner, "x axis out of range");
  WignerFunction out = F;
  const PhaseGrid& pg = F.pg;
  std::vector<cplx> mult(pg.x.size());
  std::array<int, 3> idx{0, 0, 0};
  for (std::size_t xf = 0; xf < mult.size(); ++xf) {
    const int i = idx[axis];
    const double k = (i == pg.x.n[axis] / 2) ? 0.0 : pg.x.k[axis][i];
    mult[xf] = cplx(0.0, k);
    for (int a = pg.x.d - 1; a >= 0; --a) {
      if (++idx[a] < pg.x.n[a]) break;
      idx[a] = 0;
    }
  }
  x_roundtrip(out, mult);
  return out;
}

// ---------------------------------------------------------------------------
// Phase-space equation residual.

namespace {

struct Mat2 {
  cplx a, b, c, d;  // row-major
};

Mat2 sigma_dot(double bx, double by, double bz) {
  return {cplx(bz, 0.0), cplx(bx, -by), cplx(bx, by), cplx(-bz, 0.0)};
}

}  // namespace

std::vector<double> pauli_wigner_residual(const std::vector<WignerMatrix>& F_traj,
                                          const FieldSet& fields,
                                          const std::vector<ScalarField>& V_traj,
                                          double hbar, double dt) {
  if (F_traj.size() < 3) fail(Stage::wigner, "residual needs at least 3 snapshots");
  if (!(dt > 0.0)) fail(Stage::wigner, "snapshot spacing must be positive");
  const PhaseGrid& pg = F_traj[0].pg;
  const Grid& xg = pg.x;
  const std::size_t nx = xg.size(), nxi = pg.xi_size();
  const double hb = hbar;

  // total electric potential per snapshot
  auto total_V = [&](std::size_t i) {
    ScalarField V(xg);
    if (i < V_traj.size() && !V_traj[i].v.empty())
      for (std::size_t p = 0; p < V.v.size(); ++p) V.v[p] = V_traj[i].v[p];
    if (fields.has_V_ext)
      for (std::size_t p = 0; p < V.v.size(); ++p) V.v[p] += fields.V_ext.v[p];
    return V;
  };

  auto frob2 = [&](const std::array<std::vector<cplx>, 4>& M) {
    double s = 0.0;
    for (int e = 0; e < 4; ++e)
      for (const auto& z : M[e]) s += std::norm(z);
    return s;
  };

  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < F_traj.size(); ++i) {
    const WignerMatrix& F = F_traj[i];
    std::array<std::vector<cplx>, 4> S;
    for (int e = 0; e < 4; ++e) S[e].assign(nx * nxi, cplx(0.0, 0.0));

    // transport xi . grad_x F
    for (int e = 0; e < 4; ++e) {
      for (int a = 0; a < xg.d; ++a) {
        // spectral x derivative of component e (strided transform)
        std::vector<cplx> buf = F.F[e];
        {
          std::array<int, 3> dims;
          for (int b = 0; b < xg.d; ++b) dims[b] = xg.n[b];
          std::vector<cplx> cols(nx);
          for (std::size_t q = 0; q < nxi; ++q) {
            for (std::size_t xf = 0; xf < nx; ++xf) cols[xf] = F.F[e][xf * nxi + q];
            fft_blocks(std::span<const int>(dims.data(), xg.d), 1, cols.data(), -1);
            std::array<int, 3> idx{0, 0, 0};
            for (std::size_t xf = 0; xf < nx; ++xf) {
              const int ii = idx[a];
              const double k = (ii == xg.n[a] / 2) ? 0.0 : xg.k[a][ii];
              cols[xf] *= cplx(0.0, k) / static_cast<double>(nx);
              for (int b = xg.d - 1; b >= 0; --b) {
                if (++idx[b] < xg.n[b]) break;
                idx[b] = 0;
              }
            }
            fft_blocks(std::span<const int>(dims.data(), xg.d), 1, cols.data(), 1);
            for (std::size_t xf = 0; xf < nx; ++xf) buf[xf * nxi + q] = cols[xf];
          }
        }
        // multiply by xi_a and accumulate; also the beta[A] convection term
        if (fields.has_A) {
          ScalarField Aa(xg);
          for (std::size_t p = 0; p < nx; ++p) Aa.v[p] = cplx(fields.A.comp[a][p], 0.0);
          ShiftedSymbol sym(Aa, pg);
          std::vector<cplx> conv;
          y_multiplier_roundtrip_c(pg, buf, conv,
                                   [&](std::size_t xf, const std::array<int, 3>& l,
                                       std::size_t) {
                                     const auto [gp, gm] = sym.at(xf, l);
                                     return cplx(0.5 * (gp + gm), 0.0);
                                   });
          for (std::size_t p = 0; p < nx * nxi; ++p) S[e][p] -= conv[p];
        }
        XiCounter ct{&pg};
        for (std::size_t xf = 0; xf < nx; ++xf) {
          ct.reset();
          for (std::size_t q = 0; q < nxi; ++q, ct.advance())
            S[e][xf * nxi + q] += pg.xi[a][ct.l[a]] * buf[xf * nxi + q];
        }
      }
    }

    // - theta[A] . (xi F) + theta[|A|^2] F / 2
    if (fields.has_A) {
      ScalarField A2(xg);
      for (std::size_t p = 0; p < nx; ++p) {
        double s2 = 0.0;
        for (int a = 0; a < xg.d; ++a) s2 += fields.A.comp[a][p] * fields.A.comp[a][p];
        A2.v[p] = cplx(s2, 0.0);
      }
      ShiftedSymbol symA2(A2, pg);
      for (int e = 0; e < 4; ++e) {
        for (int a = 0; a < xg.d; ++a) {
          ScalarField Aa(xg);
          for (std::size_t p = 0; p < nx; ++p) Aa.v[p] = cplx(fields.A.comp[a][p], 0.0);
          ShiftedSymbol sym(Aa, pg);
          std::vector<cplx> xiF(nx * nxi);
          XiCounter ct{&pg};
          for (std::size_t xf = 0; xf < nx; ++xf) {
            ct.reset();
            for (std::size_t q = 0; q < nxi; ++q, ct.advance())
              xiF[xf * nxi + q] = pg.xi[a][ct.l[a]] * F.F[e][xf * nxi + q];
          }
          std::vector<cplx> th;
          y_multiplier_roundtrip_c(pg, xiF, th,
                                   [&](std::size_t xf, const std::array<int, 3>& l,
                                       std::size_t) {
                                     const auto [gp, gm] = sym.at(xf, l);
                                     return cplx(0.0, (gp - gm) / hb);
                                   });
          for (std::size_t p = 0; p < nx * nxi; ++p) S[e][p] -= th[p];
        }
        std::vector<cplx> th2;
        y_multiplier_roundtrip_c(pg, F.F[e], th2,
                                 [&](std::size_t xf, const std::array<int, 3>& l, std::size_t) {
                                   const auto [gp, gm] = symA2.at(xf, l);
                                   return cplx(0.0, (gp - gm) / hb);
                                 });
        for (std::size_t p = 0; p < nx * nxi; ++p) S[e][p] += 0.5 * th2[p];
      }
    }

    // Stern-Gerlach, matrix ordered: -(hbar/2) (i/hbar)(sB(x+) T - T sB(x-))
    if (fields.has_B && xg.d >= 2) {
      ScalarField Bzf(xg);
      std::array<ScalarField, 3> Bf;
      std::vector<ShiftedSymbol> syms;
      if (xg.d == 2) {
        syms.emplace_back(fields.Bz, pg);
      } else {
        for (int a = 0; a < 3; ++a) {
          Bf[a] = ScalarField(xg);
          for (std::size_t p = 0; p < nx; ++p) Bf[a].v[p] = cplx(fields.Bvec.comp[a][p], 0.0);
          syms.emplace_back(Bf[a], pg);
        }
      }
      // transform all four components to the y representation once
      std::array<std::vector<cplx>, 4> Ty;
      std::array<int, 3> dims;
      for (int b = 0; b < xg.d; ++b) dims[b] = pg.n_y[b];
      for (int e = 0; e < 4; ++e) {
        Ty[e] = F.F[e];
        for (std::size_t xf = 0; xf < nx; ++xf)
          fft_blocks(std::span<const int>(dims.data(), xg.d), 1, Ty[e].data() + xf * nxi, 1);
      }
      const double inv = 1.0 / static_cast<double>(nxi);
      for (std::size_t xf = 0; xf < nx; ++xf) {
        XiCounter ct{&pg};
        ct.reset();
        for (std::size_t q = 0; q < nxi; ++q, ct.advance()) {
          Mat2 sp{}, sm{};
          if (xg.d == 2) {
            const auto [bp, bm] = syms[0].at(xf, ct.l);
            sp = sigma_dot(0.0, 0.0, bp);
            sm = sigma_dot(0.0, 0.0, bm);
          } else {
            const auto [bxp, bxm] = syms[0].at(xf, ct.l);
            const auto [byp, bym] = syms[1].at(xf, ct.l);
            const auto [bzp, bzm] = syms[2].at(xf, ct.l);
            sp = sigma_dot(bxp, byp, bzp);
            sm = sigma_dot(bxm, bym, bzm);
          }
          const std::size_t p = xf * nxi + q;
          const Mat2 T{Ty[0][p], Ty[1][p], Ty[2][p], Ty[3][p]};
          // (i/hbar)(sp T - T sm), scaled by -(hbar/2) -> -(i/2)(sp T - T sm)
          const cplx fac(0.0, -0.5);
          Ty[0][p] = fac * (sp.a * T.a + sp.b * T.c - (T.a * sm.a + T.b * sm.c)) * inv;
          Ty[1][p] = fac * (sp.a * T.b + sp.b * T.d - (T.a * sm.b + T.b * sm.d)) * inv;
          Ty[2][p] = fac * (sp.c * T.a + sp.d * T.c - (T.c * sm.a + T.d * sm.c)) * inv;
          Ty[3][p] = fac * (sp.c * T.b + sp.d * T.d - (T.c * sm.b + T.d * sm.d)) * inv;
        }
      }
      for (int e = 0; e < 4; ++e) {
        for (std::size_t xf = 0; xf < nx; ++xf)
          fft_blocks(std::span<const int>(dims.data(), xg.d), 1, Ty[e].data() + xf * nxi, -1);
        for (std::size_t p = 0; p < nx * nxi; ++p) S[e][p] += Ty[e][p];
      }
    }

    // + theta[V] F
    {
      ScalarField V = total_V(i);
      ShiftedSymbol sym(V, pg);
      for (int e = 0; e < 4; ++e) {
        std::vector<cplx> th;
        y_multiplier_roundtrip_c(pg, F.F[e], th,
                                 [&](std::size_t xf, const std::array<int, 3>& l, std::size_t) {
                                   const auto [gp, gm] = sym.at(xf, l);
                                   return cplx(0.0, (gp - gm) / hb);
                                 });
        for (std::size_t p = 0; p < nx * nxi; ++p) S[e][p] += th[p];
      }
    }

    // central time derivative and residual norm
    std::array<std::vector<cplx>, 4> R;
    double dt_norm2 = 0.0;
    for (int e = 0; e < 4; ++e) {
      R[e].resize(nx * nxi);
      for (std::size_t p = 0; p < nx * nxi; ++p) {
        const cplx dF = (F_traj[i + 1].F[e][p] - F_traj[i - 1].F[e][p]) / (2.0 * dt);
        dt_norm2 += std::norm(dF);
        R[e][p] = dF + S[e][p];
      }
    }
    const double s_norm = std::sqrt(frob2(S));
    const double r_norm = std::sqrt(frob2(R));
    const double den = std::max({std::sqrt(dt_norm2), s_norm, 1e-300});
    out.push_back(r_norm / den);
  }
  return out;
}

// ---------------------------------------------------------------------------

OscillatoryTail oscillatory_tail(const MixedState& s, double R) {
  if (!(R > 0.0)) fail(Stage::wigner, "cutoff must be positive");
  const Grid& g = s.grid;
  const std::size_t total = g.size();
  const double kcut = R / s.hbar;
  double vol = 1.0;
  for (int a = 0; a < g.d; ++a) vol *= g.L[a];

  OscillatoryTail t;
  std::vector<cplx> spec(total);
  for (int j = 0; j < s.n_members(); ++j) {
    for (int c = 0; c < 2; ++c) {
      fft_forward(g, s.members[j].c[c], spec);
      std::array<int, 3> idx{0, 0, 0};
      for (std::size_t fl = 0; fl < total; ++fl) {
        double k2 = 0.0;
        for (int a = 0; a < g.d; ++a) k2 += g.k[a][idx[a]] * g.k[a][idx[a]];
        const double m = std::norm(spec[fl]) * vol;
        if (k2 >= kcut * kcut) t.tail += s.lambda[j] * m;
        t.companion += s.lambda[j] * s.hbar * s.hbar * k2 * m;
        for (int a = g.d - 1; a >= 0; --a) {
          if (++idx[a] < g.n[a]) break;
          idx[a] = 0;
        }
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

double TestFunction::eval(const std::array<double, 3>& x, const std::array<double, 3>& xi) const {
  double e = 0.0;
  for (int a = 0; a < d; ++a) {
    double dx = x[a] - x0[a];
    if (wrapL[a] > 0.0) {
      dx = std::fmod(dx, wrapL[a]);
      if (dx > 0.5 * wrapL[a]) dx -= wrapL[a];
      if (dx < -0.5 * wrapL[a]) dx += wrapL[a];
    }
    const double dxi = xi[a] - xi0[a];
    e += dx * dx / (2.0 * width_x * width_x) + dxi * dxi / (2.0 * width_xi * width_xi);
  }
  return std::exp(-e);
}

double pair_against(const WignerFunction& f, const TestFunction& phi,
                    const VectorField* shift_A) {
  const PhaseGrid& pg = f.pg;
  const Grid& xg = pg.x;
  if (phi.d != xg.d) fail(Stage::wigner, "test function dimension mismatch");

  // support check: Gaussian xi mass outside the momentum box
  for (int a = 0; a < xg.d; ++a) {
    const double half = 0.5 * pg.Xi[a];
    const double b = phi.width_xi;
    const double out_mass = 0.5 * (std::erfc((half - phi.xi0[a]) / (std::sqrt(2.0) * b)) +
                                   std::erfc((half + phi.xi0[a]) / (std::sqrt(2.0) * b)));
    if (out_mass > 1e-8)
      fail(Stage::wigner, "test function support outside the momentum box (mass " +
                              std::to_string(out_mass) + ")");
  }

  const std::size_t nxi = pg.xi_size();
  double acc = 0.0;
  std::array<int, 3> xidx{0, 0, 0};
  for (std::size_t xf = 0; xf < xg.size(); ++xf) {
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < xg.d; ++a) x[a] = xg.coord(a, xidx[a]);
    std::array<double, 3> Ax{0.0, 0.0, 0.0};
    if (shift_A)
      for (int a = 0; a < xg.d; ++a) Ax[a] = shift_A->comp[a][xf];
    XiCounter ct{&pg};
    ct.reset();
    const double* row = f.f.data() + xf * nxi;
    for (std::size_t q = 0; q < nxi; ++q, ct.advance()) {
      std::array<double, 3> xi{0.0, 0.0, 0.0};
      for (int a = 0; a < xg.d; ++a) xi[a] = pg.xi[a][ct.l[a]] - Ax[a];
      acc += row[q] * phi.eval(x, xi);
    }
    for (int a = xg.d - 1; a >= 0; --a) {
      if (++xidx[a] < xg.n[a]) break;
      xidx[a] = 0;
    }
  }
  return acc * xg.cell_volume() * pg.xi_cell();
}

}  // namespace pwps
