#include "pwps/quantum.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace pwps {

namespace {

constexpr double kWeightSumTol = 1e-12;
constexpr double kNormTol = 1e-10;

}  // namespace

double admissibility_value(const MixedState& s) {
  double sum2 = 0.0;
  for (double l : s.lambda) sum2 += l * l;
  return std::pow(s.hbar, -s.grid.d) * sum2;
}

MixedState make_mixed_state(const Grid& grid, double hbar, double C,
                            std::vector<double> lambda, std::vector<SpinorField> members) {
  if (!(hbar > 0.0 && hbar <= 1.0)) fail(Stage::quantum, "hbar must lie in (0, 1]");
  if (lambda.size() != members.size() || lambda.empty())
    fail(Stage::quantum, "weights and members must match and be nonempty");
  double sum = 0.0;
  for (double l : lambda) {
    if (l < 0.0) fail(Stage::quantum, "negative occupation weight");
    sum += l;
  }
  if (std::abs(sum - 1.0) > kWeightSumTol)
    fail(Stage::quantum, "occupation weights must sum to 1");
  for (const auto& u : members) {
    if (!u.grid.same_shape(grid)) fail(Stage::quantum, "member grid mismatch");
    if (std::abs(l2_norm(u) - 1.0) > kNormTol)
      fail(Stage::quantum, "member not normalized");
  }
  MixedState s;
  s.hbar = hbar;
  s.grid = grid;
  s.C = C;
  s.lambda = std::move(lambda);
  s.members = std::move(members);
  const double val = admissibility_value(s);
  if (val > C * (1.0 + 1e-12))
    fail(Stage::quantum, "admissibility violated: hbar^-d sum lambda^2 = " +
                             std::to_string(val) + " > C = " + std::to_string(C));
  return s;
}

SpinorField coherent_state(const Grid& grid, double hbar, std::span<const double> x0,
                           std::span<const double> p0, double sigma,
                           const std::array<cplx, 2>& chi) {
  if (!(sigma > 0.0)) fail(Stage::quantum, "coherent state width must be positive");
  for (int a = 0; a < grid.d; ++a)
    if (sigma < 3.0 * grid.h[a])
      fail(Stage::quantum, "coherent state under-resolved: sigma < 3h");
  const double chin = std::sqrt(std::norm(chi[0]) + std::norm(chi[1]));
  if (chin == 0.0) fail(Stage::quantum, "spin vector must be nonzero");

  // snap momentum to the hbar * (2 pi / L) lattice
  std::array<double, 3> p{0.0, 0.0, 0.0};
  for (int a = 0; a < grid.d; ++a) {
    const double unit = hbar * kTwoPi / grid.L[a];
    p[a] = unit * std::round(p0[a] / unit);
  }

  SpinorField u(grid);
  const std::size_t total = grid.size();
  std::array<int, 3> idx{0, 0, 0};
  for (std::size_t fl = 0; fl < total; ++fl) {
    double env = 0.0;
    double phase = 0.0;
    // periodize over neighbour images axis by axis (separable Gaussian)
    double axis_env[3];
    for (int a = 0; a < grid.d; ++a) {
      const double x = grid.coord(a, idx[a]);
      double e = 0.0;
      for (int m = -1; m <= 1; ++m) {
        const double dx = x - x0[a] + m * grid.L[a];
        e += std::exp(-dx * dx / (2.0 * sigma * sigma));
      }
      axis_env[a] = e;
      phase += p[a] * x / hbar;
    }
    env = 1.0;
    for (int a = 0; a < grid.d; ++a) env *= axis_env[a];
    const cplx val = env * std::polar(1.0, phase);
    u.c[0][fl] = val * (chi[0] / chin);
    u.c[1][fl] = val * (chi[1] / chin);
    for (int a = grid.d - 1; a >= 0; --a) {
      if (++idx[a] < grid.n[a]) break;
      idx[a] = 0;
    }
  }
  const double nrm = l2_norm(u);
  if (nrm == 0.0) fail(Stage::quantum, "coherent state vanished");
  for (int c = 0; c < 2; ++c)
    for (auto& z : u.c[c]) z /= nrm;
  return u;
}

MixedState build_mixed_state(const Grid& grid, double hbar, double C, PhaseSampler& sampler,
                             const std::array<cplx, 2>& chi, double sigma) {
  if (!(C >= 1.0)) fail(Stage::quantum, "admissibility constant must be >= 1");
  const double hd = std::pow(hbar, -grid.d);
  const int N = static_cast<int>(std::ceil(hd / C - 1e-12));
  std::vector<double> lambda(std::max(N, 1), 1.0 / std::max(N, 1));
  std::vector<SpinorField> members;
  members.reserve(lambda.size());
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    const PhasePoint pt = sampler.next();
    members.push_back(coherent_state(grid, hbar, std::span<const double>(pt.x.data(), grid.d),
                                     std::span<const double>(pt.p.data(), grid.d), sigma, chi));
  }
  return make_mixed_state(grid, hbar, C, std::move(lambda), std::move(members));
}

double gram_deviation(const MixedState& s) {
  const int N = s.n_members();
  double dev = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) {
      const cplx g = inner(s.members[i], s.members[j]);
      const double target = (i == j) ? 1.0 : 0.0;
      dev = std::max(dev, std::abs(g - target));
    }
  return dev;
}

// ---------------------------------------------------------------------------
// PauliOperator.

PauliOperator::PauliOperator(const FieldSet& fields, const ScalarField& V, double hbar,
                             HamiltonianOpts opts)
    : grid_(fields.grid), hbar_(hbar), opts_(opts) {
  if (max_imag(V) > 1e-12 * (1.0 + linf_norm(V)))
    fail(Stage::quantum, "potential must be real");
  if (!V.grid.same_shape(grid_) && !V.v.empty())
    fail(Stage::quantum, "potential grid mismatch");
  const std::size_t total = grid_.size();

  V_.assign(total, 0.0);
  if (!V.v.empty())
    for (std::size_t i = 0; i < total; ++i) V_[i] = V.v[i].real();
  if (fields.has_V_ext)
    for (std::size_t i = 0; i < total; ++i) V_[i] += fields.V_ext.v[i].real();

  has_A_ = fields.has_A;
  if (has_A_) {
    if (grid_.d == 1) fail(Stage::quantum, "d=1 requires A == 0");
    for (int a = 0; a < grid_.d; ++a) A_[a] = fields.A.comp[a];
    ScalarField dv = divergence(fields.A);
    divA_.resize(total);
    A2_.assign(total, 0.0);
    for (std::size_t i = 0; i < total; ++i) {
      divA_[i] = dv.v[i].real();
      for (int a = 0; a < grid_.d; ++a) A2_[i] += A_[a][i] * A_[a][i];
    }
  }

  if (opts_.include_sg) {
    if (fields.has_b_override) {
      sg_mode_ = 2;
      b_is_uniform_ = true;
      b_uniform_ = fields.b_override;
    } else if (fields.has_B && grid_.d == 2) {
      sg_mode_ = 1;
      Bz_.resize(total);
      for (std::size_t i = 0; i < total; ++i) Bz_[i] = fields.Bz.v[i].real();
    } else if (fields.has_B && grid_.d == 3) {
      sg_mode_ = 2;
      for (int a = 0; a < 3; ++a) Bv_[a] = fields.Bvec.comp[a];
    }
  }
}

SpinorField PauliOperator::apply(const SpinorField& u) const {
  if (!u.grid.same_shape(grid_)) fail(Stage::quantum, "state grid mismatch");
  const std::size_t total = grid_.size();
  SpinorField out(grid_);

  std::vector<cplx> spec(total), lap(total);
  std::array<std::vector<cplx>, 3> grad;
  for (int a = 0; a < grid_.d; ++a) grad[a].resize(total);

  for (int c = 0; c < 2; ++c) {
    fft_forward(grid_, u.c[c], spec);
    // Laplacian
    {
      std::array<int, 3> idx{0, 0, 0};
      for (std::size_t fl = 0; fl < total; ++fl) {
        double k2 = 0.0;
        for (int a = 0; a < grid_.d; ++a) k2 += grid_.k[a][idx[a]] * grid_.k[a][idx[a]];
        lap[fl] = -k2 * spec[fl];
        for (int a = grid_.d - 1; a >= 0; --a) {
          if (++idx[a] < grid_.n[a]) break;
          idx[a] = 0;
        }
      }
      fft_inverse(grid_, lap, lap);
    }
    if (has_A_) {
      for (int a = 0; a < grid_.d; ++a) {
        std::array<int, 3> idx{0, 0, 0};
        for (std::size_t fl = 0; fl < total; ++fl) {
          const int i = idx[a];
          const double k = (i == grid_.n[a] / 2) ? 0.0 : grid_.k[a][i];
          grad[a][fl] = cplx(0.0, k) * spec[fl];
          for (int b = grid_.d - 1; b >= 0; --b) {
            if (++idx[b] < grid_.n[b]) break;
            idx[b] = 0;
          }
        }
        fft_inverse(grid_, grad[a], grad[a]);
      }
    }

    const double h2 = 0.5 * hbar_ * hbar_;
    for (std::size_t i = 0; i < total; ++i) {
      cplx val = -h2 * lap[i] + V_[i] * u.c[c][i];
      if (has_A_) {
        cplx adot(0.0, 0.0);
        for (int a = 0; a < grid_.d; ++a) adot += A_[a][i] * grad[a][i];
        val += cplx(0.0, hbar_) * adot;
        val += cplx(0.0, 0.5 * hbar_ * divA_[i]) * u.c[c][i];
        val += 0.5 * A2_[i] * u.c[c][i];
      }
      out.c[c][i] = val;
    }
  }

  // Stern-Gerlach coupling: -(hbar/2) (sigma . B) u
  if (sg_mode_ == 1) {
    const double f = -0.5 * hbar_;
    for (std::size_t i = 0; i < total; ++i) {
      out.c[0][i] += f * Bz_[i] * u.c[0][i];
      out.c[1][i] -= f * Bz_[i] * u.c[1][i];
    }
  } else if (sg_mode_ == 2) {
    const double f = -0.5 * hbar_;
    for (std::size_t i = 0; i < total; ++i) {
      const double bx = b_is_uniform_ ? b_uniform_[0] : Bv_[0][i];
      const double by = b_is_uniform_ ? b_uniform_[1] : Bv_[1][i];
      const double bz = b_is_uniform_ ? b_uniform_[2] : Bv_[2][i];
      const cplx u0 = u.c[0][i], u1 = u.c[1][i];
      out.c[0][i] += f * (bz * u0 + cplx(bx, -by) * u1);
      out.c[1][i] += f * (cplx(bx, by) * u0 - bz * u1);
    }
  }
  return out;
}

SpinorField PauliOperator::sigma_pi(const SpinorField& u) const {
  // w = sum_a sigma_a (-i hbar d_a - A_a) u, in-plane components for d=2
  const std::size_t total = grid_.size();
  SpinorField w(grid_);
  std::vector<cplx> spec(total), der(total);
  std::array<std::vector<cplx>, 2> pi_u;  // pi_a u for the current component
  const int nax = grid_.d;
  std::array<std::vector<cplx>, 3> pi_by_axis_c0, pi_by_axis_c1;
  for (int a = 0; a < nax; ++a) {
    pi_by_axis_c0[a].resize(total);
    pi_by_axis_c1[a].resize(total);
  }
  for (int c = 0; c < 2; ++c) {
    fft_forward(grid_, u.c[c], spec);
    for (int a = 0; a < nax; ++a) {
      std::array<int, 3> idx{0, 0, 0};
      for (std::size_t fl = 0; fl < total; ++fl) {
        const int i = idx[a];
        const double k = (i == grid_.n[a] / 2) ? 0.0 : grid_.k[a][i];
        der[fl] = cplx(0.0, k) * spec[fl];
        for (int b = grid_.d - 1; b >= 0; --b) {
          if (++idx[b] < grid_.n[b]) break;
          idx[b] = 0;
        }
      }
      fft_inverse(grid_, der, der);
      auto& dst = (c == 0) ? pi_by_axis_c0[a] : pi_by_axis_c1[a];
      for (std::size_t i = 0; i < total; ++i) {
        cplx v = hbar_ * der[i];  // -i hbar d_a u = hbar * (i k) ... times -i
        v = cplx(v.imag(), -v.real());
        if (has_A_) v -= A_[a][i] * u.c[c][i];
        dst[i] = v;
      }
    }
  }
  (void)pi_u;
  // sigma_1 swaps, sigma_2 swaps with phase, sigma_3 diag(1,-1)
  for (std::size_t i = 0; i < total; ++i) {
    cplx w0(0.0, 0.0), w1(0.0, 0.0);
    // axis 0 -> sigma_1
    w0 += pi_by_axis_c1[0][i];
    w1 += pi_by_axis_c0[0][i];
    if (nax >= 2) {  // axis 1 -> sigma_2
      w0 += cplx(0.0, -1.0) * pi_by_axis_c1[1][i];
      w1 += cplx(0.0, 1.0) * pi_by_axis_c0[1][i];
    }
    if (nax >= 3) {  // axis 2 -> sigma_3
      w0 += pi_by_axis_c0[2][i];
      w1 -= pi_by_axis_c1[2][i];
    }
    w.c[0][i] = w0;
    w.c[1][i] = w1;
  }
  return w;
}

SpinorField PauliOperator::apply_pauli_identity(const SpinorField& u) const {
  SpinorField w = sigma_pi(u);
  SpinorField w2 = sigma_pi(w);
  SpinorField out(grid_);
  const std::size_t total = grid_.size();
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < total; ++i)
      out.c[c][i] = 0.5 * w2.c[c][i] + V_[i] * u.c[c][i];
  return out;
}

SpinorField apply_pauli_hamiltonian(const SpinorField& u, const FieldSet& fields,
                                    const ScalarField& V, double hbar, HamiltonianOpts opts) {
  PauliOperator op(fields, V, hbar, opts);
  return op.apply(u);
}

// ---------------------------------------------------------------------------
// Krylov (Lanczos) propagator.

namespace {

// y = exp(-i tau T) e_1 for the real symmetric tridiagonal T (alpha, beta).
Eigen::VectorXcd tridiag_exp_e1(const std::vector<double>& alpha,
                                const std::vector<double>& beta, double tau) {
  const int m = static_cast<int>(alpha.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  Eigen::VectorXd diag(m), sub(std::max(m - 1, 0));
  for (int i = 0; i < m; ++i) diag[i] = alpha[i];
  for (int i = 0; i + 1 < m; ++i) sub[i] = beta[i];
  es.computeFromTridiagonal(diag, sub);
  const Eigen::MatrixXd& Q = es.eigenvectors();
  const Eigen::VectorXd& ev = es.eigenvalues();
  Eigen::VectorXcd y(m);
  for (int i = 0; i < m; ++i) {
    cplx acc(0.0, 0.0);
    for (int l = 0; l < m; ++l)
      acc += Q(i, l) * std::polar(Q(0, l), -tau * ev[l]);
    y[i] = acc;
  }
  return y;
}

void axpy(SpinorField& y, const cplx& a, const SpinorField& x) {
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < y.c[c].size(); ++i) y.c[c][i] += a * x.c[c][i];
}

void scale(SpinorField& y, double a) {
  for (int c = 0; c < 2; ++c)
    for (auto& z : y.c[c]) z *= a;
}

SpinorField krylov_exp(const PauliOperator& op, const SpinorField& u, double dt, double tol,
                       int max_m, int depth) {
  const double beta0 = l2_norm(u);
  if (beta0 == 0.0) return u;
  const double tau = dt / op.hbar();

  std::vector<SpinorField> basis;
  basis.push_back(u);
  scale(basis[0], 1.0 / beta0);
  std::vector<double> alpha, beta;
  Eigen::VectorXcd y;

  for (int j = 0; j < max_m; ++j) {
    SpinorField w = op.apply(basis[j]);
    const double a = inner(basis[j], w).real();
    alpha.push_back(a);
    // full reorthogonalization keeps the basis clean over long steps
    for (int l = static_cast<int>(basis.size()) - 1; l >= 0; --l) {
      const cplx c = inner(basis[l], w);
      axpy(w, -c, basis[l]);
    }
    const double b = l2_norm(w);
    y = tridiag_exp_e1(alpha, beta, tau);
    const double resid = (j + 1 < max_m) ? std::abs(b * y[j]) : std::abs(b * y[j]);
    if (resid < tol || b < 1e-14) {
      SpinorField out(u.grid);
      for (std::size_t l = 0; l < basis.size(); ++l) axpy(out, beta0 * y[l], basis[l]);
      return out;
    }
    if (j + 1 == max_m) break;
    beta.push_back(b);
    scale(w, 1.0 / b);
    basis.push_back(std::move(w));
  }

  // not converged at max_m: split the step
  if (depth >= 8)
    fail(Stage::quantum, "Krylov propagator did not converge within the subspace limit");
  SpinorField half = krylov_exp(op, u, 0.5 * dt, tol, max_m, depth + 1);
  return krylov_exp(op, half, 0.5 * dt, tol, max_m, depth + 1);
}

SpinorField strang_step(const SpinorField& u, const FieldSet& fields, const ScalarField& V,
                        double hbar, double dt, bool include_sg) {
  if (fields.has_A)
    fail(Stage::quantum, "strang stepper requires A == 0");
  const Grid& g = u.grid;
  const std::size_t total = g.size();

  std::vector<double> Vr(total, 0.0);
  if (!V.v.empty())
    for (std::size_t i = 0; i < total; ++i) Vr[i] = V.v[i].real();
  if (fields.has_V_ext)
    for (std::size_t i = 0; i < total; ++i) Vr[i] += fields.V_ext.v[i].real();

  auto potential_half = [&](SpinorField& w) {
    for (std::size_t i = 0; i < total; ++i) {
      const cplx ph = std::polar(1.0, -0.5 * dt * Vr[i] / hbar);
      cplx w0 = w.c[0][i] * ph, w1 = w.c[1][i] * ph;
      if (include_sg && (fields.has_b_override || fields.has_B)) {
        double bx = 0.0, by = 0.0, bz = 0.0;
        if (fields.has_b_override) {
          bx = fields.b_override[0];
          by = fields.b_override[1];
          bz = fields.b_override[2];
        } else if (g.d == 2) {
          bz = fields.Bz.v[i].real();
        } else if (g.d == 3) {
          bx = fields.Bvec.comp[0][i];
          by = fields.Bvec.comp[1][i];
          bz = fields.Bvec.comp[2][i];
        }
        const double bn = std::sqrt(bx * bx + by * by + bz * bz);
        if (bn > 0.0) {
          // exp(+i (dt/4) sigma.B): the hbar in the coupling cancels
          const double th = 0.25 * dt * bn;
          const double cth = std::cos(th), sth = std::sin(th) / bn;
          const cplx n0 = w0, n1 = w1;
          w0 = cth * n0 + cplx(0.0, 1.0) * sth * (bz * n0 + cplx(bx, -by) * n1);
          w1 = cth * n1 + cplx(0.0, 1.0) * sth * (cplx(bx, by) * n0 - bz * n1);
        }
      }
      w.c[0][i] = w0;
      w.c[1][i] = w1;
    }
  };

  SpinorField w = u;
  potential_half(w);
  for (int c = 0; c < 2; ++c) {
    std::vector<cplx> spec(total);
    fft_forward(g, w.c[c], spec);
    std::array<int, 3> idx{0, 0, 0};
    for (std::size_t fl = 0; fl < total; ++fl) {
      double k2 = 0.0;
      for (int a = 0; a < g.d; ++a) k2 += g.k[a][idx[a]] * g.k[a][idx[a]];
      spec[fl] *= std::polar(1.0, -0.5 * hbar * k2 * dt);
      for (int b = g.d - 1; b >= 0; --b) {
        if (++idx[b] < g.n[b]) break;
        idx[b] = 0;
      }
    }
    fft_inverse(g, spec, w.c[c]);
  }
  potential_half(w);
  return w;
}

}  // namespace

SpinorField propagate_member(const SpinorField& u, const FieldSet& fields,
                             const ScalarField& V, double hbar, double dt,
                             const PropagatorOpts& opts) {
  if (!(dt > 0.0)) fail(Stage::quantum, "dt must be positive");
  if (opts.method == "strang") return strang_step(u, fields, V, hbar, dt, opts.include_sg);
  if (opts.method != "krylov") fail(Stage::quantum, "unknown propagator '" + opts.method + "'");
  PauliOperator op(fields, V, hbar, HamiltonianOpts{opts.include_sg});
  return krylov_exp(op, u, dt, opts.krylov_tol, opts.max_krylov, 0);
}

MixedState propagate_step(const MixedState& s, const FieldSet& fields, const ScalarField& V,
                          double dt, const PropagatorOpts& opts) {
  if (!(dt > 0.0)) fail(Stage::quantum, "dt must be positive");
  MixedState out = s;
  if (opts.method == "strang") {
    for (int j = 0; j < s.n_members(); ++j)
      out.members[j] = strang_step(s.members[j], fields, V, s.hbar, dt, opts.include_sg);
    return out;
  }
  PauliOperator op(fields, V, s.hbar, HamiltonianOpts{opts.include_sg});
  for (int j = 0; j < s.n_members(); ++j)
    out.members[j] = krylov_exp(op, s.members[j], dt, opts.krylov_tol, opts.max_krylov, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Observables.

ScalarField density(const MixedState& s) {
  ScalarField rho(s.grid);
  for (int j = 0; j < s.n_members(); ++j) {
    const double l = s.lambda[j];
    for (int c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < rho.v.size(); ++i)
        rho.v[i] += cplx(l * std::norm(s.members[j].c[c][i]), 0.0);
  }
  return rho;
}

std::array<std::vector<double>, 3> spin_density(const MixedState& s) {
  const std::size_t total = s.grid.size();
  std::array<std::vector<double>, 3> sd;
  for (int a = 0; a < 3; ++a) sd[a].assign(total, 0.0);
  for (int j = 0; j < s.n_members(); ++j) {
    const double l = s.lambda[j];
    const auto& u0 = s.members[j].c[0];
    const auto& u1 = s.members[j].c[1];
    for (std::size_t i = 0; i < total; ++i) {
      const cplx cross = std::conj(u0[i]) * u1[i];
      sd[0][i] += l * 2.0 * cross.real();
      sd[1][i] += l * 2.0 * cross.imag();
      sd[2][i] += l * (std::norm(u0[i]) - std::norm(u1[i]));
    }
  }
  return sd;
}

VectorField current_convective(const MixedState& s, const FieldSet& fields) {
  const Grid& g = s.grid;
  const std::size_t total = g.size();
  VectorField J(g);
  std::vector<cplx> spec(total), der(total);
  for (int j = 0; j < s.n_members(); ++j) {
    const double l = s.lambda[j];
    for (int c = 0; c < 2; ++c) {
      fft_forward(g, s.members[j].c[c], spec);
      for (int a = 0; a < g.d; ++a) {
        std::array<int, 3> idx{0, 0, 0};
        for (std::size_t fl = 0; fl < total; ++fl) {
          const int i = idx[a];
          const double k = (i == g.n[a] / 2) ? 0.0 : g.k[a][i];
          der[fl] = cplx(0.0, k) * spec[fl];
          for (int b = g.d - 1; b >= 0; --b) {
            if (++idx[b] < g.n[b]) break;
            idx[b] = 0;
          }
        }
        fft_inverse(g, der, der);
        for (std::size_t i = 0; i < total; ++i) {
          const cplx ubar = std::conj(s.members[j].c[c][i]);
          double contrib = (s.hbar * (ubar * der[i])).imag();
          if (fields.has_A)
            contrib -= fields.A.comp[a][i] * std::norm(s.members[j].c[c][i]);
          J.comp[a][i] += l * contrib;
        }
      }
    }
  }
  return J;
}

namespace {

// in-plane / full curl of the 3-component spin density on the grid
VectorField spin_curl(const Grid& g, const std::array<std::vector<double>, 3>& sd) {
  VectorField out(g);
  auto deriv = [&](const std::vector<double>& fvals, int axis) {
    ScalarField f(g);
    for (std::size_t i = 0; i < fvals.size(); ++i) f.v[i] = cplx(fvals[i], 0.0);
    return spectral_derivative(f, axis);
  };
  if (g.d == 2) {
    ScalarField d2s3 = deriv(sd[2], 1);
    ScalarField d1s3 = deriv(sd[2], 0);
    for (std::size_t i = 0; i < out.comp[0].size(); ++i) {
      out.comp[0][i] = d2s3.v[i].real();
      out.comp[1][i] = -d1s3.v[i].real();
    }
  } else if (g.d == 3) {
    for (int c = 0; c < 3; ++c) {
      const int p = (c + 1) % 3, q = (c + 2) % 3;
      ScalarField dpq = deriv(sd[q], p);
      ScalarField dqp = deriv(sd[p], q);
      for (std::size_t i = 0; i < out.comp[c].size(); ++i)
        out.comp[c][i] = dpq.v[i].real() - dqp.v[i].real();
    }
  }
  return out;
}

}  // namespace

VectorField current(const MixedState& s, const FieldSet& fields) {
  VectorField J = current_convective(s, fields);
  if (s.grid.d == 1) return J;  // curl undefined; flagged by charge_energy
  const auto sd = spin_density(s);
  VectorField curl = spin_curl(s.grid, sd);
  for (int a = 0; a < s.grid.d; ++a)
    for (std::size_t i = 0; i < J.comp[a].size(); ++i)
      J.comp[a][i] -= s.hbar * curl.comp[a][i];
  return J;
}

VectorField current_compact(const MixedState& s, const FieldSet& fields) {
  const Grid& g = s.grid;
  if (g.d == 1) fail(Stage::quantum, "compact current needs d >= 2");
  const std::size_t total = g.size();
  ScalarField zeroV(g);
  PauliOperator op(fields, zeroV, s.hbar, HamiltonianOpts{false});
  VectorField J(g);
  for (int j = 0; j < s.n_members(); ++j) {
    const double l = s.lambda[j];
    SpinorField w = op.sigma_pi(s.members[j]);
    const auto& u0 = s.members[j].c[0];
    const auto& u1 = s.members[j].c[1];
    for (std::size_t i = 0; i < total; ++i) {
      const cplx a0 = std::conj(u0[i]), a1 = std::conj(u1[i]);
      // sigma_1 w = (w1, w0); sigma_2 w = (-i w1, i w0); sigma_3 w = (w0, -w1)
      J.comp[0][i] += l * (a0 * w.c[1][i] + a1 * w.c[0][i]).real();
      if (g.d >= 2)
        J.comp[1][i] +=
            l * (a0 * cplx(0.0, -1.0) * w.c[1][i] + a1 * cplx(0.0, 1.0) * w.c[0][i]).real();
      if (g.d >= 3) J.comp[2][i] += l * (a0 * w.c[0][i] - a1 * w.c[1][i]).real();
    }
  }
  return J;
}

Observables charge_energy(const MixedState& s, const FieldSet& fields,
                          const ScalarField& V_self) {
  Observables obs;
  obs.rho = density(s);
  obs.J = current(s, fields);
  obs.j_convective_only = (s.grid.d == 1);
  obs.Q = 0.0;
  for (int j = 0; j < s.n_members(); ++j) {
    const double q = l2_norm(s.members[j]);
    obs.Q += s.lambda[j] * q * q;
  }

  ScalarField zeroV(s.grid);
  PauliOperator op(fields, zeroV, s.hbar, HamiltonianOpts{false});
  obs.E_kin = 0.0;
  for (int j = 0; j < s.n_members(); ++j) {
    SpinorField w = op.sigma_pi(s.members[j]);
    const double nw = l2_norm(w);
    obs.E_kin += 0.5 * s.lambda[j] * nw * nw;
  }

  obs.E_pot = 0.0;
  if (!V_self.v.empty()) {
    VectorField gv = gradient(V_self);
    double g2 = 0.0;
    for (int a = 0; a < s.grid.d; ++a)
      for (double vv : gv.comp[a]) g2 += vv * vv;
    obs.E_pot += 0.5 * g2 * s.grid.cell_volume();
  }
  if (fields.has_V_ext) {
    double ve = 0.0;
    for (std::size_t i = 0; i < obs.rho.v.size(); ++i)
      ve += fields.V_ext.v[i].real() * obs.rho.v[i].real();
    obs.E_pot += ve * s.grid.cell_volume();
  }
  obs.E_total = obs.E_kin + obs.E_pot;
  obs.l75 = lp_norm_real(obs.rho, 1.4);
  return obs;
}

// ---------------------------------------------------------------------------
// Evolution.

Trajectory evolve_pauli_poisson(const MixedState& s0, const FieldSet& fields, double T,
                                double dt, const EvolveOpts& opts) {
  if (!(T > 0.0 && dt > 0.0)) fail(Stage::quantum, "need T > 0 and dt > 0");
  const int nsteps = static_cast<int>(std::llround(T / dt));
  if (nsteps < 1) fail(Stage::quantum, "T shorter than one step");

  auto solve_V = [&](const MixedState& s) {
    ScalarField V(s.grid);
    if (opts.self_consistent && !opts.zero_coupling) V = solve_poisson(density(s));
    return V;
  };

  Trajectory traj;
  traj.dt = dt;
  MixedState state = s0;
  ScalarField V = solve_V(state);
  Observables first = charge_energy(state, fields, V);
  first.t = 0.0;
  traj.obs.push_back(first);
  traj.states.push_back(state);
  traj.state_times.push_back(0.0);
  const double E0 = first.E_total;

  for (int n = 0; n < nsteps; ++n) {
    if (opts.self_consistent) {
      // midpoint predictor-corrector for the frozen potential
      MixedState half = propagate_step(state, fields, V, 0.5 * dt, opts.prop);
      ScalarField Vmid = solve_V(half);
      state = propagate_step(state, fields, Vmid, dt, opts.prop);
      V = solve_V(state);
    } else {
      state = propagate_step(state, fields, V, dt, opts.prop);
    }
    Observables o = charge_energy(state, fields, V);
    o.t = (n + 1) * dt;
    traj.obs.push_back(o);
    const bool record = opts.state_every > 0 && ((n + 1) % opts.state_every == 0);
    if (record || n + 1 == nsteps) {
      traj.states.push_back(state);
      traj.state_times.push_back(o.t);
    }
    if (std::abs(E0) > 0.0 && std::abs(o.E_total - E0) / std::abs(E0) > opts.abort_drift)
      fail(Stage::quantum, "energy drift " +
                               std::to_string(std::abs(o.E_total - E0) / std::abs(E0)) +
                               " exceeded abort threshold at t = " + std::to_string(o.t));
  }
  return traj;
}

std::vector<double> continuity_residual(const Trajectory& traj) {
  const int M = static_cast<int>(traj.obs.size());
  if (M < 3) fail(Stage::quantum, "continuity residual needs at least 3 snapshots");
  std::vector<double> out;
  for (int i = 1; i + 1 < M; ++i) {
    const Grid& g = traj.obs[i].rho.grid;
    ScalarField divJ(g);
    for (int a = 0; a < g.d; ++a) {
      ScalarField ja(g);
      for (std::size_t p = 0; p < ja.v.size(); ++p)
        ja.v[p] = cplx(traj.obs[i].J.comp[a][p], 0.0);
      ScalarField da = spectral_derivative(ja, a);
      for (std::size_t p = 0; p < divJ.v.size(); ++p) divJ.v[p] += da.v[p];
    }
    ScalarField resid(g);
    for (std::size_t p = 0; p < resid.v.size(); ++p) {
      const double dr =
          (traj.obs[i + 1].rho.v[p].real() - traj.obs[i - 1].rho.v[p].real()) / (2.0 * traj.dt);
      resid.v[p] = cplx(dr, 0.0) + divJ.v[p];
    }
    const double den = l2_norm(divJ);
    const double num = l2_norm(resid);
    out.push_back(den > 1e-12 ? num / den : num);
  }
  return out;
}

void write_diagnostics_csv(const Trajectory& traj, const std::string& path,
                           const std::string& config_hash) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) fail(Stage::io, "cannot open " + path);
  std::fprintf(fp, "# pwps %s config=%s\n", kToolVersion, config_hash.c_str());
  std::fprintf(fp, "t,Q,E_kin,E_pot,E_total,continuity_residual,l75\n");
  std::vector<double> cres;
  if (traj.obs.size() >= 3) cres = continuity_residual(traj);
  for (std::size_t i = 0; i < traj.obs.size(); ++i) {
    const auto& o = traj.obs[i];
    const double r = (i >= 1 && i - 1 < cres.size()) ? cres[i - 1] : 0.0;
    std::fprintf(fp, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", o.t, o.Q, o.E_kin, o.E_pot,
                 o.E_total, r, o.l75);
  }
  std::fclose(fp);
}

}  // namespace pwps
