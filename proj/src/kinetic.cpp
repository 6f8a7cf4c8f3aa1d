#include "pwps/kinetic.hpp"

#include <cmath>
#include <cstdio>

namespace pwps {

namespace {

double wrap_pos(double x, double L) {
  x = std::fmod(x, L);
  if (x < 0.0) x += L;
  return x;
}

// multilinear weights: cell index and fraction per axis
struct CicStencil {
  std::array<int, 3> i0;
  std::array<double, 3> fr;
};

CicStencil cic_stencil(const Grid& g, const std::array<double, 3>& xp) {
  CicStencil st{};
  for (int a = 0; a < g.d; ++a) {
    const double s = wrap_pos(xp[a], g.L[a]) / g.h[a];
    st.i0[a] = static_cast<int>(std::floor(s)) % g.n[a];
    st.fr[a] = s - std::floor(s);
  }
  return st;
}

}  // namespace

std::array<double, 3> ParticleFields::E(const std::array<double, 3>& xp) const {
  std::array<double, 3> e{0.0, 0.0, 0.0};
  if (fields && fields->E_at) e = fields->E_at(xp);
  if (E_grid) {
    const Grid& g = E_grid->grid;
    const CicStencil st = cic_stencil(g, xp);
    // accumulate multilinear interpolation over 2^d corners
    const int corners = 1 << g.d;
    for (int cbit = 0; cbit < corners; ++cbit) {
      double wgt = 1.0;
      std::array<int, 3> idx{0, 0, 0};
      for (int a = 0; a < g.d; ++a) {
        const int up = (cbit >> a) & 1;
        wgt *= up ? st.fr[a] : 1.0 - st.fr[a];
        idx[a] = (st.i0[a] + up) % g.n[a];
      }
      const std::size_t fl = g.flat(idx);
      for (int a = 0; a < g.d; ++a) e[a] += wgt * E_grid->comp[a][fl];
    }
  }
  return e;
}

std::array<double, 3> ParticleFields::B(const std::array<double, 3>& xp) const {
  if (fields && fields->B_at) return fields->B_at(xp);
  return {0.0, 0.0, 0.0};
}

double ParticleFields::V(const std::array<double, 3>& xp) const {
  if (!fields || !fields->has_V_ext) return 0.0;
  // presets carry smooth closed forms; fall back to nearest grid sample
  const Grid& g = fields->grid;
  if (fields->preset_name == "harmonic_V") {
    const double omega = fields->preset_params.count("omega")
                             ? fields->preset_params.at("omega")
                             : 1.0;
    double r2 = 0.0;
    for (int a = 0; a < g.d; ++a) {
      double dx = xp[a] - 0.5 * g.L[a];
      dx = std::fmod(dx, g.L[a]);
      if (dx > 0.5 * g.L[a]) dx -= g.L[a];
      if (dx < -0.5 * g.L[a]) dx += g.L[a];
      r2 += dx * dx;
    }
    return 0.5 * omega * omega * r2;
  }
  if (fields->preset_name == "cosine_V" || fields->preset_name == "sinusoidal_B_cosine_V") {
    const double amp = fields->preset_params.count("v_amp")
                           ? fields->preset_params.at("v_amp")
                           : 0.5;
    double v = 0.0;
    for (int a = 0; a < g.d; ++a)
      v += amp * (1.0 - std::cos(kTwoPi / g.L[a] * (xp[a] - 0.5 * g.L[a])));
    return v;
  }
  const CicStencil st = cic_stencil(g, xp);
  std::array<int, 3> idx = st.i0;
  return fields->V_ext.v[g.flat(idx)].real();
}

// ---------------------------------------------------------------------------

namespace {

void rotate_momentum(std::array<double, 3>& p, const std::array<double, 3>& B, int d,
                     double dt) {
  if (d == 1) return;
  if (d == 2) {
    const double bz = B[2];
    if (bz == 0.0) return;
    const double phi = -bz * dt;
    const double c = std::cos(phi), s = std::sin(phi);
    const double px = p[0], py = p[1];
    p[0] = c * px - s * py;
    p[1] = s * px + c * py;
    return;
  }
  const double bm = std::sqrt(B[0] * B[0] + B[1] * B[1] + B[2] * B[2]);
  if (bm == 0.0) return;
  const std::array<double, 3> n{B[0] / bm, B[1] / bm, B[2] / bm};
  const double phi = -bm * dt;
  const double c = std::cos(phi), s = std::sin(phi);
  const double ndp = n[0] * p[0] + n[1] * p[1] + n[2] * p[2];
  const std::array<double, 3> nxp{n[1] * p[2] - n[2] * p[1], n[2] * p[0] - n[0] * p[2],
                                  n[0] * p[1] - n[1] * p[0]};
  for (int a = 0; a < 3; ++a) p[a] = p[a] * c + nxp[a] * s + n[a] * ndp * (1.0 - c);
}

double max_B_mag(const ParticleFields& pf, const ParticleEnsemble& ps) {
  double bm = 0.0;
  // sample a handful of particles; presets are smooth and bounded
  const std::size_t step = std::max<std::size_t>(1, ps.size() / 16);
  for (std::size_t i = 0; i < ps.size(); i += step) {
    const auto b = pf.B(ps.x[i]);
    bm = std::max(bm, std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]));
  }
  return bm;
}

}  // namespace

void lorentz_step(ParticleEnsemble& ps, const ParticleFields& pf, double dt) {
  if (!(dt > 0.0)) fail(Stage::kinetic, "dt must be positive");
  if (dt * max_B_mag(pf, ps) > kPi)
    fail(Stage::kinetic, "dt |B| > pi: magnetic rotation aliased");
  const int d = ps.d;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (int a = 0; a < d; ++a)
      ps.x[i][a] = wrap_pos(ps.x[i][a] + 0.5 * dt * ps.p[i][a], ps.box[a]);
    const auto E = pf.E(ps.x[i]);
    const auto B = pf.B(ps.x[i]);
    for (int a = 0; a < d; ++a) ps.p[i][a] += 0.5 * dt * E[a];
    rotate_momentum(ps.p[i], B, d, dt);
    for (int a = 0; a < d; ++a) ps.p[i][a] += 0.5 * dt * E[a];
    for (int a = 0; a < d; ++a)
      ps.x[i][a] = wrap_pos(ps.x[i][a] + 0.5 * dt * ps.p[i][a], ps.box[a]);
  }
}

FlowResult flow_map(const std::array<double, 3>& x0, const std::array<double, 3>& p0, int d,
                    const ParticleFields& pf, const std::array<double, 3>& box, double T,
                    double dt) {
  ParticleEnsemble ps;
  ps.d = d;
  ps.box = box;
  ps.x.push_back(x0);
  ps.p.push_back(p0);
  ps.w.push_back(1.0);
  const int nsteps = static_cast<int>(std::llround(T / dt));
  FlowResult out;
  auto ham = [&]() {
    double k = 0.0;
    for (int a = 0; a < d; ++a) k += ps.p[0][a] * ps.p[0][a];
    return 0.5 * k + pf.V(ps.x[0]);
  };
  out.hamiltonian.push_back(ham());
  for (int n = 0; n < nsteps; ++n) {
    lorentz_step(ps, pf, dt);
    out.hamiltonian.push_back(ham());
  }
  out.x = ps.x[0];
  out.p = ps.p[0];
  return out;
}

// ---------------------------------------------------------------------------

KineticMoments deposit(const ParticleEnsemble& ps, const Grid& grid) {
  KineticMoments km{ScalarField(grid), VectorField(grid)};
  const double invvol = 1.0 / grid.cell_volume();
  const int corners = 1 << grid.d;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const CicStencil st = cic_stencil(grid, ps.x[i]);
    for (int cbit = 0; cbit < corners; ++cbit) {
      double wgt = 1.0;
      std::array<int, 3> idx{0, 0, 0};
      for (int a = 0; a < grid.d; ++a) {
        const int up = (cbit >> a) & 1;
        wgt *= up ? st.fr[a] : 1.0 - st.fr[a];
        idx[a] = (st.i0[a] + up) % grid.n[a];
      }
      const std::size_t fl = grid.flat(idx);
      const double m = ps.w[i] * wgt * invvol;
      km.rho.v[fl] += cplx(m, 0.0);
      for (int a = 0; a < grid.d; ++a) km.J.comp[a][fl] += m * ps.p[i][a];
    }
  }
  return km;
}

ParticleEnsemble sample_ensemble(PhaseSampler& sampler, int N, const std::array<double, 3>& box,
                                 int d) {
  if (N < 1) fail(Stage::kinetic, "need at least one particle");
  ParticleEnsemble ps;
  ps.d = d;
  ps.box = box;
  ps.x.resize(N);
  ps.p.resize(N);
  ps.w.assign(N, 1.0 / N);
  for (int i = 0; i < N; ++i) {
    const PhasePoint pt = sampler.next();
    for (int a = 0; a < d; ++a) {
      ps.x[i][a] = wrap_pos(pt.x[a], box[a]);
      ps.p[i][a] = pt.p[a];
    }
  }
  return ps;
}

ParticleEnsemble solve_linear_vlasov(PhaseSampler& sampler, const FieldSet& fields, double T,
                                     double dt, int N) {
  std::array<double, 3> box{fields.grid.L[0], fields.grid.L[1], fields.grid.L[2]};
  ParticleEnsemble ps = sample_ensemble(sampler, N, box, fields.grid.d);
  ParticleFields pf{&fields, nullptr};
  const int nsteps = static_cast<int>(std::llround(T / dt));
  for (int n = 0; n < nsteps; ++n) lorentz_step(ps, pf, dt);
  return ps;
}

KineticTrajectory solve_vlasov_poisson(PhaseSampler& sampler, const FieldSet& fields,
                                       double T, double dt, int N, const Grid& grid,
                                       bool self_consistent) {
  std::array<double, 3> box{grid.L[0], grid.L[1], grid.L[2]};
  ParticleEnsemble ps = sample_ensemble(sampler, N, box, grid.d);
  const int nsteps = static_cast<int>(std::llround(T / dt));

  KineticTrajectory traj;
  traj.dt = dt;
  VectorField E_self(grid);
  ParticleFields pf{&fields, &E_self};

  // diagnostics are taken at synchronized times: deposit at the current
  // positions so the field energy matches the recorded momenta
  auto record = [&](double t) {
    double ek = 0.0;
    std::array<double, 3> mom{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < ps.size(); ++i) {
      double p2 = 0.0;
      for (int a = 0; a < grid.d; ++a) {
        p2 += ps.p[i][a] * ps.p[i][a];
        mom[a] += ps.w[i] * ps.p[i][a];
      }
      ek += 0.5 * ps.w[i] * p2;
    }
    double ef = 0.0;
    if (self_consistent) {
      KineticMoments km = deposit(ps, grid);
      ScalarField V = solve_poisson(km.rho);
      VectorField gv = gradient(V);
      for (int a = 0; a < grid.d; ++a)
        for (double v : gv.comp[a]) ef += v * v;
      ef *= 0.5 * grid.cell_volume();
    }
    double eext = 0.0;
    if (fields.has_V_ext)
      for (std::size_t i = 0; i < ps.size(); ++i) eext += ps.w[i] * pf.V(ps.x[i]);
    traj.t.push_back(t);
    traj.E_kin.push_back(ek);
    traj.E_field.push_back(ef);
    traj.E_total.push_back(ek + ef + eext);
    traj.momentum.push_back(mom);
  };

  record(0.0);

  double pmax = 0.0;
  for (int n = 0; n < nsteps; ++n) {
    // half drift, fields at the midpoint, kick-rotate-kick, half drift
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (int a = 0; a < grid.d; ++a) {
        ps.x[i][a] = wrap_pos(ps.x[i][a] + 0.5 * dt * ps.p[i][a], box[a]);
        pmax = std::max(pmax, std::abs(ps.p[i][a]));
      }
    if (self_consistent) {
      KineticMoments km = deposit(ps, grid);
      ScalarField V = solve_poisson(km.rho);
      VectorField gv = gradient(V);
      for (int a = 0; a < grid.d; ++a)
        for (std::size_t q = 0; q < gv.comp[a].size(); ++q)
          E_self.comp[a][q] = -gv.comp[a][q];
    }
    if (dt * max_B_mag(pf, ps) > kPi)
      fail(Stage::kinetic, "dt |B| > pi: magnetic rotation aliased");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto E = pf.E(ps.x[i]);
      const auto B = pf.B(ps.x[i]);
      for (int a = 0; a < grid.d; ++a) ps.p[i][a] += 0.5 * dt * E[a];
      rotate_momentum(ps.p[i], B, grid.d, dt);
      for (int a = 0; a < grid.d; ++a) ps.p[i][a] += 0.5 * dt * E[a];
    }
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (int a = 0; a < grid.d; ++a)
        ps.x[i][a] = wrap_pos(ps.x[i][a] + 0.5 * dt * ps.p[i][a], box[a]);
    record((n + 1) * dt);
  }
  double hmin = grid.h[0];
  for (int a = 0; a < grid.d; ++a) hmin = std::min(hmin, grid.h[a]);
  if (pmax * dt > hmin)
    traj.warnings.push_back("CFL: max|p| dt exceeds the grid spacing");
  traj.final_state = std::move(ps);
  return traj;
}

void write_particles(const ParticleEnsemble& ps, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(Stage::io, "cannot open " + path);
  std::fwrite("PWPS", 1, 4, fp);
  const std::uint32_t version = 1;
  std::fwrite(&version, sizeof(version), 1, fp);
  const double dd = ps.d, nn = static_cast<double>(ps.size());
  std::fwrite(&dd, sizeof(double), 1, fp);
  std::fwrite(&nn, sizeof(double), 1, fp);
  for (int a = 0; a < ps.d; ++a) std::fwrite(&ps.box[a], sizeof(double), 1, fp);
  const std::uint32_t ncomp = 2 * ps.d + 1, cflag = 0;
  std::fwrite(&ncomp, sizeof(ncomp), 1, fp);
  std::fwrite(&cflag, sizeof(cflag), 1, fp);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (int a = 0; a < ps.d; ++a) std::fwrite(&ps.x[i][a], sizeof(double), 1, fp);
    for (int a = 0; a < ps.d; ++a) std::fwrite(&ps.p[i][a], sizeof(double), 1, fp);
    std::fwrite(&ps.w[i], sizeof(double), 1, fp);
  }
  std::fclose(fp);
}

}  // namespace pwps
