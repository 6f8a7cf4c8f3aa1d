#include "pwps/selftest.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "pwps/limitlab.hpp"

namespace pwps {

namespace {

struct Check {
  std::string name;
  double value;
  double bound;
  bool less_than;  // pass when value <= bound (otherwise value >= bound)
  bool pass() const { return less_than ? value <= bound : value >= bound; }
};

}  // namespace

bool run_selftest(const std::string& out_dir, long long seed, std::FILE* log) {
  std::vector<Check> checks;
  auto add = [&](const std::string& name, double value, double bound, bool less = true) {
    checks.push_back({name, value, bound, less});
  };

  // spectral calculus
  {
    Grid g = make_grid_1d(64, kTwoPi);
    ScalarField f(g);
    for (int i = 0; i < 64; ++i) f.v[i] = std::sin(g.coord(0, i));
    ScalarField df = spectral_derivative(f, 0);
    double err = 0.0;
    for (int i = 0; i < 64; ++i)
      err = std::max(err, std::abs(df.v[i].real() - std::cos(g.coord(0, i))));
    add("spectral_derivative_sin", err, 1e-12);

    ScalarField rho(g);
    for (int i = 0; i < 64; ++i) rho.v[i] = std::cos(g.coord(0, i));
    ScalarField V = solve_poisson(rho);
    err = 0.0;
    for (int i = 0; i < 64; ++i)
      err = std::max(err, std::abs(V.v[i].real() - std::cos(g.coord(0, i))));
    add("poisson_single_mode", err, 1e-12);
  }

  // Wigner transform against the closed form, Husimi positivity and mass
  {
    const double hbar = 0.16;
    Grid g = make_grid_1d(128, 12.0);
    std::array<double, 3> x0{6.0, 0.0, 0.0}, p0{0.0, 0.0, 0.0};
    SpinorField u = coherent_state(g, hbar, std::span<const double>(x0.data(), 1),
                                   std::span<const double>(p0.data(), 1), std::sqrt(hbar),
                                   {cplx(1.0, 0.0), cplx(0.0, 0.0)});
    MixedState s = make_mixed_state(g, hbar, 1.0 / hbar + 1.0, {1.0}, {u});
    PhaseGridOpts pgo;
    pgo.n_y = 128;
    PhaseGrid pg = make_phase_grid(g, hbar, pgo);
    WignerFunction f = wigner_transform(s, pg);
    double err = 0.0;
    for (int i = 0; i < g.n[0]; ++i)
      for (int l = 0; l < pg.n_y[0]; ++l) {
        const double x = g.coord(0, i) - x0[0];
        const double xi = pg.xi[0][l];
        const double ref = std::exp(-(x * x + xi * xi) / hbar) / (kPi * hbar);
        err = std::max(err, std::abs(f.f[static_cast<std::size_t>(i) * pg.n_y[0] + l] - ref));
      }
    add("wigner_gaussian_linf", err, 1e-6);

    WignerFunction ft = husimi(f);
    add("husimi_min", -min_value(ft), 1e-12);
    add("husimi_mass_err", std::abs(total_mass(ft) - 1.0), 1e-8);

    ScalarField marg = moment_density(f);
    ScalarField rho = density(s);
    double merr = 0.0;
    for (std::size_t i = 0; i < marg.v.size(); ++i)
      merr = std::max(merr, std::abs(marg.v[i].real() - rho.v[i].real()));
    add("marginal_identity", merr, 1e-8);

    // theta with a quadratic symbol: theta[g]F = -dg/dx dF/dxi exactly
    SymbolFn gsym = [&](const std::array<double, 3>& x) {
      const double dx = x[0] - 6.0;
      return 0.7 * dx * dx + 0.3 * dx;
    };
    WignerFunction th = apply_theta(gsym, f);
    WignerFunction dxi = xi_derivative(f, 0);
    double rel = 0.0, scale = 0.0;
    for (int i = 0; i < g.n[0]; ++i) {
      const double gp = 1.4 * (g.coord(0, i) - 6.0) + 0.3;
      for (int l = 0; l < pg.n_y[0]; ++l) {
        const std::size_t q = static_cast<std::size_t>(i) * pg.n_y[0] + l;
        const double want = -gp * dxi.f[q];
        rel = std::max(rel, std::abs(th.f[q] - want));
        scale = std::max(scale, std::abs(want));
      }
    }
    add("theta_quadratic_exact", rel / std::max(scale, 1e-300), 1e-8);
  }

  // cyclotron invariants
  {
    FieldSet none;
    Grid g3 = make_grid(3, std::array<int, 3>{8, 8, 8}, std::array<double, 3>{40.0, 40.0, 40.0});
    none.grid = g3;
    none.B_at = [](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 1}; };
    ParticleFields pf{&none, nullptr};
    const double Tc = kTwoPi;
    FlowResult fr = flow_map({20.0, 20.0, 20.0}, {1.0, 0.0, 0.0}, 3, pf,
                             {40.0, 40.0, 40.0}, 2.0 * Tc, Tc / 1000.0);
    const double pmag = std::sqrt(fr.p[0] * fr.p[0] + fr.p[1] * fr.p[1] + fr.p[2] * fr.p[2]);
    add("cyclotron_speed_drift", std::abs(pmag - 1.0), 1e-12);
    const double xerr = std::hypot(fr.x[0] - 20.0, fr.x[1] - 20.0);
    add("cyclotron_return", xerr, 1e-6);
  }

  // admissibility gate
  {
    Grid g = make_grid(2, std::array<int, 3>{16, 16, 1},
                       std::array<double, 3>{kTwoPi, kTwoPi, 1.0});
    std::array<double, 3> x0{kPi, kPi, 0.0}, p0{0.0, 0.0, 0.0};
    SpinorField u = coherent_state(g, 0.25, std::span<const double>(x0.data(), 2),
                                   std::span<const double>(p0.data(), 2), 1.3,
                                   {cplx(1.0, 0.0), cplx(0.0, 0.0)});
    bool rejected = false;
    try {
      (void)make_mixed_state(g, 0.25, 1.0, {1.0}, {u});
    } catch (const Error&) {
      rejected = true;
    }
    add("pure_state_rejected", rejected ? 1.0 : 0.0, 1.0, false);
  }

  // reduced hbar ladder: aggregate weak error decreasing
  double sweep_e0 = 0.0, sweep_e1 = 0.0;
  {
    SweepConfig cfg;
    cfg.d = 2;
    cfg.n = {32, 32, 1};
    cfg.hbars = {0.5, 0.25};
    cfg.C = 4.0;
    cfg.T = 0.4;
    cfg.dt0 = 0.32;
    cfg.n_particles = 20000;
    cfg.dt_kinetic = 0.01;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.f_I.d = 2;
    cfg.f_I.x0 = {kPi + 0.6, kPi, 0.0};
    cfg.f_I.p0 = {0.0, 0.25, 0.0};
    cfg.f_I.sx = {0.35, 0.35, 0.35};
    cfg.f_I.sp = {0.2, 0.2, 0.2};
    cfg.field_params["b_amp"] = 0.5;
    cfg.field_params["v_amp"] = 0.4;
    ConvergenceReport rep = run_hbar_sweep(cfg, "linear");
    sweep_e0 = rep.rows[0].aggregate;
    sweep_e1 = rep.rows[1].aggregate;
    add("sweep_error_decreasing", sweep_e1, sweep_e0);
    add("sweep_q_drift", std::max(rep.rows[0].q_drift, rep.rows[1].q_drift), 1e-10);
  }

  bool all = true;
  nlohmann::json j;
  j["seed"] = seed;
  j["tool_version"] = kToolVersion;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    const bool ok = c.pass();
    all = all && ok;
    if (log)
      std::fprintf(log, "%-28s %s  (value=%.3e bound=%.3e)\n", c.name.c_str(),
                   ok ? "PASS" : "FAIL", c.value, c.bound);
    nlohmann::json e;
    e["name"] = c.name;
    e["value"] = c.value;
    e["bound"] = c.bound;
    e["pass"] = ok;
    arr.push_back(e);
  }
  j["checks"] = arr;
  j["all_pass"] = all;
  std::ofstream out(out_dir + "/selftest_report.json");
  out << j.dump(2) << "\n";
  return all;
}

}  // namespace pwps
