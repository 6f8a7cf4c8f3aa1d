#include "pwps/limitlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace pwps {

void validate(const SweepConfig& cfg) {
  if (cfg.d < 1 || cfg.d > 3) fail(Stage::limitlab, "dimension must be 1..3");
  if (cfg.hbars.empty()) fail(Stage::limitlab, "hbar list is empty");
  for (std::size_t i = 0; i + 1 < cfg.hbars.size(); ++i)
    if (!(cfg.hbars[i] > cfg.hbars[i + 1]))
      fail(Stage::limitlab, "hbar list must be strictly decreasing");
  for (double h : cfg.hbars)
    if (!(h > 0.0 && h <= 1.0)) fail(Stage::limitlab, "hbar values must lie in (0,1]");
  if (cfg.battery_size < 1) fail(Stage::limitlab, "battery is empty");
  if (!(cfg.T > 0.0 && cfg.dt0 > 0.0)) fail(Stage::limitlab, "need T > 0 and dt > 0");
}

std::vector<TestFunction> make_battery(const SweepConfig& cfg) {
  std::vector<TestFunction> battery;
  // deterministic centers on the bulk of the initial measure; the stream is
  // independent of the run seed so every rung pairs against the same battery
  for (int i = 0; i < cfg.battery_size; ++i) {
    TestFunction phi;
    phi.d = cfg.d;
    for (int a = 0; a < cfg.d; ++a) {
      const double ux = halton(7 + i, a == 0 ? 2 : (a == 1 ? 3 : 5));
      const double up = halton(7 + i, a == 0 ? 7 : (a == 1 ? 11 : 13));
      phi.x0[a] = cfg.f_I.x0[a] + cfg.f_I.sx[a] * 1.5 * (2.0 * ux - 1.0);
      phi.xi0[a] = cfg.f_I.p0[a] + cfg.f_I.sp[a] * 1.5 * (2.0 * up - 1.0);
      phi.wrapL[a] = cfg.L[a];
    }
    phi.width_x = cfg.battery_width_x[i % cfg.battery_width_x.size()];
    phi.width_xi = cfg.battery_width_xi[i % cfg.battery_width_xi.size()];
    battery.push_back(phi);
  }
  return battery;
}

double symbol_eigenvalue(const std::array<double, 3>& x, const std::array<double, 3>& xi,
                         const FieldSet& fields) {
  const Grid& g = fields.grid;
  // interpolate A multilinearly, V from the preset closures
  std::array<double, 3> Axy{0.0, 0.0, 0.0};
  if (fields.has_A) {
    std::array<double, 3> frac{0.0, 0.0, 0.0};
    std::array<int, 3> base{0, 0, 0};
    for (int a = 0; a < g.d; ++a) {
      double pos = std::fmod(x[a], g.L[a]);
      if (pos < 0.0) pos += g.L[a];
      const double sidx = pos / g.h[a];
      base[a] = static_cast<int>(std::floor(sidx)) % g.n[a];
      frac[a] = sidx - std::floor(sidx);
    }
    const int corners = 1 << g.d;
    for (int cbit = 0; cbit < corners; ++cbit) {
      double wgt = 1.0;
      std::array<int, 3> idx{0, 0, 0};
      for (int a = 0; a < g.d; ++a) {
        const int up = (cbit >> a) & 1;
        wgt *= up ? frac[a] : 1.0 - frac[a];
        idx[a] = (base[a] + up) % g.n[a];
      }
      const std::size_t fl = g.flat(idx);
      for (int a = 0; a < g.d; ++a) Axy[a] += wgt * fields.A.comp[a][fl];
    }
  }
  double kin = 0.0;
  for (int a = 0; a < g.d; ++a) {
    const double da = xi[a] - Axy[a];
    kin += da * da;
  }
  ParticleFields pf{&fields, nullptr};
  return 0.5 * kin + pf.V(x);
}

std::vector<double> weak_error(const WignerFunction& f_q, const ParticleEnsemble& particles,
                               const std::vector<TestFunction>& battery,
                               const VectorField* shift_A) {
  std::vector<double> errs;
  errs.reserve(battery.size());
  for (const auto& phi : battery) {
    const double quantum = pair_against(f_q, phi, shift_A);
    double kinetic = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i)
      kinetic += particles.w[i] * phi.eval(particles.x[i], particles.p[i]);
    errs.push_back(std::abs(quantum - kinetic));
  }
  return errs;
}

double fit_loglog_slope(const std::vector<double>& hbars, const std::vector<double>& errs) {
  if (hbars.size() != errs.size() || hbars.size() < 2)
    fail(Stage::limitlab, "order fit needs at least two points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(hbars.size());
  for (std::size_t i = 0; i < hbars.size(); ++i) {
    const double lx = std::log(hbars[i]);
    const double ly = std::log(std::max(errs[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------

namespace {

struct RungArtifacts {
  MixedState final_state;
  Trajectory traj;
  FieldSet fields;
};

Grid sweep_grid(const SweepConfig& cfg) {
  return make_grid(cfg.d, std::span<const int>(cfg.n.data(), cfg.d),
                   std::span<const double>(cfg.L.data(), cfg.d));
}

double battery_xi_halfwidth(const SweepConfig& cfg, const std::vector<TestFunction>& battery) {
  if (cfg.xi_halfwidth > 0.0) return cfg.xi_halfwidth;
  double need = 0.0;
  for (const auto& phi : battery)
    for (int a = 0; a < cfg.d; ++a)
      need = std::max(need, std::abs(phi.xi0[a]) + 6.2 * phi.width_xi);
  return need;
}

RungArtifacts evolve_rung(const SweepConfig& cfg, double hbar, const std::string& mode,
                          bool include_sg) {
  Grid grid = sweep_grid(cfg);
  FieldSet fields = preset_fields(cfg.field_preset, grid, cfg.field_params);
  PhaseSampler sampler(cfg.f_I, cfg.sampler_mode, cfg.seed);
  const double sigma = cfg.sigma_factor * std::sqrt(hbar);
  MixedState s0 = build_mixed_state(grid, hbar, cfg.C, sampler, cfg.chi, sigma);

  EvolveOpts opts;
  opts.self_consistent = (mode == "self_consistent");
  opts.prop.include_sg = include_sg;
  opts.state_every = 0;
  RungArtifacts art{s0, Trajectory{}, std::move(fields)};
  art.traj = evolve_pauli_poisson(s0, art.fields, cfg.T, cfg.dt_for(hbar), opts);
  art.final_state = art.traj.states.back();
  return art;
}

WignerFunction husimi_of_state(const SweepConfig& cfg, const MixedState& s,
                               double xi_need, HbarRow* row) {
  PhaseGridOpts pgo;
  pgo.xi_halfwidth = xi_need;
  pgo.y_halfwidth = cfg.y_halfwidth_factor / std::sqrt(s.hbar);
  PhaseGrid pg = make_phase_grid(s.grid, s.hbar, pgo);
  WignerOpts wo;
  wo.fold_xi_gaussian = true;  // momentum half of the smoothing, exact fold
  WignerFunction f = wigner_transform(s, pg, wo);
  if (row) {
    // marginal identity and mass are preserved by the momentum smoothing
    ScalarField marg = moment_density(f);
    ScalarField rho = density(s);
    double merr = 0.0;
    for (std::size_t i = 0; i < marg.v.size(); ++i)
      merr = std::max(merr, std::abs(marg.v[i].real() - rho.v[i].real()));
    row->marginal_err = merr;
  }
  HusimiOpts ho;
  ho.xi_direction = false;  // already folded
  ho.x_direction = true;
  ho.tail_tol = 1e-6;  // positive periodized kernel; wrap is benign here
  WignerFunction ft = husimi(f, ho);
  if (row) {
    row->husimi_min = min_value(ft);
    double q = 0.0;
    for (int j = 0; j < s.n_members(); ++j) {
      const double nj = l2_norm(s.members[j]);
      q += s.lambda[j] * nj * nj;
    }
    row->husimi_mass_err = std::abs(total_mass(ft) - q);
  }
  return ft;
}

ParticleEnsemble kinetic_side(const SweepConfig& cfg, const FieldSet& fields,
                              const std::string& mode) {
  PhaseSampler sampler(cfg.f_I, cfg.sampler_mode, cfg.seed + 1000);
  if (mode == "self_consistent") {
    Grid grid = sweep_grid(cfg);
    KineticTrajectory kt = solve_vlasov_poisson(sampler, fields, cfg.T, cfg.dt_kinetic,
                                                cfg.n_particles, grid, true);
    return std::move(kt.final_state);
  }
  return solve_linear_vlasov(sampler, fields, cfg.T, cfg.dt_kinetic, cfg.n_particles);
}

std::string hash_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string cfg_fingerprint(const SweepConfig& cfg, const std::string& mode) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d|%d|%d|%.17g|%.17g|%.17g|%.17g|%zu|%s|%s|%llu|%d|%.17g",
                cfg.d, cfg.n[0], cfg.d > 1 ? cfg.n[1] : 0, cfg.T, cfg.dt0, cfg.C,
                cfg.sigma_factor, cfg.hbars.size(), cfg.field_preset.c_str(), mode.c_str(),
                static_cast<unsigned long long>(cfg.seed), cfg.n_particles, cfg.dt_kinetic);
  return hash_hex(buf);
}

}  // namespace

ConvergenceReport run_hbar_sweep(const SweepConfig& cfg, const std::string& mode) {
  validate(cfg);
  if (mode != "linear" && mode != "self_consistent")
    fail(Stage::limitlab, "sweep mode must be linear or self_consistent");
  const std::vector<TestFunction> battery = make_battery(cfg);
  const double xi_need = battery_xi_halfwidth(cfg, battery);

  ConvergenceReport rep;
  rep.mode = mode;
  rep.seed = cfg.seed;
  rep.sampler_mode = cfg.sampler_mode;
  rep.admissibility_exponent = cfg.d;
  rep.config_hash = cfg_fingerprint(cfg, mode);

  for (double hbar : cfg.hbars) {
    HbarRow row;
    row.hbar = hbar;
    RungArtifacts art = evolve_rung(cfg, hbar, mode, true);
    row.n_members = art.final_state.n_members();
    row.quantum_steps = static_cast<int>(art.traj.obs.size()) - 1;
    row.gram_dev = gram_deviation(art.final_state);

    const double Q0 = art.traj.obs.front().Q;
    const double E0 = art.traj.obs.front().E_total;
    for (const auto& o : art.traj.obs) {
      row.q_drift = std::max(row.q_drift, std::abs(o.Q - Q0) / std::max(std::abs(Q0), 1e-300));
      if (std::abs(E0) > 0.0)
        row.e_drift = std::max(row.e_drift, std::abs(o.E_total - E0) / std::abs(E0));
      row.l75_max = std::max(row.l75_max, o.l75);
    }

    WignerFunction ft = husimi_of_state(cfg, art.final_state, xi_need, &row);
    ParticleEnsemble particles = kinetic_side(cfg, art.fields, mode);
    const VectorField* shift = art.fields.has_A ? &art.fields.A : nullptr;
    row.weak_errors = weak_error(ft, particles, battery, shift);
    double agg = 0.0;
    for (double e : row.weak_errors) agg += e;
    row.aggregate = agg / row.weak_errors.size();

    for (double R : cfg.tail_radii) {
      OscillatoryTail t = oscillatory_tail(art.final_state, R);
      row.tails.push_back(t.tail);
      row.tail_companion = t.companion;
    }
    rep.rows.push_back(std::move(row));
  }

  if (rep.rows.size() >= 2) {
    std::vector<double> hh, ee;
    for (const auto& r : rep.rows) {
      hh.push_back(r.hbar);
      ee.push_back(r.aggregate);
    }
    rep.empirical_order = fit_loglog_slope(hh, ee);
    rep.order_valid = true;
  }
  return rep;
}

AblationReport sg_ablation(const SweepConfig& cfg) {
  validate(cfg);
  const std::vector<TestFunction> battery = make_battery(cfg);
  const double xi_need = battery_xi_halfwidth(cfg, battery);
  AblationReport rep;
  rep.config_hash = cfg_fingerprint(cfg, "ablation");
  for (double hbar : cfg.hbars) {
    RungArtifacts on = evolve_rung(cfg, hbar, "linear", true);
    RungArtifacts off = evolve_rung(cfg, hbar, "linear", false);
    WignerFunction f_on = husimi_of_state(cfg, on.final_state, xi_need, nullptr);
    WignerFunction f_off = husimi_of_state(cfg, off.final_state, xi_need, nullptr);
    const VectorField* shift = on.fields.has_A ? &on.fields.A : nullptr;
    double dist = 0.0;
    for (const auto& phi : battery)
      dist += std::abs(pair_against(f_on, phi, shift) - pair_against(f_off, phi, shift));
    rep.hbars.push_back(hbar);
    rep.distances.push_back(dist / battery.size());
  }
  return rep;
}

CurrentReport current_convergence(const SweepConfig& cfg, const std::string& mode) {
  validate(cfg);
  const std::vector<TestFunction> battery = make_battery(cfg);
  CurrentReport rep;
  rep.config_hash = cfg_fingerprint(cfg, "current_" + mode);

  for (double hbar : cfg.hbars) {
    RungArtifacts art = evolve_rung(cfg, hbar, mode, true);
    const Grid& grid = art.final_state.grid;
    VectorField Jq = current(art.final_state, art.fields);
    VectorField Jc = current_convective(art.final_state, art.fields);
    ParticleEnsemble particles = kinetic_side(cfg, art.fields, mode);

    double err = 0.0, spin = 0.0;
    for (const auto& phi : battery) {
      for (int a = 0; a < grid.d; ++a) {
        double quantum = 0.0, conv = 0.0;
        std::array<int, 3> idx{0, 0, 0};
        for (std::size_t fl = 0; fl < grid.size(); ++fl) {
          std::array<double, 3> x{0.0, 0.0, 0.0};
          for (int b = 0; b < grid.d; ++b) x[b] = grid.coord(b, idx[b]);
          const double w = phi.eval(x, phi.xi0);  // x-space weight only
          quantum += Jq.comp[a][fl] * w;
          conv += Jc.comp[a][fl] * w;
          for (int b = grid.d - 1; b >= 0; --b) {
            if (++idx[b] < grid.n[b]) break;
            idx[b] = 0;
          }
        }
        quantum *= grid.cell_volume();
        conv *= grid.cell_volume();
        double kinetic = 0.0;
        for (std::size_t i = 0; i < particles.size(); ++i)
          kinetic += particles.w[i] * particles.p[i][a] * phi.eval(particles.x[i], phi.xi0);
        err += std::abs(quantum - kinetic);
        spin += std::abs(quantum - conv);  // paired spin-curl contribution
      }
    }
    rep.hbars.push_back(hbar);
    rep.paired_errors.push_back(err / battery.size());
    rep.spin_curl_mags.push_back(spin / battery.size());
  }
  if (rep.hbars.size() >= 2) rep.spin_slope = fit_loglog_slope(rep.hbars, rep.spin_curl_mags);
  return rep;
}

// ---------------------------------------------------------------------------

void write_report_json(const ConvergenceReport& rep, const std::string& path) {
  nlohmann::json j;
  j["mode"] = rep.mode;
  j["seed"] = rep.seed;
  j["sampler_mode"] = rep.sampler_mode;
  j["admissibility_exponent"] = rep.admissibility_exponent;
  j["config_hash"] = rep.config_hash;
  j["tool_version"] = kToolVersion;
  j["empirical_order"] = rep.empirical_order;
  j["order_valid"] = rep.order_valid;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json row;
    row["hbar"] = r.hbar;
    row["n_members"] = r.n_members;
    row["quantum_steps"] = r.quantum_steps;
    row["weak_errors"] = r.weak_errors;
    row["aggregate"] = r.aggregate;
    row["q_drift"] = r.q_drift;
    row["e_drift"] = r.e_drift;
    row["l75_max"] = r.l75_max;
    row["gram_dev"] = r.gram_dev;
    row["husimi_min"] = r.husimi_min;
    row["husimi_mass_err"] = r.husimi_mass_err;
    row["marginal_err"] = r.marginal_err;
    row["tails"] = r.tails;
    row["tail_companion"] = r.tail_companion;
    rows.push_back(row);
  }
  j["rows"] = rows;
  std::ofstream out(path);
  if (!out) fail(Stage::io, "cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_report_csv(const ConvergenceReport& rep, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) fail(Stage::io, "cannot write " + path);
  std::fprintf(fp, "# pwps %s config=%s mode=%s\n", kToolVersion, rep.config_hash.c_str(),
               rep.mode.c_str());
  std::fprintf(fp,
               "hbar,n_members,aggregate,q_drift,e_drift,l75_max,gram_dev,husimi_min,"
               "husimi_mass_err,marginal_err\n");
  for (const auto& r : rep.rows)
    std::fprintf(fp, "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.hbar,
                 r.n_members, r.aggregate, r.q_drift, r.e_drift, r.l75_max, r.gram_dev,
                 r.husimi_min, r.husimi_mass_err, r.marginal_err);
  std::fclose(fp);
}

}  // namespace pwps
