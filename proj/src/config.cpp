#include "pwps/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pwps {

namespace {

std::vector<double> parse_doubles(const std::string& s, const std::string& key) {
  std::istringstream is(s);
  std::vector<double> out;
  double v;
  while (is >> v) out.push_back(v);
  if (out.empty()) fail(Stage::config, "no numeric values for key '" + key + "'");
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  bool saw_x0 = false, saw_p0 = false;

  auto err = [&](const std::string& msg) {
    fail(Stage::config, origin + ":" + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') err("malformed section header");
      section = line.substr(1, line.size() - 2);
      static const char* known[] = {"run",  "grid",    "fields", "state",
                                    "initial", "time", "kinetic", "sweep"};
      bool ok = false;
      for (const char* k : known) ok = ok || section == k;
      if (!ok) err("unknown section '" + section + "'");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) err("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) err("empty key or value");

    auto& sw = cfg.sweep;
    if (section == "run") {
      if (key == "experiment") cfg.experiment = val;
      else if (key == "out") cfg.out_dir = val;
      else if (key == "seed") sw.seed = static_cast<std::uint64_t>(std::stoull(val));
      else if (key == "dimension") sw.d = std::stoi(val);
      else if (key == "sampler") sw.sampler_mode = val;
      else err("unknown key '" + key + "' in [run]");
    } else if (section == "grid") {
      if (key == "n") {
        auto v = parse_doubles(val, key);
        for (std::size_t i = 0; i < v.size() && i < 3; ++i)
          sw.n[i] = static_cast<int>(v[i]);
      } else if (key == "L") {
        auto v = parse_doubles(val, key);
        for (std::size_t i = 0; i < v.size() && i < 3; ++i) sw.L[i] = v[i];
      } else {
        err("unknown key '" + key + "' in [grid]");
      }
    } else if (section == "fields") {
      if (key == "preset") sw.field_preset = val;
      else sw.field_params[key] = std::stod(val);
    } else if (section == "state") {
      if (key == "hbar") {
        cfg.hbar_single = std::stod(val);
        sw.hbars = {cfg.hbar_single};
      } else if (key == "hbar_list") {
        sw.hbars = parse_doubles(val, key);
        cfg.has_hbar_list = true;
        for (std::size_t i = 0; i + 1 < sw.hbars.size(); ++i)
          if (!(sw.hbars[i] > sw.hbars[i + 1])) err("hbar_list must be strictly decreasing");
      } else if (key == "C") {
        sw.C = std::stod(val);
      } else if (key == "sigma_factor") {
        sw.sigma_factor = std::stod(val);
      } else if (key == "chi") {
        auto v = parse_doubles(val, key);
        if (v.size() != 2) err("chi needs two real components");
        sw.chi = {cplx(v[0], 0.0), cplx(v[1], 0.0)};
      } else {
        err("unknown key '" + key + "' in [state]");
      }
    } else if (section == "initial") {
      auto v = parse_doubles(val, key);
      auto put = [&](std::array<double, 3>& dst) {
        for (std::size_t i = 0; i < v.size() && i < 3; ++i) dst[i] = v[i];
      };
      if (key == "x0") { put(sw.f_I.x0); saw_x0 = true; }
      else if (key == "p0") { put(sw.f_I.p0); saw_p0 = true; }
      else if (key == "sx") put(sw.f_I.sx);
      else if (key == "sp") put(sw.f_I.sp);
      else err("unknown key '" + key + "' in [initial]");
    } else if (section == "time") {
      if (key == "T") sw.T = std::stod(val);
      else if (key == "dt") sw.dt0 = std::stod(val);
      else if (key == "dt_scale_hbar") sw.dt_scale_hbar = (val == "true" || val == "1");
      else err("unknown key '" + key + "' in [time]");
    } else if (section == "kinetic") {
      if (key == "particles") sw.n_particles = std::stoi(val);
      else if (key == "dt") sw.dt_kinetic = std::stod(val);
      else err("unknown key '" + key + "' in [kinetic]");
    } else if (section == "sweep") {
      if (key == "battery") sw.battery_size = std::stoi(val);
      else if (key == "battery_width_x") sw.battery_width_x = parse_doubles(val, key);
      else if (key == "battery_width_xi") sw.battery_width_xi = parse_doubles(val, key);
      else if (key == "xi_halfwidth") sw.xi_halfwidth = std::stod(val);
      else if (key == "y_halfwidth_factor") sw.y_halfwidth_factor = std::stod(val);
      else err("unknown key '" + key + "' in [sweep]");
    } else {
      err("key outside any section");
    }
  }

  cfg.sweep.f_I.d = cfg.sweep.d;
  if (!saw_x0) {
    for (int a = 0; a < cfg.sweep.d; ++a) cfg.sweep.f_I.x0[a] = 0.5 * cfg.sweep.L[a];
  }
  (void)saw_p0;

  static const char* experiments[] = {"evolve", "wigner", "vlasov",
                                      "sweep", "ablation", "current"};
  bool ok = false;
  for (const char* e : experiments) ok = ok || cfg.experiment == e;
  if (!ok) fail(Stage::config, "unknown experiment '" + cfg.experiment + "'");
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Stage::config, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string serialize_config(const RunConfig& cfg) {
  const auto& sw = cfg.sweep;
  std::ostringstream os;
  os.precision(17);
  os << "[run]\n";
  os << "experiment = " << cfg.experiment << "\n";
  os << "out = " << cfg.out_dir << "\n";
  os << "seed = " << sw.seed << "\n";
  os << "dimension = " << sw.d << "\n";
  os << "sampler = " << sw.sampler_mode << "\n";
  os << "[grid]\n";
  os << "n =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.n[a];
  os << "\nL =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.L[a];
  os << "\n[fields]\npreset = " << sw.field_preset << "\n";
  for (const auto& [k, v] : sw.field_params) os << k << " = " << v << "\n";
  os << "[state]\n";
  if (cfg.has_hbar_list || sw.hbars.size() > 1) {
    os << "hbar_list =";
    for (double h : sw.hbars) os << " " << h;
    os << "\n";
  } else {
    os << "hbar = " << cfg.hbar_single << "\n";
  }
  os << "C = " << sw.C << "\n";
  os << "sigma_factor = " << sw.sigma_factor << "\n";
  os << "chi = " << sw.chi[0].real() << " " << sw.chi[1].real() << "\n";
  os << "[initial]\nx0 =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.f_I.x0[a];
  os << "\np0 =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.f_I.p0[a];
  os << "\nsx =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.f_I.sx[a];
  os << "\nsp =";
  for (int a = 0; a < sw.d; ++a) os << " " << sw.f_I.sp[a];
  os << "\n[time]\nT = " << sw.T << "\ndt = " << sw.dt0 << "\n";
  os << "dt_scale_hbar = " << (sw.dt_scale_hbar ? "true" : "false") << "\n";
  os << "[kinetic]\nparticles = " << sw.n_particles << "\ndt = " << sw.dt_kinetic << "\n";
  os << "[sweep]\nbattery = " << sw.battery_size << "\n";
  os << "battery_width_x =";
  for (double w : sw.battery_width_x) os << " " << w;
  os << "\nbattery_width_xi =";
  for (double w : sw.battery_width_xi) os << " " << w;
  os << "\nxi_halfwidth = " << sw.xi_halfwidth << "\n";
  os << "y_halfwidth_factor = " << sw.y_halfwidth_factor << "\n";
  return os.str();
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = serialize_config(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int exit_code_for(Stage s) {
  switch (s) {
    case Stage::config: return 2;
    case Stage::spectral: return 3;
    case Stage::fields: return 4;
    case Stage::quantum: return 5;
    case Stage::wigner: return 6;
    case Stage::kinetic: return 7;
    case Stage::limitlab: return 8;
    case Stage::io: return 9;
  }
  return 1;
}

// ---------------------------------------------------------------------------

namespace {

Grid cfg_grid(const SweepConfig& sw) {
  return make_grid(sw.d, std::span<const int>(sw.n.data(), sw.d),
                   std::span<const double>(sw.L.data(), sw.d));
}

void run_evolve(const RunConfig& cfg, const std::string& hash) {
  const auto& sw = cfg.sweep;
  Grid grid = cfg_grid(sw);
  FieldSet fields = preset_fields(sw.field_preset, grid, sw.field_params);
  PhaseSampler sampler(sw.f_I, sw.sampler_mode, sw.seed);
  const double hbar = sw.hbars.front();
  MixedState s0 = build_mixed_state(grid, hbar, sw.C, sampler, sw.chi,
                                    sw.sigma_factor * std::sqrt(hbar));
  Trajectory traj = evolve_pauli_poisson(s0, fields, sw.T, sw.dt_for(hbar), EvolveOpts{});
  write_diagnostics_csv(traj, cfg.out_dir + "/evolve_diagnostics.csv", hash);
  const ScalarField rho = density(traj.states.back());
  std::vector<double> rr(rho.v.size());
  for (std::size_t i = 0; i < rr.size(); ++i) rr[i] = rho.v[i].real();
  write_field_dump_real(cfg.out_dir + "/evolve_rho_final.pwps", grid, rr, 1);
  write_fieldset(fields, cfg.out_dir, "fields", hash);
}

void run_wigner(const RunConfig& cfg, const std::string& hash) {
  const auto& sw = cfg.sweep;
  Grid grid = cfg_grid(sw);
  PhaseSampler sampler(sw.f_I, sw.sampler_mode, sw.seed);
  const double hbar = sw.hbars.front();
  MixedState s0 = build_mixed_state(grid, hbar, sw.C, sampler, sw.chi,
                                    sw.sigma_factor * std::sqrt(hbar));
  PhaseGridOpts pgo;
  pgo.y_halfwidth = sw.y_halfwidth_factor / std::sqrt(hbar);
  PhaseGrid pg = make_phase_grid(grid, hbar, pgo);
  WignerFunction f = wigner_transform(s0, pg);
  WignerFunction ft = husimi(f);
  // dump: phase layout [x][xi] with a sidecar naming the grids
  write_field_dump_real(cfg.out_dir + "/wigner_f.pwps", grid, f.f,
                        static_cast<int>(pg.xi_size()));
  write_field_dump_real(cfg.out_dir + "/wigner_husimi.pwps", grid, ft.f,
                        static_cast<int>(pg.xi_size()));
  std::FILE* fp = std::fopen((cfg.out_dir + "/wigner_meta.csv").c_str(), "w");
  if (!fp) fail(Stage::io, "cannot write wigner metadata");
  std::fprintf(fp, "# pwps %s config=%s\n", kToolVersion, hash.c_str());
  std::fprintf(fp, "hbar,pad,n_y,dxi,Xi,mass,min_husimi,imag_residue\n");
  std::fprintf(fp, "%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", hbar, pg.pad, pg.n_y[0],
               pg.dxi[0], pg.Xi[0], total_mass(f), min_value(ft), f.imag_residue);
  std::fclose(fp);
}

void run_vlasov(const RunConfig& cfg, const std::string& hash) {
  const auto& sw = cfg.sweep;
  Grid grid = cfg_grid(sw);
  FieldSet fields = preset_fields(sw.field_preset, grid, sw.field_params);
  PhaseSampler sampler(sw.f_I, sw.sampler_mode, sw.seed);
  KineticTrajectory traj = solve_vlasov_poisson(sampler, fields, sw.T, sw.dt_kinetic,
                                                sw.n_particles, grid, true);
  std::FILE* fp = std::fopen((cfg.out_dir + "/vlasov_energies.csv").c_str(), "w");
  if (!fp) fail(Stage::io, "cannot write vlasov energies");
  std::fprintf(fp, "# pwps %s config=%s\n", kToolVersion, hash.c_str());
  std::fprintf(fp, "t,E_kin,E_field,E_total,px,py,pz\n");
  for (std::size_t i = 0; i < traj.t.size(); ++i)
    std::fprintf(fp, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", traj.t[i], traj.E_kin[i],
                 traj.E_field[i], traj.E_total[i], traj.momentum[i][0], traj.momentum[i][1],
                 traj.momentum[i][2]);
  std::fclose(fp);
  write_particles(traj.final_state, cfg.out_dir + "/vlasov_particles.pwps");
}

}  // namespace

RunOutcome run_experiment(const RunConfig& cfg, bool dry_run) {
  RunOutcome out;
  try {
    validate(cfg.sweep);
    if (dry_run) return out;
    std::filesystem::create_directories(cfg.out_dir);
    const std::string hash = config_hash(cfg);
    {
      std::ofstream meta(cfg.out_dir + "/config_used.ini");
      meta << "# pwps " << kToolVersion << " config=" << hash << "\n";
      meta << serialize_config(cfg);
    }
    if (cfg.experiment == "evolve") {
      run_evolve(cfg, hash);
    } else if (cfg.experiment == "wigner") {
      run_wigner(cfg, hash);
    } else if (cfg.experiment == "vlasov") {
      run_vlasov(cfg, hash);
    } else if (cfg.experiment == "sweep") {
      ConvergenceReport rep = run_hbar_sweep(cfg.sweep, "linear");
      rep.config_hash = hash;
      write_report_json(rep, cfg.out_dir + "/sweep_report.json");
      write_report_csv(rep, cfg.out_dir + "/sweep_report.csv");
    } else if (cfg.experiment == "ablation") {
      AblationReport rep = sg_ablation(cfg.sweep);
      std::FILE* fp = std::fopen((cfg.out_dir + "/ablation.csv").c_str(), "w");
      if (!fp) fail(Stage::io, "cannot write ablation report");
      std::fprintf(fp, "# pwps %s config=%s\n", kToolVersion, hash.c_str());
      std::fprintf(fp, "hbar,distance\n");
      for (std::size_t i = 0; i < rep.hbars.size(); ++i)
        std::fprintf(fp, "%.17g,%.17g\n", rep.hbars[i], rep.distances[i]);
      std::fclose(fp);
    } else if (cfg.experiment == "current") {
      CurrentReport rep = current_convergence(cfg.sweep, "linear");
      std::FILE* fp = std::fopen((cfg.out_dir + "/current.csv").c_str(), "w");
      if (!fp) fail(Stage::io, "cannot write current report");
      std::fprintf(fp, "# pwps %s config=%s\n", kToolVersion, hash.c_str());
      std::fprintf(fp, "hbar,paired_error,spin_curl\n");
      for (std::size_t i = 0; i < rep.hbars.size(); ++i)
        std::fprintf(fp, "%.17g,%.17g,%.17g\n", rep.hbars[i], rep.paired_errors[i],
                     rep.spin_curl_mags[i]);
      std::fprintf(fp, "# spin_slope=%.17g\n", rep.spin_slope);
      std::fclose(fp);
    }
  } catch (const Error& e) {
    out.exit_code = exit_code_for(e.stage());
    out.stage_tag = stage_name(e.stage());
    out.message = e.what();
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.stage_tag = "unknown";
    out.message = e.what();
  }
  return out;
}

}  // namespace pwps
