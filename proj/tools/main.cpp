// pwps command-line driver: batch experiments from a config file, plus a
// built-in deterministic self-test battery.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "pwps/config.hpp"
#include "pwps/selftest.hpp"

namespace {

int run_verb(const std::string& verb, const std::string& config_path,
             const std::string& out_dir, long long seed, bool dry_run) {
  using namespace pwps;
  RunConfig cfg;
  try {
    if (!config_path.empty()) {
      cfg = parse_config(config_path);
    } else if (verb != "selftest") {
      fail(Stage::config, "a --config file is required for this command");
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "stage=%s %s\n", stage_name(e.stage()), e.what());
    return exit_code_for(e.stage());
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed >= 0) cfg.sweep.seed = static_cast<std::uint64_t>(seed);

  // the verb overrides the experiment named in the file
  if (verb == "evolve") cfg.experiment = "evolve";
  else if (verb == "wigner") cfg.experiment = "wigner";
  else if (verb == "vlasov") cfg.experiment = "vlasov";
  else if (verb == "sweep") cfg.experiment = "sweep";
  else if (verb == "ablate-sg") cfg.experiment = "ablation";
  else if (verb == "current") cfg.experiment = "current";

  if (verb == "selftest") {
    if (cfg.out_dir.empty()) cfg.out_dir = "out";
    std::filesystem::create_directories(cfg.out_dir);
    const bool ok = run_selftest(cfg.out_dir, seed >= 0 ? seed : 1, stdout);
    return ok ? 0 : 10;
  }

  RunOutcome out = run_experiment(cfg, dry_run);
  if (out.exit_code != 0)
    std::fprintf(stderr, "stage=%s %s\n", out.stage_tag.c_str(), out.message.c_str());
  return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pwps: mixed-state spinor dynamics, phase-space transforms and "
               "their kinetic limit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed = -1;
  int jobs = 1;
  bool dry_run = false;
  app.add_option("--config", config_path, "configuration file");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--seed", seed, "random seed (overrides config)");
  app.add_option("--jobs", jobs, "worker cap (reserved; the solvers run serially)");
  app.add_flag("--dry-run", dry_run, "validate the configuration and exit");

  for (const char* verb : {"evolve", "wigner", "vlasov", "sweep", "ablate-sg",
                           "current", "selftest"})
    app.add_subcommand(verb);

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();
  return run_verb(verb, config_path, out_dir, seed, dry_run);
}
