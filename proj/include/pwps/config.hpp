#pragma once

// Run configuration: a line-oriented [section] / key = value format chosen
// for diff-friendly experiment logs. Unknown sections or keys are errors, so
// misspelled settings never fall back to silent defaults.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pwps/limitlab.hpp"

namespace pwps {

struct RunConfig {
  std::string experiment = "sweep";  // evolve|wigner|vlasov|sweep|ablation|current
  std::string out_dir = "out";
  SweepConfig sweep;                 // shared numerical parameters
  double hbar_single = 0.25;         // used by evolve/wigner/vlasov
  bool has_hbar_list = false;
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);
std::string serialize_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

struct RunOutcome {
  int exit_code = 0;
  std::string stage_tag;
  std::string message;
};

RunOutcome run_experiment(const RunConfig& cfg, bool dry_run);

int exit_code_for(Stage s);

}  // namespace pwps
