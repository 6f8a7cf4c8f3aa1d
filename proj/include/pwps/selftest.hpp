#pragma once

// Built-in quick verification battery behind `pwps selftest`: exercises each
// subsystem at reduced scale, prints one pass/fail line per check, and writes
// a deterministic JSON report (byte-identical for identical seeds).

#include <cstdio>
#include <string>

namespace pwps {

bool run_selftest(const std::string& out_dir, long long seed, std::FILE* log);

}  // namespace pwps
