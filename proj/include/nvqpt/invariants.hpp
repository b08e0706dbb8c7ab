#pragma once

// Property checks shared by `nvqpt selftest` and the acceptance binary.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace nvqpt::invariants {

struct CheckResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestOptions {
  std::uint64_t seed = 1;
  double dt_ns = 1e-3;
  int mle_fuzz_datasets = 1000;
  int inversion_trials = 100;
  unsigned workers = 1;
};

/// Runs every module's invariant suite. Checks are tolerance based so the
/// pass/fail pattern does not depend on the seed.
std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

/// Individual suites, callable on their own.
std::vector<CheckResult> spin_core_checks(const SelftestOptions& options);
std::vector<CheckResult> dynamics_checks(const SelftestOptions& options);
std::vector<CheckResult> ramsey_checks(const SelftestOptions& options);
std::vector<CheckResult> qpt_checks(const SelftestOptions& options);

bool all_passed(const std::vector<CheckResult>& results);
void print_table(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace nvqpt::invariants
