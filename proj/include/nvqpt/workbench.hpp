#pragma once

// Command orchestration behind the `nvqpt` executable: config handling and the
// ramsey / qpt / selftest runs that write CSV, JSON and SVG outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvqpt/pulse_dynamics.hpp"

namespace nvqpt::workbench {

/// Bad flags or config contents; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  dynamics::PhysicsModel model;
  dynamics::PulseConfig pulses;
  std::vector<double> ramsey_grid_ns;  ///< default -3 .. 18 ns in 50 ps steps
  std::vector<double> qpt_t_es_ns{0.6, 1.6, 2.6, 3.6};
  double counts_hi = 1e5;
  double counts_lo = 5e4;
  bool noise = true;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "nvqpt_out";
  int mc_replicas = 100;  ///< 0 disables the Monte Carlo error bars
  unsigned workers = 1;
  bool svg = true;

  RunConfig();
  /// Throws UsageError.
  void validate() const;
};

/// Keys absent from `j` keep the values of `defaults`; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, RunConfig defaults = {});
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path, RunConfig defaults = {});

/// Evenly spaced grid including both ends (to rounding).
std::vector<double> linear_grid(double start, double stop, double step);

/// Writes fringe.csv, ramsey_fit.json, ramsey_overlay.csv (and ramsey.svg).
void cmd_ramsey(const RunConfig& config, std::ostream& log);

/// Writes one dataset and one chi JSON per delay, fidelity_curve.json,
/// fidelity_curve.csv (and SVG charts).
void cmd_qpt(const RunConfig& config, std::ostream& log);

/// Prints the invariant table; returns true when every check passes.
bool cmd_selftest(std::uint64_t seed, double dt_ns, unsigned workers, std::ostream& out);

/// Integrator step from NVQPT_DT_PS, if set. Throws UsageError on junk.
std::optional<double> dt_override_ns();

}  // namespace nvqpt::workbench
