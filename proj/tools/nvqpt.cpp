#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nvqpt/workbench.hpp"

namespace wb = nvqpt::workbench;

int main(int argc, char** argv) {
  CLI::App app{"nvqpt: NV excited-state Ramsey and process tomography workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, noise;
  std::optional<std::uint64_t> seed;
  std::optional<double> eta;
  unsigned workers = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--noise", noise, "Poisson count noise")->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--eta", eta, "transverse fraction kept by excitation")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--workers", workers, "worker threads");
  };
  auto* ramsey = app.add_subcommand("ramsey", "simulate and fit a lab-frame Ramsey fringe");
  auto* qpt = app.add_subcommand("qpt", "simulate tomography datasets and reconstruct chi(t_ES)");
  auto* selftest = app.add_subcommand("selftest", "run the invariant suites");
  add_common(ramsey);
  add_common(qpt);
  selftest->add_option("--seed", seed, "master seed");
  selftest->add_option("--workers", workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto dt = wb::dt_override_ns();
    if (selftest->parsed()) {
      const bool ok = wb::cmd_selftest(seed.value_or(1), dt.value_or(1e-3), workers ? workers : 1, std::cout);
      return ok ? 0 : 1;
    }

    wb::RunConfig cfg;
    if (!config_path.empty()) cfg = wb::load_config(config_path, cfg);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!noise.empty()) cfg.noise = noise == "on";
    if (eta) cfg.model.eta = *eta;
    if (workers) cfg.workers = workers;
    if (dt) cfg.pulses.dt_ns = *dt;
    cfg.validate();

    if (ramsey->parsed()) wb::cmd_ramsey(cfg, std::cout);
    if (qpt->parsed()) wb::cmd_qpt(cfg, std::cout);
    return 0;
  } catch (const wb::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
