#include "nvqpt/workbench.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "nvqpt/invariants.hpp"
#include "nvqpt/qpt.hpp"
#include "nvqpt/ramsey.hpp"
#include "nvqpt/svg.hpp"

namespace nvqpt::workbench {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  auto os = open_out(p);
  os << j.dump(2) << '\n';
}

std::string delay_tag(double t) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << t << "ns";
  return s.str();
}

std::vector<double> grid_from_json(const nlohmann::json& j, const char* key) {
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      if (k != "start_ns" && k != "stop_ns" && k != "step_ns")
        throw UsageError(std::string("unknown key '") + k + "' in " + key);
    return linear_grid(j.at("start_ns").get<double>(), j.at("stop_ns").get<double>(), j.at("step_ns").get<double>());
  }
  throw UsageError(std::string(key) + " must be a list of delays or {start_ns, stop_ns, step_ns}");
}

// Run-level stage context for error messages.
template <typename F>
auto stage(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(what + ": " + e.what());
  }
}

void prepare_output(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + c.output_dir.string() + ": " + ec.message());
}

}  // namespace

RunConfig::RunConfig() : ramsey_grid_ns(linear_grid(-3.0, 18.0, 0.05)) {}

void RunConfig::validate() const {
  if (ramsey_grid_ns.empty()) throw UsageError("ramsey grid is empty");
  if (qpt_t_es_ns.empty()) throw UsageError("qpt t_es list is empty");
  if (!(counts_hi > counts_lo && counts_lo > 0)) throw UsageError("counts need hi > lo > 0");
  if (mc_replicas != 0 && mc_replicas < 100) throw UsageError("mc_replicas must be 0 or at least 100");
  std::set<double> seen;
  for (double t : qpt_t_es_ns)
    if (!seen.insert(t).second) throw UsageError("qpt t_es values must be distinct");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!(pulses.dt_ns > 0)) throw UsageError("dt must be positive");
}

std::vector<double> linear_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !(stop >= start)) throw UsageError("grid needs step > 0 and stop >= start");
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
  std::vector<double> g;
  for (long i = 0; i <= n; ++i) g.push_back(start + static_cast<double>(i) * step);
  return g;
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig c) {
  static const std::set<std::string> known = {"model",  "pulses",      "ramsey_grid_ns", "qpt_t_es_ns",
                                              "counts", "noise",       "seed",           "output_dir",
                                              "mc_replicas", "workers", "svg"};
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw UsageError("unknown config key '" + k + "'");
  try {
    if (j.contains("model")) c.model = dynamics::model_from_json(j.at("model"), c.model);
    if (j.contains("pulses")) c.pulses = dynamics::pulse_config_from_json(j.at("pulses"), c.pulses);
    if (j.contains("ramsey_grid_ns")) c.ramsey_grid_ns = grid_from_json(j.at("ramsey_grid_ns"), "ramsey_grid_ns");
    if (j.contains("qpt_t_es_ns")) c.qpt_t_es_ns = grid_from_json(j.at("qpt_t_es_ns"), "qpt_t_es_ns");
    if (j.contains("counts")) {
      c.counts_hi = j.at("counts").value("hi", c.counts_hi);
      c.counts_lo = j.at("counts").value("lo", c.counts_lo);
    }
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.mc_replicas = j.value("mc_replicas", c.mc_replicas);
    c.workers = j.value("workers", c.workers);
    c.svg = j.value("svg", c.svg);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json config_to_json(const RunConfig& c) {
  return {{"model", dynamics::model_to_json(c.model)},
          {"pulses", dynamics::pulse_config_to_json(c.pulses)},
          {"ramsey_grid_ns", c.ramsey_grid_ns},
          {"qpt_t_es_ns", c.qpt_t_es_ns},
          {"counts", {{"hi", c.counts_hi}, {"lo", c.counts_lo}}},
          {"noise", c.noise},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"mc_replicas", c.mc_replicas},
          {"workers", c.workers},
          {"svg", c.svg}};
}

RunConfig load_config(const fs::path& path, RunConfig defaults) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, defaults);
}

std::optional<double> dt_override_ns() {
  const char* env = std::getenv("NVQPT_DT_PS");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  const double ps = std::strtod(env, &end);
  if (end == env || *end != '\0' || !(ps > 0)) throw UsageError(std::string("NVQPT_DT_PS is not a positive number: ") + env);
  return ps * 1e-3;
}

void cmd_ramsey(const RunConfig& c, std::ostream& log) {
  c.validate();
  prepare_output(c);
  const dynamics::PhotonCounter counter{c.counts_hi, c.counts_lo};
  const ramsey::FringeNoise noise{counter, c.noise ? std::optional<std::uint64_t>(c.seed) : std::nullopt};

  const auto pulses = stage("ramsey: calibration", [&] { return dynamics::calibrate(c.pulses, c.model); });
  const auto data = stage("ramsey: simulation", [&] {
    return ramsey::simulate_fringe(c.ramsey_grid_ns, c.model, pulses, noise, 0.01, c.workers);
  });
  const auto fit = stage("ramsey: fit", [&] { return ramsey::fit_fringe(data); });

  {
    auto os = open_out(c.output_dir / "fringe.csv");
    ramsey::write_fringe_csv(os, data);
  }
  {
    auto os = open_out(c.output_dir / "ramsey_overlay.csv");
    ramsey::write_overlay_csv(os, data, fit);
  }
  auto report = ramsey::fit_report_json(fit);
  double ss = 0.0;
  for (const auto& p : data.points) ss += std::pow(p.p0 - fit(p.t_es_ns), 2);
  report["residual_rms"] = std::sqrt(ss / data.points.size());
  report["seed"] = c.seed;
  report["noise"] = c.noise;
  report["model"] = dynamics::model_to_json(c.model);
  report["pulses"] = dynamics::pulse_config_to_json(pulses);
  write_json(c.output_dir / "ramsey_fit.json", report);

  if (c.svg) {
    svg::Chart chart{"Lab-frame Ramsey fringe", "t_ES (ns)", "P(|0>)", 720, 420, {}};
    svg::Series pts{"simulated", data.times(), data.values(), "#1f77b4", true};
    svg::Series model{"fit", {}, {}, "#d62728", false};
    for (double t : linear_grid(data.points.front().t_es_ns, data.points.back().t_es_ns, 0.01)) {
      model.x.push_back(t);
      model.y.push_back(fit(t));
    }
    chart.series = {pts, model};
    auto os = open_out(c.output_dir / "ramsey.svg");
    svg::write_chart(os, chart);
  }
  const auto f0 = ramsey::fidelity_from_amplitude(fit, 0.0);
  log << "ramsey: " << data.points.size() << " points, tau* = " << fit.tau_star_ns << " +- "
      << fit.sigmas(ramsey::kTauStar) << " ns, f = " << fit.f_fit_ghz << " GHz, A(t=0) = "
      << fit.amplitude_at(0.0).first << ", F = " << f0.fidelity << " +- " << f0.sigma << '\n';
}

void cmd_qpt(const RunConfig& c, std::ostream& log) {
  c.validate();
  prepare_output(c);
  const dynamics::PhotonCounter counter{c.counts_hi, c.counts_lo};
  const qpt::DatasetNoise noise{counter, c.noise ? std::optional<std::uint64_t>(c.seed) : std::nullopt};

  const auto pulses = stage("qpt: calibration", [&] { return dynamics::calibrate(c.pulses, c.model); });
  const auto sets = stage("qpt: simulation", [&] {
    return qpt::simulate_datasets(c.qpt_t_es_ns, c.model, pulses, noise, c.workers);
  });
  for (const auto& d : sets) write_json(c.output_dir / ("qpt_dataset_" + delay_tag(d.t_es_ns) + ".json"), qpt::dataset_to_json(d));

  qpt::CurveOptions opts;
  opts.mc_replicas = c.mc_replicas;
  opts.seed = c.seed;
  opts.mle.seed = c.seed;
  opts.workers = c.workers;
  opts.expected_phi_rate_deg_per_ns = 360.0 * c.model.f_es_ghz;
  auto curve = stage("qpt: reconstruction", [&] { return qpt::evaluate_points(sets, opts); });

  std::optional<std::string> warning;
  if (curve.points.size() >= 2) {
    stage("qpt: extrapolation", [&] {
      qpt::extrapolate(curve);
      return 0;
    });
  } else {
    warning = "single t_es value: extrapolation fields left null";
    log << "warning: " << *warning << '\n';
  }

  for (const auto& p : curve.points)
    write_json(c.output_dir / ("chi_" + delay_tag(p.t_es_ns) + ".json"), qpt::chi_result_json(p, c.seed));
  auto cj = qpt::curve_to_json(curve);
  cj["seed"] = c.seed;
  cj["noise"] = c.noise;
  cj["phi_unwrap_reference_deg_per_ns"] = *opts.expected_phi_rate_deg_per_ns;
  cj["warning"] = warning ? nlohmann::json(*warning) : nlohmann::json(nullptr);
  write_json(c.output_dir / "fidelity_curve.json", cj);
  {
    auto os = open_out(c.output_dir / "fidelity_curve.csv");
    os << std::setprecision(12);
    qpt::write_curve_csv(os, curve);
  }

  if (c.svg) {
    std::vector<double> t, f, phi;
    for (const auto& p : curve.points) {
      t.push_back(p.t_es_ns);
      f.push_back(p.fidelity);
      phi.push_back(p.phi_deg);
    }
    svg::Chart fc{"Process fidelity vs t_ES", "t_ES (ns)", "F", 720, 420, {{"F(t_ES)", t, f, "#1f77b4", true}}};
    if (curve.intercept) {
      svg::Series line{"linear guide", {0.0, t.back()}, {*curve.intercept, *curve.intercept + *curve.slope_per_ns * t.back()}, "#7f7f7f", false};
      fc.series.push_back(line);
    }
    auto os = open_out(c.output_dir / "fidelity_curve.svg");
    svg::write_chart(os, fc);
    svg::Chart pc{"Optimal rotation angle vs t_ES", "t_ES (ns)", "phi (deg)", 720, 420, {{"phi(t_ES)", t, phi, "#d62728", true}}};
    auto os2 = open_out(c.output_dir / "phase_curve.svg");
    svg::write_chart(os2, pc);
  }

  for (const auto& p : curve.points)
    log << "qpt: t_es = " << p.t_es_ns << " ns  F = " << p.fidelity << " +- " << p.sigma_f << "  phi = " << p.phi_deg
        << " +- " << p.sigma_phi_deg << " deg\n";
  if (curve.intercept)
    log << "qpt: extrapolated F0 = " << *curve.intercept << " +- " << *curve.intercept_sigma
        << ", phi slope = " << *curve.phi_slope_deg_per_ns << " deg/ns\n";
}

bool cmd_selftest(std::uint64_t seed, double dt_ns, unsigned workers, std::ostream& out) {
  invariants::SelftestOptions o;
  o.seed = seed;
  o.dt_ns = dt_ns;
  o.workers = workers;
  const auto results = invariants::run_selftest(o);
  invariants::print_table(out, results);
  return invariants::all_passed(results);
}

}  // namespace nvqpt::workbench
