#include "nvqpt/invariants.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "nvqpt/optimize.hpp"
#include "nvqpt/parallel.hpp"
#include "nvqpt/qpt.hpp"
#include "nvqpt/ramsey.hpp"

namespace nvqpt::invariants {

namespace {

using spin::kPi;

// Runs `body`, which returns (passed, detail); exceptions count as failures.
template <typename F>
CheckResult run(const std::string& module, const std::string& name, F&& body) {
  CheckResult r{module, name, false, "", 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    std::ostringstream detail;
    detail << std::setprecision(4);
    r.passed = body(detail);
    r.detail = detail.str();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

dynamics::PulseConfig pulses_for(const SelftestOptions& o, const dynamics::PhysicsModel& model) {
  dynamics::PulseConfig c;
  c.dt_ns = o.dt_ns;
  return dynamics::calibrate(c, model);
}

double max_abs(const spin::Matrix4c& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

std::vector<CheckResult> spin_core_checks(const SelftestOptions& o) {
  std::vector<CheckResult> out;
  out.push_back(run("spin-core", "channel linearity", [&](std::ostream& d) {
    auto rng = opt::substream(o.seed, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto chi = spin::random_cptp(rng);
      const auto a = spin::random_density(rng), b = spin::random_density(rng);
      const double w = u(rng);
      const spin::DensityMatrix mix(w * a.matrix() + (1 - w) * b.matrix(), 1e-10);
      const spin::Matrix2c lhs = spin::apply_channel(chi, mix).matrix();
      const spin::Matrix2c rhs =
          w * spin::apply_channel(chi, a).matrix() + (1 - w) * spin::apply_channel(chi, b).matrix();
      worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
    d << "max deviation " << worst;
    return worst <= 1e-12;
  }));
  out.push_back(run("spin-core", "CPTP outputs are states", [&](std::ostream& d) {
    auto rng = opt::substream(o.seed, 2);
    double worst_tp = 0.0, worst_eig = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto chi = spin::random_cptp(rng, 1 + i % 4);
      worst_tp = std::max(worst_tp, chi.tp_defect().cwiseAbs().maxCoeff());
      const auto rho = spin::apply_channel(chi, spin::random_density(rng));
      worst_eig = std::min(worst_eig, rho.min_eigenvalue());
      if (std::abs(rho.trace() - 1.0) > 1e-12) return false;
    }
    d << "tp defect " << worst_tp << ", min eigenvalue " << worst_eig;
    return worst_tp <= 1e-10 && worst_eig >= -1e-12;
  }));
  out.push_back(run("spin-core", "PTM round trip", [&](std::ostream& d) {
    auto rng = opt::substream(o.seed, 3);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto chi = spin::random_cptp(rng);
      worst = std::max(worst, max_abs(spin::chi_from_ptm(spin::ptm_from_chi(chi)).matrix() - chi.matrix()));
    }
    d << "max deviation " << worst;
    return worst <= 1e-12;
  }));
  out.push_back(run("spin-core", "optimize_phi beats grid scan", [&](std::ostream& d) {
    auto rng = opt::substream(o.seed, 4);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto chi = spin::random_cptp(rng);
      const auto best = spin::optimize_phi(chi);
      for (int k = 0; k < 3600; ++k) {
        const double f = spin::process_fidelity(chi, spin::chi_ideal(spin::deg_to_rad(0.1 * k)));
        worst = std::max(worst, f - best.fidelity);
      }
    }
    d << "largest grid excess " << worst;
    return worst <= 1e-12;
  }));
  return out;
}

std::vector<CheckResult> dynamics_checks(const SelftestOptions& o) {
  std::vector<CheckResult> out;
  const dynamics::PhysicsModel model;
  out.push_back(run("pulse-dynamics", "convergence under dt halving", [&](std::ostream& d) {
    const auto pulses = pulses_for(o, model);
    std::vector<dynamics::Timeline> cases;
    for (double t : {-2.0, 0.0, 0.6, 3.0, 10.0}) cases.push_back(ramsey::ramsey_timeline(t, model, pulses));
    for (const auto& e : qpt::build_protocol(0.6, model, pulses)) cases.push_back(e.timeline);
    std::vector<double> diff(cases.size());
    parallel_for(cases.size(), o.workers, [&](std::size_t i) {
      const double a = dynamics::integrate(spin::DensityMatrix(), cases[i], model, o.dt_ns).p0;
      const double b = dynamics::integrate(spin::DensityMatrix(), cases[i], model, 0.5 * o.dt_ns).p0;
      diff[i] = std::abs(a - b);
    });
    const double worst = *std::max_element(diff.begin(), diff.end());
    d << "dt " << o.dt_ns * 1e3 << " ps, max |dp0| " << worst << " over " << cases.size() << " timelines";
    return worst <= 1e-6;
  }));
  out.push_back(run("pulse-dynamics", "transverse decay exponential", [&](std::ostream& d) {
    double worst = 0.0;
    for (double t : {0.5, 1.0, 3.0, 6.0, 12.0}) {
      dynamics::Timeline tl;
      tl.add(dynamics::optical_excitation(0.0));
      tl.t_end_ns = t;
      const auto s = dynamics::integrate(spin::density_from_bloch({1, 0, 0}), tl, model, o.dt_ns);
      const double expect = std::exp(-t / model.tau_star_ns());
      worst = std::max(worst, std::abs(s.rho_final.bloch().transverse() / expect - 1.0));
    }
    d << "max relative error " << worst;
    return worst <= 1e-4;
  }));
  out.push_back(run("pulse-dynamics", "free precession phase", [&](std::ostream& d) {
    double worst = 0.0;
    for (double t : {0.1, 0.37, 1.0, 2.5}) {
      dynamics::Timeline tl;
      tl.add(dynamics::optical_excitation(0.0));
      tl.t_end_ns = t;
      const auto b = dynamics::integrate(spin::density_from_bloch({1, 0, 0}), tl, model, o.dt_ns).rho_final.bloch();
      const double expect = std::remainder(2 * kPi * model.f_es_ghz * t, 2 * kPi);
      worst = std::max(worst, std::abs(spin::rad_to_deg(std::remainder(b.azimuth() - expect, 2 * kPi))));
    }
    d << "max azimuth error " << worst << " deg";
    return worst <= 0.1;
  }));
  out.push_back(run("pulse-dynamics", "trace and hermiticity over 20 ns", [&](std::ostream& d) {
    const auto pulses = pulses_for(o, model);
    const auto tl = ramsey::ramsey_timeline(10.0, model, pulses);
    spin::DensityMatrix rho;
    double worst = 0.0;
    // hand the state over in 1 ns spans and inspect it at every boundary
    for (double a = tl.t_start_ns; a < tl.t_end_ns - 1e-9;) {
      const double b = std::min(a + 1.0, tl.t_end_ns);
      const auto s = dynamics::integrate_span(rho, tl, model, o.dt_ns, a, b);
      const auto& m = s.rho_final.matrix();
      worst = std::max({worst, std::abs(m.trace() - 1.0), (m - m.adjoint()).cwiseAbs().maxCoeff()});
      rho = s.rho_final;
      a = b;
    }
    d << "span " << tl.t_end_ns - tl.t_start_ns << " ns, max defect " << worst;
    return worst <= 1e-8 && tl.t_end_ns - tl.t_start_ns >= 20.0;
  }));
  out.push_back(run("pulse-dynamics", "detuned ES pulse leaves GS spin", [&](std::ostream& d) {
    const auto pulses = pulses_for(o, model);
    dynamics::Timeline tl;
    tl.add(dynamics::microwave_pulse(-5.0, pulses.sigma_es_ns, model.f_es_ghz, 0.5 * kPi, pulses.rabi_es_half_pi_ghz,
                                     0.5 * kPi, pulses.truncation_sigmas));
    tl.add(dynamics::optical_excitation(0.0));
    tl.pre_excitation_control = true;
    const double end = -5.0 + pulses.truncation_sigmas * pulses.sigma_es_ns;
    const double p0 = dynamics::integrate_span(spin::DensityMatrix(), tl, model, o.dt_ns, tl.t_start_ns, end).p0;
    d << "p0 change " << 1.0 - p0;
    return 1.0 - p0 <= 0.03;
  }));
  return out;
}

std::vector<CheckResult> ramsey_checks(const SelftestOptions& o) {
  std::vector<CheckResult> out;
  std::vector<double> grid;
  for (int i = 0; i <= 420; ++i) grid.push_back(-3.0 + 0.05 * i);

  out.push_back(run("ramsey-analysis", "noiseless model round trip", [&](std::ostream& d) {
    ramsey::RamseyFit truth;
    truth.amplitude = 0.89;
    truth.tau_star_ns = 6.0;
    truth.t0_ns = 1.35;
    truth.f_fit_ghz = 2.14;
    truth.phi0_rad = 0.3;
    truth.turnon_width_ns = 0.4;
    ramsey::FringeSeries s;
    for (double t : grid) s.points.push_back({t, truth(t), 0.01});
    const auto fit = ramsey::fit_fringe(s);
    const auto err = (fit.parameters() - truth.parameters()).cwiseAbs().maxCoeff();
    d << "max parameter error " << err;
    return err <= 1e-5;
  }));

  dynamics::PhysicsModel model;
  std::optional<ramsey::FringeSeries> sim;
  out.push_back(run("ramsey-analysis", "simulated fringe: tau*, f_ES, baseline", [&](std::ostream& d) {
    dynamics::PulseConfig pc;
    pc.dt_ns = o.dt_ns;
    sim = ramsey::simulate_fringe(grid, model, pc, std::nullopt, 0.01, o.workers);
    const auto fit = ramsey::fit_fringe(*sim);
    const double tau_err = std::abs(fit.tau_star_ns / model.tau_star_ns() - 1.0);
    const double f_err = std::abs(fit.f_fit_ghz / model.f_es_ghz - 1.0);
    const double base = sim->points.front().p0;
    d << "tau* " << fit.tau_star_ns << " ns, f " << fit.f_fit_ghz << " GHz, p0(-3 ns) " << base;
    return tau_err <= 0.15 && f_err <= 0.005 && std::abs(base - 0.5) <= 0.02;
  }));
  out.push_back(run("ramsey-analysis", "no residual tone beyond 2 sigma", [&](std::ostream& d) {
    if (!sim) throw std::runtime_error("simulated fringe unavailable");
    const auto fit = ramsey::fit_fringe(*sim);
    const auto tone = ramsey::residual_tone(*sim, fit);
    d << "tone " << tone.amplitude << " vs 2 sigma " << 2 * tone.standard_error;
    return tone.amplitude <= 2.0 * tone.standard_error;
  }));
  out.push_back(run("ramsey-analysis", "F monotone in eta", [&](std::ostream& d) {
    std::vector<double> coarse;
    for (int i = 0; i <= 210; ++i) coarse.push_back(-3.0 + 0.1 * i);
    double prev = -1.0;
    bool ok = true;
    for (double eta : {0.5, 0.7, 0.9, 1.0}) {
      auto m = model;
      m.eta = eta;
      dynamics::PulseConfig pc;
      pc.dt_ns = o.dt_ns;
      const auto fit = ramsey::fit_fringe(ramsey::simulate_fringe(coarse, m, pc, std::nullopt, 0.01, o.workers));
      const double f = ramsey::fidelity_from_amplitude(fit, 0.0).fidelity;
      d << "eta " << eta << ": F " << f << "; ";
      ok = ok && f > prev;
      prev = f;
    }
    return ok;
  }));
  return out;
}

std::vector<CheckResult> qpt_checks(const SelftestOptions& o) {
  std::vector<CheckResult> out;
  out.push_back(run("qpt-engine", "inversion exactness", [&](std::ostream& d) {
    auto rng = opt::substream(o.seed, 20);
    double worst = 0.0;
    for (int i = 0; i < o.inversion_trials; ++i) {
      const auto chi = spin::random_cptp(rng, 1 + i % 4);
      const auto est = qpt::expectations_to_chi(qpt::synthesize_dataset(chi, 0.0));
      worst = std::max(worst, max_abs(est.matrix() - chi.matrix()));
    }
    d << o.inversion_trials << " channels, max error " << worst;
    return worst <= 1e-8;
  }));
  out.push_back(run("qpt-engine", "MLE physicality fuzz", [&](std::ostream& d) {
    const int n = o.mle_fuzz_datasets;
    std::vector<double> min_eig(n), tp(n), excess(n);
    std::vector<char> failed(n, 0);
    parallel_for(static_cast<std::size_t>(n), o.workers, [&](std::size_t i) {
      auto rng = opt::substream(o.seed, 100000 + i);
      const auto chi = spin::random_cptp(rng, 1 + static_cast<int>(i % 4));
      const double counts = std::pow(10.0, 3 + static_cast<int>(i % 3));
      const qpt::DatasetNoise noise{{counts, 0.5 * counts}, rng()};
      try {
        qpt::MleOptions mo;
        mo.seed = o.seed + i;
        const auto r = qpt::mle_project(qpt::synthesize_dataset(chi, 0.0, noise), mo);
        min_eig[i] = r.chi.min_eigenvalue();
        tp[i] = r.chi.tp_defect().cwiseAbs().maxCoeff();
        excess[i] = r.cost - r.start_cost;
      } catch (const std::exception&) {
        failed[i] = 1;
      }
    });
    const int fails = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
    const double e = *std::min_element(min_eig.begin(), min_eig.end());
    const double t = *std::max_element(tp.begin(), tp.end());
    const double c = *std::max_element(excess.begin(), excess.end());
    d << n << " datasets, failures " << fails << ", min eigenvalue " << e << ", tp defect " << t
      << ", cost over start " << c;
    return fails == 0 && e >= -1e-10 && t <= 1e-6 && c <= 1e-6;
  }));

  out.push_back(run("qpt-engine", "phase tracks 2 pi f_ES t_ES", [&](std::ostream& d) {
    dynamics::PhysicsModel pure;
    pure.gamma_dephasing_per_ns = pure.gamma_emission_per_ns = 0.0;
    dynamics::PulseConfig pc;
    pc.dt_ns = o.dt_ns;
    const std::vector<double> grid{0.6, 1.6, 2.6, 3.6};
    const auto sets = qpt::simulate_datasets(grid, pure, pc, std::nullopt, o.workers);
    std::vector<double> offs;
    for (const auto& s : sets) {
      const double phi = spin::rad_to_deg(spin::optimize_phi(qpt::mle_project(s).chi).phi);
      offs.push_back(std::remainder(phi - 360.0 * pure.f_es_ghz * s.t_es_ns, 360.0));
    }
    double spread = 0.0;
    for (double a : offs)
      for (double b : offs) spread = std::max(spread, std::abs(std::remainder(a - b, 360.0)));
    d << "offset spread " << spread << " deg";
    return spread <= 2.0;
  }));
  out.push_back(run("qpt-engine", "F(t_ES) non-increasing", [&](std::ostream& d) {
    dynamics::PhysicsModel model;
    dynamics::PulseConfig pc;
    pc.dt_ns = o.dt_ns;
    const auto sets = qpt::simulate_datasets({0.6, 1.6, 2.6, 3.6}, model, pc, std::nullopt, o.workers);
    const auto curve = qpt::evaluate_points(sets);
    bool ok = true;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      d << curve.points[i].fidelity << (i + 1 < curve.points.size() ? ", " : "");
      if (i > 0) ok = ok && curve.points[i].fidelity <= curve.points[i - 1].fidelity + 1e-9;
    }
    return ok;
  }));
  return out;
}

std::vector<CheckResult> run_selftest(const SelftestOptions& o) {
  std::vector<CheckResult> all;
  for (auto* suite : {&spin_core_checks, &dynamics_checks, &ramsey_checks, &qpt_checks}) {
    auto r = (*suite)(o);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

void print_table(std::ostream& os, const std::vector<CheckResult>& results) {
  std::size_t w = 0;
  for (const auto& r : results) w = std::max(w, r.module.size() + r.name.size() + 3);
  for (const auto& r : results) {
    const std::string label = r.module + " / " + r.name;
    os << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(w)) << label << "  "
       << r.detail << '\n';
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
  os << passed << "/" << results.size() << " checks passed\n";
}

}  // namespace nvqpt::invariants
