#include "nvqpt/pulse_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace nvqpt::dynamics {

namespace {

using spin::cplx;
using spin::kPi;
using spin::Matrix2c;

constexpr double kTwoPi = 2.0 * kPi;

// Right-hand side of the master equation for H = hz sigma_z + hx sigma_x and a
// sigma_z Lindblad channel of rate `r` (coherences decay at 2r).
inline Matrix2c rhs(const Matrix2c& rho, double hz, double hx, double r) {
  const cplx i{0.0, 1.0};
  const cplx r00 = rho(0, 0), r01 = rho(0, 1), r10 = rho(1, 0), r11 = rho(1, 1);
  Matrix2c c;  // [H, rho]
  c(0, 0) = hx * (r10 - r01);
  c(0, 1) = 2.0 * hz * r01 + hx * (r11 - r00);
  c(1, 0) = -2.0 * hz * r10 + hx * (r00 - r11);
  c(1, 1) = hx * (r01 - r10);
  Matrix2c d = -i * c;
  d(0, 1) -= 2.0 * r * r01;
  d(1, 0) -= 2.0 * r * r10;
  return d;
}

void check_structure(const Timeline& t) {
  int excitations = 0;
  for (const auto& e : t.events) {
    if (e.kind == PulseKind::optical_excitation) {
      ++excitations;
    } else if (!(e.sigma_ns > 0.0)) {
      throw std::invalid_argument("microwave pulse needs sigma > 0");
    }
  }
  if (excitations != 1) throw std::invalid_argument("timeline needs exactly one optical excitation event");
  if (!(t.t_end_ns >= t.t_start_ns)) throw std::invalid_argument("timeline end precedes start");
  const double tx = t.excitation_ns();
  if (tx < t.t_start_ns || tx > t.t_end_ns) throw std::invalid_argument("excitation outside the timeline window");
}

}  // namespace

double PhysicsModel::tau_star_ns() const { return 1.0 / (gamma_dephasing_per_ns + gamma_emission_per_ns); }

PhysicsModel PhysicsModel::with_tau_star(double tau_ns) const {
  if (!(tau_ns > 0.0)) throw std::invalid_argument("tau* must be positive");
  PhysicsModel m = *this;
  m.gamma_dephasing_per_ns = 1.0 / tau_ns - m.gamma_emission_per_ns;
  if (m.gamma_dephasing_per_ns < 0.0) throw std::invalid_argument("tau* shorter than the emission limit");
  return m;
}

void PhysicsModel::validate() const {
  for (double r : {gamma_dephasing_per_ns, gamma_emission_per_ns, gamma_0_per_ns, gamma_m1_per_ns})
    if (!(r >= 0.0)) throw std::invalid_argument("rates must be non-negative");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  if (!(f_gs_ghz > 0.0 && f_es_ghz > 0.0)) throw std::invalid_argument("Larmor frequencies must be positive");
}

double PulseEvent::start_ns() const {
  return kind == PulseKind::microwave ? center_ns - truncation_sigmas * sigma_ns : center_ns;
}

double PulseEvent::end_ns() const {
  return kind == PulseKind::microwave ? center_ns + truncation_sigmas * sigma_ns : center_ns;
}

double PulseEvent::envelope(double t) const {
  if (kind != PulseKind::microwave) return 0.0;
  const double u = (t - center_ns) / sigma_ns;
  if (std::abs(u) > truncation_sigmas) return 0.0;
  return rabi_peak_ghz * std::exp(-0.5 * u * u);
}

double PulseEvent::drive(double t) const {
  const double env = envelope(t);
  if (env == 0.0) return 0.0;
  return kTwoPi * env * std::cos(kTwoPi * carrier_ghz * t + carrier_phase_rad);
}

double PulseEvent::axis_phase_rad() const {
  return std::remainder(carrier_phase_rad + kTwoPi * carrier_ghz * center_ns, kTwoPi);
}

PulseEvent microwave_pulse(double center_ns, double sigma_ns, double carrier_ghz, double axis_phase_rad,
                           double rabi_peak_ghz, double target_angle_rad, double truncation_sigmas) {
  PulseEvent e;
  e.kind = PulseKind::microwave;
  e.center_ns = center_ns;
  e.sigma_ns = sigma_ns;
  e.truncation_sigmas = truncation_sigmas;
  e.carrier_ghz = carrier_ghz;
  e.carrier_phase_rad = std::remainder(axis_phase_rad - kTwoPi * carrier_ghz * center_ns, kTwoPi);
  e.rabi_peak_ghz = rabi_peak_ghz;
  e.target_angle_rad = target_angle_rad;
  return e;
}

PulseEvent optical_excitation(double t_ns) {
  PulseEvent e;
  e.kind = PulseKind::optical_excitation;
  e.center_ns = t_ns;
  return e;
}

void Timeline::add(const PulseEvent& e) {
  const bool first = events.empty();
  auto it = std::upper_bound(events.begin(), events.end(), e.center_ns,
                             [](double c, const PulseEvent& x) { return c < x.center_ns; });
  events.insert(it, e);
  if (first) {
    t_start_ns = e.start_ns();
    t_end_ns = e.end_ns();
  } else {
    t_start_ns = std::min(t_start_ns, e.start_ns());
    t_end_ns = std::max(t_end_ns, e.end_ns());
  }
}

double Timeline::excitation_ns() const {
  for (const auto& e : events)
    if (e.kind == PulseKind::optical_excitation) return e.center_ns;
  throw std::invalid_argument("timeline has no optical excitation event");
}

void Timeline::validate(const PhysicsModel& model) const {
  check_structure(*this);
  for (std::size_t i = 1; i < events.size(); ++i)
    if (events[i].center_ns < events[i - 1].center_ns)
      throw std::invalid_argument("timeline events are not sorted by center time");
  const double tx = excitation_ns();
  constexpr double tol = 1e-9;
  for (const auto& e : events) {
    if (e.kind != PulseKind::microwave) continue;
    if (e.start_ns() < t_start_ns - tol || e.end_ns() > t_end_ns + tol)
      throw std::invalid_argument("microwave pulse extends beyond the timeline window");
    const bool before = e.center_ns < tx;
    const bool is_gs = std::abs(e.carrier_ghz - model.f_gs_ghz) <= tol;
    const bool is_es = std::abs(e.carrier_ghz - model.f_es_ghz) <= tol;
    if (before && !is_gs && !(pre_excitation_control && is_es)) {
      std::ostringstream msg;
      msg << "pulse centered at " << e.center_ns << " ns precedes excitation but its carrier " << e.carrier_ghz
          << " GHz is not f_gs";
      throw std::invalid_argument(msg.str());
    }
    if (!before && !is_es) {
      std::ostringstream msg;
      msg << "pulse centered at " << e.center_ns << " ns follows excitation but its carrier " << e.carrier_ghz
          << " GHz is not f_es";
      throw std::invalid_argument(msg.str());
    }
  }
}

DensityMatrix excite(const DensityMatrix& rho_gs, const PhysicsModel& model) {
  Matrix2c m = rho_gs.matrix();
  m(0, 1) *= model.eta;
  m(1, 0) *= model.eta;
  return DensityMatrix::unchecked(m);
}

SimOutcome integrate_span(const DensityMatrix& rho0, const Timeline& timeline, const PhysicsModel& model, double dt,
                          double from_ns, double to_ns, double sample_every_ns) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  model.validate();
  check_structure(timeline);
  if (!(from_ns >= timeline.t_start_ns - 1e-12 && to_ns <= timeline.t_end_ns + 1e-12 && from_ns <= to_ns))
    throw std::invalid_argument("integration span must lie inside the timeline window");
  const double tx = timeline.excitation_ns();
  const bool finish = to_ns >= timeline.t_end_ns - 1e-12;

  std::vector<const PulseEvent*> pulses;
  std::vector<double> cuts{from_ns, to_ns};
  if (tx > from_ns && tx < to_ns) cuts.push_back(tx);
  for (const auto& e : timeline.events) {
    if (e.kind != PulseKind::microwave) continue;
    pulses.push_back(&e);
    for (double c : {e.start_ns(), e.end_ns()})
      if (c > from_ns && c < to_ns) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             cuts.end());

  const double es_rate = 0.5 * (model.gamma_dephasing_per_ns + model.gamma_emission_per_ns);
  Matrix2c rho = rho0.matrix();
  // a state handed over after the excitation instant is already in the ES
  bool excited = from_ns > tx;
  SimOutcome out;

  double next_sample = from_ns;
  auto sample = [&](double t, bool force) {
    if (sample_every_ns <= 0.0) return;
    if (!force && t + 1e-12 < next_sample) return;
    out.trajectory.push_back(
        {t, DensityMatrix::unchecked(rho).bloch(), excited ? Manifold::excited : Manifold::ground});
    next_sample = t + sample_every_ns;
  };

  if (!excited && tx <= from_ns && from_ns < to_ns) {
    rho = excite(DensityMatrix::unchecked(rho), model).matrix();
    excited = true;
  }
  sample(from_ns, true);

  std::vector<const PulseEvent*> active;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double a = cuts[s];
    const double b = cuts[s + 1];
    if (!excited && a >= tx) {
      rho = excite(DensityMatrix::unchecked(rho), model).matrix();
      excited = true;
      sample(a, true);
    }
    const double hz = kPi * (excited ? model.f_es_ghz : model.f_gs_ghz);
    const double r = excited ? es_rate : 0.0;
    active.clear();
    for (const auto* p : pulses)
      if (p->start_ns() < b && p->end_ns() > a) active.push_back(p);

    const auto n = static_cast<long>(std::max(1.0, std::ceil((b - a) / dt - 1e-9)));
    const double h = (b - a) / static_cast<double>(n);

    if (active.empty()) {
      // free precession and dephasing have a closed form
      const cplx step = std::exp(cplx(-2.0 * r * h, -2.0 * hz * h));
      for (long k = 0; k < n; ++k) {
        rho(0, 1) *= step;
        rho(1, 0) = std::conj(rho(0, 1));
        sample(a + static_cast<double>(k + 1) * h, false);
      }
      continue;
    }

    // Segments never straddle a truncation edge, so active pulses are evaluated
    // without the window test; rounding at the edge would otherwise toggle the
    // envelope between 0 and its edge value.
    auto hx = [&](double t) {
      double v = 0.0;
      for (const auto* p : active) {
        const double u = (t - p->center_ns) / p->sigma_ns;
        v += kTwoPi * p->rabi_peak_ghz * std::exp(-0.5 * u * u) *
             std::cos(kTwoPi * p->carrier_ghz * t + p->carrier_phase_rad);
      }
      return v;
    };

    for (long k = 0; k < n; ++k) {
      const double t = a + static_cast<double>(k) * h;
      const double x0 = hx(t);
      const double xm = hx(t + 0.5 * h);
      const double x1 = hx(t + h);
      const Matrix2c k1 = rhs(rho, hz, x0, r);
      const Matrix2c k2 = rhs(rho + (0.5 * h) * k1, hz, xm, r);
      const Matrix2c k3 = rhs(rho + (0.5 * h) * k2, hz, xm, r);
      const Matrix2c k4 = rhs(rho + h * k3, hz, x1, r);
      rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      sample(t + h, false);
    }
    rho = 0.5 * (rho + rho.adjoint()).eval();
  }

  if (finish) {
    if (!excited) {
      rho = excite(DensityMatrix::unchecked(rho), model).matrix();
      excited = true;
    }
    // Readout post-selects cycles still in the ES: weight each spin projection by
    // its survival amplitude over the ES dwell time.
    const double dwell = timeline.t_end_ns - tx;
    if (dwell > 0.0) {
      const double w0 = std::exp(-0.5 * model.gamma_0_per_ns * dwell);
      const double w1 = std::exp(-0.5 * model.gamma_m1_per_ns * dwell);
      rho(0, 0) *= w0 * w0;
      rho(1, 1) *= w1 * w1;
      rho(0, 1) *= w0 * w1;
      rho(1, 0) *= w0 * w1;
      rho /= rho.trace().real();
    }
  }
  sample(to_ns, true);
  out.rho_final = DensityMatrix(rho, 1e-8);
  out.p0 = out.rho_final.population0();
  return out;
}

SimOutcome integrate(const DensityMatrix& rho0, const Timeline& timeline, const PhysicsModel& model, double dt,
                     double sample_every_ns) {
  return integrate_span(rho0, timeline, model, dt, timeline.t_start_ns, timeline.t_end_ns, sample_every_ns);
}

SimOutcome evolve_span(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model, double from_ns,
                       double to_ns, const EvolveOptions& options) {
  if (!(options.dt_ns > 0.0 && options.dt_ns <= kMaxStepNs + 1e-15))
    throw std::invalid_argument("dt must lie in (0, 2 ps]");
  timeline.validate(model);
  SimOutcome out = integrate_span(rho, timeline, model, options.dt_ns, from_ns, to_ns, options.sample_every_ns);
  if (options.verify_convergence) {
    const SimOutcome half = integrate_span(rho, timeline, model, 0.5 * options.dt_ns, from_ns, to_ns, 0.0);
    // compare the full state so partial spans are checked too
    const double diff = (half.rho_final.matrix() - out.rho_final.matrix()).cwiseAbs().maxCoeff();
    if (std::abs(half.p0 - out.p0) > options.convergence_tol || diff > options.convergence_tol) {
      std::ostringstream msg;
      msg << "step size " << options.dt_ns * 1e3 << " ps not converged: p0 " << out.p0 << " vs " << half.p0
          << " at half step";
      throw ConvergenceError(msg.str(), out.p0, half.p0);
    }
  }
  return out;
}

SimOutcome evolve(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model,
                  const EvolveOptions& options) {
  return evolve_span(rho, timeline, model, timeline.t_start_ns, timeline.t_end_ns, options);
}

double envelope_area_ns(double sigma_ns, double truncation_sigmas) {
  return sigma_ns * std::sqrt(kTwoPi) * std::erf(truncation_sigmas / std::sqrt(2.0));
}

double simulated_rotation_angle(double rabi_peak_ghz, double sigma_ns, double carrier_ghz, double truncation_sigmas,
                                double dt_ns) {
  if (rabi_peak_ghz == 0.0) return 0.0;
  PhysicsModel model;
  model.f_gs_ghz = carrier_ghz;
  model.gamma_dephasing_per_ns = model.gamma_emission_per_ns = 0.0;
  model.gamma_0_per_ns = model.gamma_m1_per_ns = 0.0;

  Timeline t;
  t.add(microwave_pulse(0.0, sigma_ns, carrier_ghz, 0.0, rabi_peak_ghz, 0.0, truncation_sigmas));
  t.add(optical_excitation(t.t_end_ns));
  const SimOutcome s = integrate(DensityMatrix(), t, model, dt_ns);

  // Undo free precession after the pulse center. About +X, |0> goes to
  // (0, -sin a, cos a) in the frame co-rotating from the center.
  const BlochVector lab = s.rho_final.bloch();
  const double back = -kTwoPi * carrier_ghz * t.t_end_ns;
  const double y = std::sin(back) * lab.x + std::cos(back) * lab.y;
  const double wrapped = std::atan2(-y, lab.z);
  const double area = kTwoPi * rabi_peak_ghz * envelope_area_ns(sigma_ns, truncation_sigmas);
  const double turns = std::round((area - wrapped) / kTwoPi);
  return wrapped + kTwoPi * turns;
}

double calibrate_pulse(double target_angle_rad, double sigma_ns, double carrier_ghz, const PhysicsModel& model,
                       double truncation_sigmas, double dt_ns) {
  model.validate();
  if (!(sigma_ns > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (target_angle_rad == 0.0) return 0.0;
  if (!(target_angle_rad > 0.0 && target_angle_rad <= 4.0 * kPi + 1e-12))
    throw std::invalid_argument("target angle must lie in (0, 4 pi]");
  constexpr double kMaxRabi = 1.0;

  const double guess = target_angle_rad / (kTwoPi * envelope_area_ns(sigma_ns, truncation_sigmas));
  auto err = [&](double rabi) {
    return simulated_rotation_angle(rabi, sigma_ns, carrier_ghz, truncation_sigmas, dt_ns) - target_angle_rad;
  };
  double lo = 0.5 * guess;
  double hi = std::min(1.5 * guess, kMaxRabi);
  if (lo >= kMaxRabi || err(hi) < 0.0) {
    std::ostringstream msg;
    msg << "rotation of " << spin::rad_to_deg(target_angle_rad) << " deg unreachable with sigma " << sigma_ns
        << " ns and peak Rabi rate <= " << kMaxRabi << " GHz";
    throw std::runtime_error(msg.str());
  }
  if (err(lo) > 0.0) throw std::runtime_error("pulse calibration bracket failed");
  for (int it = 0; it < 80 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (err(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double readout(const DensityMatrix& rho_es, const PhysicsModel&) { return rho_es.population0(); }

double CountSample::normalized_p0() const {
  const double span = static_cast<double>(ref_hi - ref_lo);
  if (span == 0.0) throw std::domain_error("reference count levels coincide");
  return static_cast<double>(signal - ref_lo) / span;
}

double CountSample::sigma_p0() const {
  const double span = static_cast<double>(ref_hi - ref_lo);
  if (span == 0.0) throw std::domain_error("reference count levels coincide");
  const double p = normalized_p0();
  const double var = static_cast<double>(std::max(signal, 1LL)) + (1.0 - p) * (1.0 - p) * static_cast<double>(ref_lo) +
                     p * p * static_cast<double>(ref_hi);
  return std::sqrt(var) / std::abs(span);
}

CountSample PhotonCounter::draw(double p0, std::mt19937_64& rng) const {
  const double mean_signal = mean_lo + std::clamp(p0, 0.0, 1.0) * (mean_hi - mean_lo);
  std::poisson_distribution<long long> sig(mean_signal);
  std::poisson_distribution<long long> hi(mean_hi);
  std::poisson_distribution<long long> lo(mean_lo);
  CountSample c;
  c.signal = sig(rng);
  c.ref_hi = hi(rng);
  c.ref_lo = lo(rng);
  return c;
}

CountSample PhotonCounter::expected(double p0) const {
  CountSample c;
  c.signal = std::llround(mean_lo + std::clamp(p0, 0.0, 1.0) * (mean_hi - mean_lo));
  c.ref_hi = std::llround(mean_hi);
  c.ref_lo = std::llround(mean_lo);
  return c;
}

bool PulseConfig::calibrated() const {
  return rabi_gs_half_pi_ghz > 0.0 && rabi_gs_three_pi_ghz > 0.0 && rabi_es_half_pi_ghz > 0.0;
}

EvolveOptions PulseConfig::evolve_options() const {
  EvolveOptions o;
  o.dt_ns = dt_ns;
  o.verify_convergence = verify_convergence;
  return o;
}

PulseConfig calibrate(PulseConfig c, const PhysicsModel& model) {
  const double dt = std::min(c.dt_ns, kMaxStepNs);
  c.rabi_gs_half_pi_ghz = calibrate_pulse(0.5 * kPi, c.sigma_gs_ns, model.f_gs_ghz, model, c.truncation_sigmas, dt);
  c.rabi_gs_three_pi_ghz = calibrate_pulse(3.0 * kPi, c.sigma_gs_ns, model.f_gs_ghz, model, c.truncation_sigmas, dt);
  c.rabi_es_half_pi_ghz = calibrate_pulse(0.5 * kPi, c.sigma_es_ns, model.f_es_ghz, model, c.truncation_sigmas, dt);
  return c;
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw std::invalid_argument("unknown " + std::string(where) + " key '" + k + "'");
}

}  // namespace

nlohmann::json model_to_json(const PhysicsModel& m) {
  return {{"f_gs_ghz", m.f_gs_ghz},
          {"f_es_ghz", m.f_es_ghz},
          {"gamma_dephasing_per_ns", m.gamma_dephasing_per_ns},
          {"gamma_emission_per_ns", m.gamma_emission_per_ns},
          {"gamma_0_per_ns", m.gamma_0_per_ns},
          {"gamma_m1_per_ns", m.gamma_m1_per_ns},
          {"eta", m.eta},
          {"b_field_gauss", m.b_field_gauss}};
}

PhysicsModel model_from_json(const nlohmann::json& j, PhysicsModel m) {
  reject_unknown_keys(j, {"f_gs_ghz", "f_es_ghz", "gamma_emission_per_ns", "gamma_dephasing_per_ns", "tau_star_ns",
                          "gamma_0_per_ns", "gamma_m1_per_ns", "eta", "b_field_gauss"},
                      "model");
  m.f_gs_ghz = j.value("f_gs_ghz", m.f_gs_ghz);
  m.f_es_ghz = j.value("f_es_ghz", m.f_es_ghz);
  m.gamma_emission_per_ns = j.value("gamma_emission_per_ns", m.gamma_emission_per_ns);
  m.gamma_dephasing_per_ns = j.value("gamma_dephasing_per_ns", m.gamma_dephasing_per_ns);
  if (j.contains("tau_star_ns")) m = m.with_tau_star(j.at("tau_star_ns").get<double>());
  m.gamma_0_per_ns = j.value("gamma_0_per_ns", m.gamma_0_per_ns);
  m.gamma_m1_per_ns = j.value("gamma_m1_per_ns", m.gamma_m1_per_ns);
  m.eta = j.value("eta", m.eta);
  m.b_field_gauss = j.value("b_field_gauss", m.b_field_gauss);
  m.validate();
  return m;
}

nlohmann::json pulse_config_to_json(const PulseConfig& c) {
  return {{"sigma_gs_ns", c.sigma_gs_ns},
          {"sigma_es_ns", c.sigma_es_ns},
          {"truncation_sigmas", c.truncation_sigmas},
          {"prep_center_ns", c.prep_center_ns},
          {"dt_ps", c.dt_ns * 1e3},
          {"verify_convergence", c.verify_convergence},
          {"rabi_gs_half_pi_ghz", c.rabi_gs_half_pi_ghz},
          {"rabi_gs_three_pi_ghz", c.rabi_gs_three_pi_ghz},
          {"rabi_es_half_pi_ghz", c.rabi_es_half_pi_ghz}};
}

PulseConfig pulse_config_from_json(const nlohmann::json& j, PulseConfig c) {
  reject_unknown_keys(j, {"sigma_gs_ns", "sigma_es_ns", "truncation_sigmas", "prep_center_ns", "dt_ps",
                          "verify_convergence", "rabi_gs_half_pi_ghz", "rabi_gs_three_pi_ghz", "rabi_es_half_pi_ghz"},
                      "pulses");
  c.sigma_gs_ns = j.value("sigma_gs_ns", c.sigma_gs_ns);
  c.sigma_es_ns = j.value("sigma_es_ns", c.sigma_es_ns);
  c.truncation_sigmas = j.value("truncation_sigmas", c.truncation_sigmas);
  c.prep_center_ns = j.value("prep_center_ns", c.prep_center_ns);
  if (j.contains("dt_ps")) c.dt_ns = j.at("dt_ps").get<double>() * 1e-3;
  c.verify_convergence = j.value("verify_convergence", c.verify_convergence);
  c.rabi_gs_half_pi_ghz = j.value("rabi_gs_half_pi_ghz", c.rabi_gs_half_pi_ghz);
  c.rabi_gs_three_pi_ghz = j.value("rabi_gs_three_pi_ghz", c.rabi_gs_three_pi_ghz);
  c.rabi_es_half_pi_ghz = j.value("rabi_es_half_pi_ghz", c.rabi_es_half_pi_ghz);
  if (!(c.sigma_gs_ns > 0.0 && c.sigma_es_ns > 0.0 && c.truncation_sigmas > 0.0 && c.dt_ns > 0.0))
    throw std::invalid_argument("pulse widths, truncation and dt must be positive");
  return c;
}

nlohmann::json timeline_to_json(const Timeline& t) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : t.events) {
    if (e.kind == PulseKind::optical_excitation) {
      events.push_back({{"kind", "optical_excitation"}, {"center_ns", e.center_ns}});
      continue;
    }
    events.push_back({{"kind", "microwave"},
                      {"center_ns", e.center_ns},
                      {"sigma_ns", e.sigma_ns},
                      {"truncation_sigmas", e.truncation_sigmas},
                      {"carrier_ghz", e.carrier_ghz},
                      {"carrier_phase_rad", e.carrier_phase_rad},
                      {"rabi_peak_ghz", e.rabi_peak_ghz},
                      {"target_angle_rad", e.target_angle_rad}});
  }
  return {{"t_start_ns", t.t_start_ns},
          {"t_end_ns", t.t_end_ns},
          {"pre_excitation_control", t.pre_excitation_control},
          {"events", events}};
}

Timeline timeline_from_json(const nlohmann::json& j) {
  Timeline t;
  for (const auto& ej : j.at("events")) {
    const auto kind = ej.at("kind").get<std::string>();
    PulseEvent e;
    if (kind == "optical_excitation") {
      e = optical_excitation(ej.at("center_ns").get<double>());
    } else if (kind == "microwave") {
      e.kind = PulseKind::microwave;
      e.center_ns = ej.at("center_ns").get<double>();
      e.sigma_ns = ej.at("sigma_ns").get<double>();
      e.truncation_sigmas = ej.value("truncation_sigmas", 3.0);
      e.carrier_ghz = ej.at("carrier_ghz").get<double>();
      e.carrier_phase_rad = ej.value("carrier_phase_rad", 0.0);
      e.rabi_peak_ghz = ej.at("rabi_peak_ghz").get<double>();
      e.target_angle_rad = ej.value("target_angle_rad", 0.0);
    } else {
      throw std::invalid_argument("unknown event kind: " + kind);
    }
    t.events.push_back(e);
  }
  t.t_start_ns = j.at("t_start_ns").get<double>();
  t.t_end_ns = j.at("t_end_ns").get<double>();
  t.pre_excitation_control = j.value("pre_excitation_control", false);
  return t;
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& trajectory) {
  os << "t_ns,bloch_x,bloch_y,bloch_z,manifold\n";
  os.precision(10);
  for (const auto& s : trajectory)
    os << s.t_ns << ',' << s.bloch.x << ',' << s.bloch.y << ',' << s.bloch.z << ','
       << (s.manifold == Manifold::excited ? "ES" : "GS") << '\n';
}

}  // namespace nvqpt::dynamics
