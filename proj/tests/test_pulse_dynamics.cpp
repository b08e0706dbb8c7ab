#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "nvqpt/optimize.hpp"
#include "nvqpt/pulse_dynamics.hpp"

using namespace nvqpt::dynamics;
using nvqpt::spin::BlochVector;
using nvqpt::spin::DensityMatrix;
using nvqpt::spin::density_from_bloch;
using nvqpt::spin::kPi;

namespace {

// Free-evolution timeline: excitation at t_x, window [t0, t1].
Timeline free_timeline(double t0, double t_x, double t1) {
  Timeline t;
  t.add(optical_excitation(t_x));
  t.t_start_ns = t0;
  t.t_end_ns = t1;
  return t;
}

double wrap(double a) { return std::remainder(a, 2 * kPi); }

// sigma sqrt(2 pi) erf(n / sqrt 2): area of a unit-peak Gaussian cut at +-n sigma
double gaussian_area(double sigma, double n) { return sigma * std::sqrt(2 * kPi) * std::erf(n / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("PhysicsModel defaults and validation") {
  PhysicsModel m;
  CHECK(m.f_gs_ghz == 0.65);
  CHECK(m.f_es_ghz == 2.14);
  CHECK(m.tau_star_ns() == doctest::Approx(6.0));
  CHECK(m.with_tau_star(4.0).tau_star_ns() == doctest::Approx(4.0));
  m.eta = 1.2;
  CHECK_THROWS(m.validate());
  m.eta = 1.0;
  m.gamma_0_per_ns = -1;
  CHECK_THROWS(m.validate());
}

TEST_CASE("excite examples") {
  PhysicsModel m;
  auto b = excite(density_from_bloch({0.3, -0.2, 0.4}), m).bloch();
  CHECK(b.x == doctest::Approx(0.3));
  CHECK(b.y == doctest::Approx(-0.2));
  CHECK(b.z == doctest::Approx(0.4));
  m.eta = 0.0;
  b = excite(density_from_bloch({1, 0, 0}), m).bloch();
  CHECK(std::hypot(b.x, b.y, b.z) < 1e-15);
  m.eta = 0.9;
  // (1, 0, 0.5) lies outside the ball; same map on a physical neighbour
  CHECK_THROWS(density_from_bloch({1, 0, 0.5}));
  b = excite(density_from_bloch({0.8, 0, 0.5}), m).bloch();
  CHECK(b.x == doctest::Approx(0.72));
  CHECK(b.y == doctest::Approx(0.0));
  CHECK(b.z == doctest::Approx(0.5));
}

TEST_CASE("readout and photon counting") {
  PhysicsModel m;
  CHECK(readout(DensityMatrix(), m) == 1.0);
  CHECK(readout(density_from_bloch({0, 1, 0}), m) == doctest::Approx(0.5));

  const PhotonCounter pc{1e5, 5e4};
  auto rng = nvqpt::opt::substream(31, 0);
  std::vector<double> est;
  for (int i = 0; i < 10000; ++i) est.push_back(pc.draw(0.75, rng).normalized_p0());
  const double mean = std::accumulate(est.begin(), est.end(), 0.0) / est.size();
  CHECK(std::abs(mean - 0.75) <= 0.005 * 0.75);

  // propagated shot-noise sigma vs the empirical spread
  double var = 0;
  for (double e : est) var += (e - mean) * (e - mean);
  const double sd = std::sqrt(var / (est.size() - 1));
  const double predicted = pc.expected(0.75).sigma_p0();
  CHECK(sd == doctest::Approx(predicted).epsilon(0.05));
  // oracle: var = (S + p^2 H + (1-p)^2 L) / (H - L)^2 at the means
  const double S = 5e4 + 0.75 * 5e4, H = 1e5, L = 5e4;
  CHECK(predicted == doctest::Approx(std::sqrt(S + 0.5625 * H + 0.0625 * L) / (H - L)).epsilon(1e-3));
  const auto e = pc.expected(0.75);
  CHECK(e.signal == 87500);
  CHECK(e.normalized_p0() == doctest::Approx(0.75));
}

TEST_CASE("stationary |0> without pulses") {
  PhysicsModel m;
  const auto t = free_timeline(-5, 0, 7);
  const auto out = evolve(DensityMatrix(), t, m);
  CHECK(out.p0 == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(out.p0 == doctest::Approx(out.rho_final.population0()).epsilon(1e-12));
}

TEST_CASE("property: free precession phase in both manifolds") {
  PhysicsModel m;
  for (double t_gs : {0.37, 1.0, 4.2})
    for (double t_es : {0.1, 0.59, 3.3, 10.0}) {
      const auto tl = free_timeline(-t_gs, 0, t_es);
      const auto out = evolve(density_from_bloch({1, 0, 0}), tl, m);
      const double want = 2 * kPi * (m.f_gs_ghz * t_gs + m.f_es_ghz * t_es);
      CHECK(std::abs(wrap(out.rho_final.bloch().azimuth() - want)) * 180 / kPi <= 0.1);
    }
}

TEST_CASE("property: transverse decay follows exp(-t/tau*)") {
  PhysicsModel m;
  REQUIRE(m.tau_star_ns() == doctest::Approx(6.0));
  for (double t : {0.5, 2.0, 6.0, 15.0}) {
    const auto out = evolve(density_from_bloch({0.8, 0.1, 0.3}), free_timeline(0, 0, t), m);
    const double xy = out.rho_final.bloch().transverse();
    const double want = std::exp(-t / 6.0) * std::hypot(0.8, 0.1);
    CHECK(std::abs(xy - want) / want <= 1e-4);
    CHECK(out.rho_final.bloch().z == doctest::Approx(0.3).epsilon(1e-9));  // equal population decay rates
  }
  // no dissipation in the GS
  const auto gs = evolve(density_from_bloch({0.8, 0.1, 0.3}), free_timeline(-10, 0, 0), m);
  CHECK(gs.rho_final.bloch().transverse() == doctest::Approx(std::hypot(0.8, 0.1)).epsilon(1e-10));
}

TEST_CASE("spin-dependent emission weights the readout") {
  PhysicsModel m;
  m.gamma_0_per_ns = 1.0 / 10.0;
  m.gamma_m1_per_ns = 1.0 / 20.0;
  const double t = 4.0;
  const auto out = evolve(density_from_bloch({0, 0, 0}), free_timeline(0, 0, t), m);
  // post-selected on still being excited: p0 ~ e^{-g0 t} / (e^{-g0 t} + e^{-g1 t})
  const double w0 = std::exp(-t / 10.0), w1 = std::exp(-t / 20.0);
  CHECK(out.p0 == doctest::Approx(w0 / (w0 + w1)).epsilon(1e-10));
}

TEST_CASE("calibrate_pulse") {
  PhysicsModel m;
  CHECK(calibrate_pulse(0.0, 0.5, 2.14, m) == 0.0);
  SUBCASE("closed loop at sigma = 0.5 ns") {
    const double r = calibrate_pulse(kPi / 2, 0.5, 2.14, m);
    CHECK(std::abs(simulated_rotation_angle(r, 0.5, 2.14) * 180 / kPi - 90.0) <= 0.2);
  }
  SUBCASE("3 pi on the GS carrier") {
    const double r = calibrate_pulse(3 * kPi, 4.0, 0.65, m);
    CHECK(std::abs(simulated_rotation_angle(r, 4.0, 0.65) * 180 / kPi - 540.0) <= 0.2);
  }
  SUBCASE("area theorem at sigma = 20 ns") {
    const double r = calibrate_pulse(kPi / 2, 20.0, 0.65, m, 3.0, 2e-3);
    CHECK(2 * kPi * r * gaussian_area(20.0, 3.0) == doctest::Approx(kPi / 2).epsilon(0.01));
  }
  CHECK(envelope_area_ns(0.5) == doctest::Approx(gaussian_area(0.5, 3.0)).epsilon(1e-6));
  CHECK_THROWS(calibrate_pulse(4 * kPi, 0.005, 2.14, m));  // needs more than 1 GHz
}

TEST_CASE("calibrated GS pi/2 puts |0> on the equator") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  for (double axis : {kPi / 2, kPi}) {
    Timeline t;
    t.add(microwave_pulse(-20, pc.sigma_gs_ns, m.f_gs_ghz, axis, pc.rabi_gs_half_pi_ghz, kPi / 2));
    t.add(optical_excitation(-8));
    t.t_end_ns = -8;
    const auto b = evolve(DensityMatrix(), t, m).rho_final.bloch();
    CHECK(std::abs(b.z) <= 1e-3);
    CHECK(b.norm() >= 0.999);
  }
}

TEST_CASE("3 pi (-X) pulse sends |0> to |-1>") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  Timeline t;
  t.add(microwave_pulse(-20, pc.sigma_gs_ns, m.f_gs_ghz, kPi, pc.rabi_gs_three_pi_ghz, 3 * kPi));
  t.add(optical_excitation(-8));
  t.t_end_ns = -8;
  CHECK(evolve(DensityMatrix(), t, m).p0 <= 0.02);
}

TEST_CASE("property: detuned ES pulse is inert in the GS") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  Timeline t;
  t.pre_excitation_control = true;
  t.add(microwave_pulse(-3, pc.sigma_es_ns, m.f_es_ghz, kPi / 2, pc.rabi_es_half_pi_ghz, kPi / 2));
  t.add(optical_excitation(0));
  CHECK(std::abs(evolve(DensityMatrix(), t, m).p0 - 1.0) <= 0.03);
  // equator state stays near p0 = 0.5
  CHECK(std::abs(evolve(density_from_bloch({1, 0, 0}), t, m).p0 - 0.5) <= 0.02);
}

TEST_CASE("property: convergence under dt halving") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  for (double t_es : {-1.0, 0.0, 0.6, 2.5}) {
    Timeline t;
    t.pre_excitation_control = t_es < 0;
    t.add(microwave_pulse(-20, pc.sigma_gs_ns, m.f_gs_ghz, kPi / 2, pc.rabi_gs_half_pi_ghz, kPi / 2));
    t.add(optical_excitation(0));
    t.add(microwave_pulse(t_es, pc.sigma_es_ns, m.f_es_ghz, kPi / 2, pc.rabi_es_half_pi_ghz, kPi / 2));
    const double a = integrate(DensityMatrix(), t, m, 1e-3).p0;
    const double b = integrate(DensityMatrix(), t, m, 0.5e-3).p0;
    CHECK(std::abs(a - b) <= 1e-6);
    CHECK_NOTHROW(evolve(DensityMatrix(), t, m));
  }
}

TEST_CASE("evolve rejects oversize steps") {
  PhysicsModel m;
  EvolveOptions o;
  o.dt_ns = 3e-3;
  CHECK_THROWS_AS(evolve(DensityMatrix(), free_timeline(0, 0, 1), m, o), std::invalid_argument);
}

TEST_CASE("property: trace and Hermiticity over 20 ns") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  Timeline t;
  t.add(microwave_pulse(-12, pc.sigma_gs_ns, m.f_gs_ghz, 0.3, pc.rabi_gs_half_pi_ghz, kPi / 2));
  t.add(optical_excitation(0));
  t.add(microwave_pulse(3, pc.sigma_es_ns, m.f_es_ghz, 1.1, pc.rabi_es_half_pi_ghz, kPi / 2));
  t.t_start_ns = -12;
  t.t_end_ns = 8.5;
  DensityMatrix rho = density_from_bloch({0.2, 0.5, -0.3});
  for (double from = t.t_start_ns; from < 8.0 - 1e-9; from += 1.0) {
    const auto out = integrate_span(rho, t, m, 1e-3, from, from + 1.0);
    const auto& r = out.rho_final.matrix();
    CHECK(std::abs(r.trace().real() - 1.0) <= 1e-8);
    CHECK((r - r.adjoint()).cwiseAbs().maxCoeff() <= 1e-8);
    rho = out.rho_final;
  }
}

TEST_CASE("span evolution composes") {
  PhysicsModel m;
  const auto pc = calibrate({}, m);
  Timeline t;
  t.add(microwave_pulse(-20, pc.sigma_gs_ns, m.f_gs_ghz, kPi / 2, pc.rabi_gs_half_pi_ghz, kPi / 2));
  t.add(optical_excitation(0));
  t.add(microwave_pulse(1.6, pc.sigma_es_ns, m.f_es_ghz, kPi / 2, pc.rabi_es_half_pi_ghz, kPi / 2));
  const auto whole = integrate(DensityMatrix(), t, m, 1e-3);
  const auto first = integrate_span(DensityMatrix(), t, m, 1e-3, t.t_start_ns, -0.3);
  const auto second = integrate_span(first.rho_final, t, m, 1e-3, -0.3, t.t_end_ns);
  CHECK(second.p0 == doctest::Approx(whole.p0).epsilon(1e-9));
}

TEST_CASE("delayed pulse copies replay the same waveform") {
  const auto a = microwave_pulse(0.0, 0.5, 2.14, 0.7, 0.3, kPi / 2);
  const auto b = microwave_pulse(1.37, 0.5, 2.14, 0.7, 0.3, kPi / 2);
  for (double t = -1.5; t <= 1.5; t += 0.0917) CHECK(b.drive(t + 1.37) == doctest::Approx(a.drive(t)).epsilon(1e-9));
  CHECK(a.envelope(1.6) == 0.0);
  CHECK(a.envelope(0.0) == doctest::Approx(0.3));
  CHECK(a.start_ns() == doctest::Approx(-1.5));
  CHECK(a.end_ns() == doctest::Approx(1.5));
}

TEST_CASE("timeline validation") {
  PhysicsModel m;
  SUBCASE("two excitations") {
    Timeline t;
    t.add(optical_excitation(0));
    t.add(optical_excitation(1));
    CHECK_THROWS_AS(t.validate(m), std::invalid_argument);
  }
  SUBCASE("no excitation") {
    Timeline t;
    t.add(microwave_pulse(-5, 1, m.f_gs_ghz, 0, 0.1, 1));
    CHECK_THROWS_AS(t.validate(m), std::invalid_argument);
  }
  SUBCASE("GS carrier after excitation") {
    Timeline t;
    t.add(optical_excitation(0));
    t.add(microwave_pulse(3, 0.5, m.f_gs_ghz, 0, 0.1, 1));
    CHECK_THROWS_AS(t.validate(m), std::invalid_argument);
  }
  SUBCASE("ES carrier before excitation needs the control flag") {
    Timeline t;
    t.add(microwave_pulse(-3, 0.5, m.f_es_ghz, 0, 0.1, 1));
    t.add(optical_excitation(0));
    CHECK_THROWS_AS(t.validate(m), std::invalid_argument);
    t.pre_excitation_control = true;
    CHECK_NOTHROW(t.validate(m));
  }
  SUBCASE("events kept in center order") {
    Timeline t;
    t.add(optical_excitation(0));
    t.add(microwave_pulse(-10, 1, m.f_gs_ghz, 0, 0.1, 1));
    CHECK(t.events.front().kind == PulseKind::microwave);
    CHECK(t.t_start_ns == doctest::Approx(-13));
    CHECK(t.excitation_ns() == 0.0);
  }
}

TEST_CASE("JSON round trips and strict keys") {
  PhysicsModel m;
  m.eta = 0.9;
  m.gamma_0_per_ns = 0.11;
  const auto m2 = model_from_json(model_to_json(m));
  CHECK(m2.eta == 0.9);
  CHECK(m2.gamma_0_per_ns == 0.11);
  CHECK(model_from_json({{"tau_star_ns", 4.0}}).tau_star_ns() == doctest::Approx(4.0));
  CHECK_THROWS(model_from_json({{"f_es", 2.0}}));
  CHECK_THROWS(model_from_json({{"eta", 1.5}}));

  const auto pc = calibrate({}, m);
  const auto pc2 = pulse_config_from_json(pulse_config_to_json(pc));
  CHECK(pc2.rabi_es_half_pi_ghz == pc.rabi_es_half_pi_ghz);
  CHECK(pc2.dt_ns == doctest::Approx(1e-3));
  CHECK(pc2.calibrated());
  CHECK_THROWS(pulse_config_from_json({{"sigma", 1.0}}));

  Timeline t;
  t.add(microwave_pulse(-20, 4, m.f_gs_ghz, 0.5, 0.03, kPi / 2));
  t.add(optical_excitation(0));
  t.add(microwave_pulse(0.6, 0.5, m.f_es_ghz, 1.5, 0.4, kPi / 2));
  const auto t2 = timeline_from_json(nlohmann::json::parse(timeline_to_json(t).dump()));
  REQUIRE(t2.events.size() == 3);
  CHECK(t2.events[2].carrier_phase_rad == t.events[2].carrier_phase_rad);
  CHECK(t2.t_end_ns == t.t_end_ns);
}

TEST_CASE("trajectory sampling and CSV") {
  PhysicsModel m;
  const auto out = integrate(density_from_bloch({1, 0, 0}), free_timeline(-1, 0, 1), m, 1e-3, 0.25);
  REQUIRE(out.trajectory.size() >= 9);
  CHECK(out.trajectory.front().manifold == Manifold::ground);
  CHECK(out.trajectory.back().manifold == Manifold::excited);
  std::ostringstream os;
  write_trajectory_csv(os, out.trajectory);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "t_ns,bloch_x,bloch_y,bloch_z,manifold");
}
