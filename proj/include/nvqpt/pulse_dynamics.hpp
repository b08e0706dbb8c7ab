#pragma once

// Lab-frame simulator for a spin qubit driven by Gaussian microwave pulses
// across an instantaneous optical excitation from the ground-state orbital
// manifold (GS) into the excited-state manifold (ES).
//
// Units: time in ns, frequency in GHz, rates in 1/ns, angles in radians.

#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvqpt/spin_core.hpp"

namespace nvqpt::dynamics {

using spin::BlochVector;
using spin::DensityMatrix;

struct PhysicsModel {
  double f_gs_ghz = 0.65;
  double f_es_ghz = 2.14;
  double gamma_dephasing_per_ns = 1.0 / 12.0;  ///< motional dephasing
  double gamma_emission_per_ns = 1.0 / 12.0;   ///< superposition emission
  double gamma_0_per_ns = 1.0 / 12.0;          ///< ES population decay of |0>
  double gamma_m1_per_ns = 1.0 / 12.0;         ///< ES population decay of |-1>
  double eta = 1.0;                            ///< transverse fraction kept by excitation
  double b_field_gauss = 1276.0;

  /// 1 / (dephasing + emission).
  double tau_star_ns() const;
  /// Keeps the emission rate and sets the dephasing rate so that tau* matches.
  PhysicsModel with_tau_star(double tau_ns) const;
  /// Throws std::invalid_argument on negative rates or eta outside [0, 1].
  void validate() const;
};

enum class PulseKind { microwave, optical_excitation };
enum class Manifold { ground, excited };

struct PulseEvent {
  PulseKind kind = PulseKind::microwave;
  double center_ns = 0.0;
  double sigma_ns = 0.0;
  double truncation_sigmas = 3.0;
  double carrier_ghz = 0.0;
  double carrier_phase_rad = 0.0;  ///< phase of the carrier at t = 0 of the global clock
  double rabi_peak_ghz = 0.0;
  double target_angle_rad = 0.0;

  double start_ns() const;
  double end_ns() const;
  /// Rabi frequency envelope Omega(t); zero outside the truncation window.
  double envelope(double t_ns) const;
  /// Drive term 2 pi Omega(t) cos(2 pi f t + phase), the coefficient of sigma_x.
  double drive(double t_ns) const;
  /// Azimuth of the rotation axis seen in the lab frame at the pulse center.
  double axis_phase_rad() const;
};

/// Resonant Gaussian pulse whose rotation axis sits at lab azimuth `axis_phase`
/// at its center. Delayed copies replay the same waveform shifted in time.
PulseEvent microwave_pulse(double center_ns, double sigma_ns, double carrier_ghz, double axis_phase_rad,
                           double rabi_peak_ghz, double target_angle_rad, double truncation_sigmas = 3.0);

PulseEvent optical_excitation(double t_ns);

struct Timeline {
  std::vector<PulseEvent> events;
  double t_start_ns = 0.0;
  double t_end_ns = 0.0;
  /// Permits ES-carrier pulses centered before the excitation (control runs).
  bool pre_excitation_control = false;

  /// Inserts keeping center order and widens [t_start, t_end] to cover the event.
  void add(const PulseEvent& e);
  double excitation_ns() const;
  /// Throws std::invalid_argument describing the first violated rule.
  void validate(const PhysicsModel& model) const;
};

struct TrajectorySample {
  double t_ns = 0.0;
  BlochVector bloch;
  Manifold manifold = Manifold::ground;
};

struct SimOutcome {
  DensityMatrix rho_final;
  double p0 = 1.0;
  std::vector<TrajectorySample> trajectory;
};

struct EvolveOptions {
  double dt_ns = 1e-3;
  /// Re-run at dt/2 and reject the result if p0 moves by more than the tolerance.
  bool verify_convergence = true;
  double convergence_tol = 1e-6;
  /// Trajectory sampling interval; 0 disables recording.
  double sample_every_ns = 0.0;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double p0_dt, double p0_half)
      : std::runtime_error(what), p0_dt(p0_dt), p0_half(p0_half) {}
  double p0_dt;
  double p0_half;
};

/// Largest step accepted by evolve.
inline constexpr double kMaxStepNs = 2e-3;

/// Integrates the lab-frame master equation over the timeline. The excitation
/// event switches the Larmor frequency and enables ES dissipation.
SimOutcome evolve(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model,
                  const EvolveOptions& options = {});

/// Evolves only over [from, to] inside the timeline window. The input state is
/// taken to be in the ES when `from` lies after the excitation. Readout
/// post-selection is applied only when `to` reaches the window end.
SimOutcome evolve_span(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model, double from_ns,
                       double to_ns, const EvolveOptions& options = {});

/// Same as evolve without the step bound or convergence check. Exposed for
/// step-size studies.
SimOutcome integrate(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model, double dt_ns,
                     double sample_every_ns = 0.0);
SimOutcome integrate_span(const DensityMatrix& rho, const Timeline& timeline, const PhysicsModel& model, double dt_ns,
                          double from_ns, double to_ns, double sample_every_ns = 0.0);

/// GS -> ES map: Bloch z kept, transverse components scaled by eta.
DensityMatrix excite(const DensityMatrix& rho_gs, const PhysicsModel& model);

/// Peak Rabi rate that rotates |0> by `target_angle` with a resonant Gaussian
/// pulse, found by bisection on the simulated rotation angle.
double calibrate_pulse(double target_angle_rad, double sigma_ns, double carrier_ghz, const PhysicsModel& model,
                       double truncation_sigmas = 3.0, double dt_ns = 1e-3);

/// Rotation angle (unwrapped) produced on |0> by a resonant pulse of the given peak rate.
double simulated_rotation_angle(double rabi_peak_ghz, double sigma_ns, double carrier_ghz,
                                double truncation_sigmas = 3.0, double dt_ns = 1e-3);

/// Integral of the truncated unit-peak Gaussian envelope, in ns.
double envelope_area_ns(double sigma_ns, double truncation_sigmas = 3.0);

/// <0|rho|0>.
double readout(const DensityMatrix& rho_es, const PhysicsModel& model);

struct CountSample {
  long long signal = 0;
  long long ref_hi = 0;
  long long ref_lo = 0;

  /// (signal - lo) / (hi - lo).
  double normalized_p0() const;
  /// Poisson error of normalized_p0 propagated from all three counts.
  double sigma_p0() const;
};

/// Fluorescence counting layer. Signal counts have mean lo + p0 (hi - lo);
/// the two references are drawn independently.
struct PhotonCounter {
  double mean_hi = 1e5;
  double mean_lo = 5e4;

  CountSample draw(double p0, std::mt19937_64& rng) const;
  /// Noise-free counts (rounded means).
  CountSample expected(double p0) const;
};

/// Pulse shapes and calibrated amplitudes used by the Ramsey and QPT protocols.
struct PulseConfig {
  double sigma_gs_ns = 4.0;
  double sigma_es_ns = 0.5;
  double truncation_sigmas = 3.0;
  double prep_center_ns = -20.0;
  double dt_ns = 1e-3;
  bool verify_convergence = true;

  double rabi_gs_half_pi_ghz = 0.0;
  double rabi_gs_three_pi_ghz = 0.0;
  double rabi_es_half_pi_ghz = 0.0;

  bool calibrated() const;
  EvolveOptions evolve_options() const;
};

/// Returns `config` with all pulse amplitudes calibrated against `model`.
PulseConfig calibrate(PulseConfig config, const PhysicsModel& model);

nlohmann::json model_to_json(const PhysicsModel& m);
PhysicsModel model_from_json(const nlohmann::json& j, PhysicsModel defaults = {});
nlohmann::json pulse_config_to_json(const PulseConfig& c);
PulseConfig pulse_config_from_json(const nlohmann::json& j, PulseConfig defaults = {});
nlohmann::json timeline_to_json(const Timeline& t);
Timeline timeline_from_json(const nlohmann::json& j);

/// CSV with header `t_ns,bloch_x,bloch_y,bloch_z,manifold`.
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& trajectory);

}  // namespace nvqpt::dynamics
