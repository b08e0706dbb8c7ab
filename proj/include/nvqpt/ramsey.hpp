#pragma once

// Lab-frame Ramsey fringes across the excitation event and their
// phenomenological fit.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "nvqpt/pulse_dynamics.hpp"

namespace nvqpt::ramsey {

using dynamics::PhysicsModel;
using dynamics::PulseConfig;

struct FringePoint {
  double t_es_ns = 0.0;
  double p0 = 0.0;
  double sigma_p0 = 0.0;
};

struct FringeSeries {
  std::vector<FringePoint> points;

  /// Strictly increasing t_es, p0 within [-0.2, 1.2], sigma_p0 >= 0.
  void validate() const;
  std::vector<double> times() const;
  std::vector<double> values() const;
};

/// Parameter order used by the covariance matrix and the fit report.
enum FitParam : int { kAmplitude = 0, kTauStar, kT0, kFrequency, kPhi0, kTurnOnWidth, kNumFitParams };

struct RamseyFit {
  double amplitude = 0.0;  ///< fringe amplitude at t0 (Delta <S_X>)
  double tau_star_ns = 0.0;
  double t0_ns = 0.0;
  double f_fit_ghz = 0.0;
  double phi0_rad = 0.0;
  double turnon_width_ns = 0.0;
  Eigen::Matrix<double, kNumFitParams, 1> sigmas = Eigen::Matrix<double, kNumFitParams, 1>::Zero();
  Eigen::Matrix<double, kNumFitParams, kNumFitParams> covariance =
      Eigen::Matrix<double, kNumFitParams, kNumFitParams>::Zero();
  double chi_square = 0.0;
  int dof = 0;
  double reduced_chi_square = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  ///< singular covariance
  bool short_span = false;  ///< data span below two fitted decay constants
  std::string method;

  Eigen::Matrix<double, kNumFitParams, 1> parameters() const;
  /// Evaluates the fitted fringe model at t.
  double operator()(double t_ns) const;
  /// Decay envelope amplitude A exp(-max(0, t - t0)/tau) and its propagated error.
  std::pair<double, double> amplitude_at(double t_ns) const;
};

/// 0.5 + (A/2) T(t) exp(-max(0, t - t0)/tau) cos(2 pi f t + phi0), with
/// turn-on T(t) = (1 + erf((t - t0)/w))/2.
double fringe_model(const Eigen::Matrix<double, kNumFitParams, 1>& params, double t_ns);

struct InitialGuess {
  double amplitude = 0.0;
  double tau_star_ns = 0.0;
  double t0_ns = 0.0;
  double f_ghz = 0.0;
  double phi0_rad = 0.0;
  double turnon_width_ns = 0.0;
};

/// Deterministic start: f from the periodogram peak, tau* from the log-envelope
/// slope, t0 from the envelope onset, then amplitude and phase by linear least squares.
InitialGuess initial_guess(const FringeSeries& data);

/// Frequency of the strongest periodogram peak of the mean-removed signal.
double dominant_frequency(const std::vector<double>& t, const std::vector<double>& y, double f_min_ghz = 0.05);

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weighted least-squares fit with Levenberg-Marquardt; falls back to
/// Nelder-Mead when LM does not converge. Needs at least 40 points.
RamseyFit fit_fringe(const FringeSeries& data, const std::optional<InitialGuess>& guess = std::nullopt);

struct FidelityEstimate {
  double fidelity = 0.0;
  double sigma = 0.0;
};

/// F = (1 + A)/2, sigma_F = sigma_A/2.
FidelityEstimate fidelity_from_amplitude(const RamseyFit& fit);
/// Same with A read off the decay envelope at `t_ns` (e.g. the excitation instant).
FidelityEstimate fidelity_from_amplitude(const RamseyFit& fit, double t_ns);

/// Ramsey sequence: pi/2_GS(Y) at the prep center, excitation at 0 and the
/// pi/2_ES(Y) readout pulse centered at t_es.
dynamics::Timeline ramsey_timeline(double t_es_ns, const PhysicsModel& model, const PulseConfig& pulses);

struct FringeNoise {
  dynamics::PhotonCounter counter;
  /// Poisson draws when set, otherwise exact p0 with shot-noise error bars.
  std::optional<std::uint64_t> seed;
};

/// Simulates p0 at each delay. Without `noise` the error bars are `nominal_sigma`.
FringeSeries simulate_fringe(const std::vector<double>& grid_ns, const PhysicsModel& model, PulseConfig pulses,
                             const std::optional<FringeNoise>& noise = std::nullopt, double nominal_sigma = 0.01,
                             unsigned workers = 1);

/// Amplitude of the residual component at the fitted fringe frequency and its
/// standard error under the reported error bars.
struct ResidualTone {
  double amplitude = 0.0;
  double standard_error = 0.0;
  double rms = 0.0;
};
ResidualTone residual_tone(const FringeSeries& data, const RamseyFit& fit);

void write_fringe_csv(std::ostream& os, const FringeSeries& data);
FringeSeries read_fringe_csv(std::istream& is);
/// Columns t_es_ns,p0_data,p0_fit,residual.
void write_overlay_csv(std::ostream& os, const FringeSeries& data, const RamseyFit& fit);
nlohmann::json fit_report_json(const RamseyFit& fit);

}  // namespace nvqpt::ramsey
