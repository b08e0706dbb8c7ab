#pragma once

// Twelve-setting single-qubit process tomography: protocol construction,
// linear inversion, maximum-likelihood projection, shot-noise Monte Carlo and
// fidelity extrapolation across delays.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvqpt/pulse_dynamics.hpp"
#include "nvqpt/spin_core.hpp"

namespace nvqpt::qpt {

using dynamics::PhotonCounter;
using dynamics::PhysicsModel;
using dynamics::PulseConfig;
using spin::ChiMatrix;

enum class Prep { plus_z, x, y, minus_z };
enum class Axis { x, y, z };

inline constexpr std::array<Prep, 4> kPreps = {Prep::plus_z, Prep::x, Prep::y, Prep::minus_z};
inline constexpr std::array<Axis, 3> kAxes = {Axis::x, Axis::y, Axis::z};

std::string to_string(Prep p);
std::string to_string(Axis a);
Prep prep_from_string(const std::string& s);
Axis axis_from_string(const std::string& s);

/// Ideal input state of a preparation.
spin::DensityMatrix prepared_state(Prep p);

/// Readout maps the measured axis onto Z; X and Y readouts invert the sign.
double expectation_from_p0(Axis a, double p0);
double p0_from_expectation(Axis a, double expectation);

struct QptEntry {
  Prep prep = Prep::plus_z;
  Axis axis = Axis::z;
  double expectation = 0.0;
  long long counts_signal = 0;
  long long counts_ref_hi = 0;
  long long counts_ref_lo = 0;

  bool has_counts() const;
  /// Shot-noise error of the expectation; `fallback` when no counts are stored.
  double sigma(double fallback = 1e-2) const;
};

struct QptDataset {
  double t_es_ns = 0.0;
  std::vector<QptEntry> entries;

  /// Complete 4x3 grid without duplicates, expectations consistent with counts.
  void validate() const;
  const QptEntry& at(Prep p, Axis a) const;
  bool has_counts() const;
};

struct ProtocolEntry {
  Prep prep;
  Axis axis;
  dynamics::Timeline timeline;
};

/// Twelve timelines in prep-major order. Preparation pulses are centered at the
/// configured prep time; readout pulses are centered at t_es.
std::vector<ProtocolEntry> build_protocol(double t_es_ns, const PhysicsModel& model, const PulseConfig& pulses,
                                          bool pre_excitation_control = false);

struct DatasetNoise {
  PhotonCounter counter;
  /// Poisson draws when set, otherwise rounded mean counts.
  std::optional<std::uint64_t> seed;
};

/// Runs the protocol through the pulse-level simulator.
QptDataset simulate_dataset(double t_es_ns, const PhysicsModel& model, PulseConfig pulses,
                            const std::optional<DatasetNoise>& noise = std::nullopt, unsigned workers = 1);

/// One dataset per delay. Dataset j draws its noise from substream(seed, j).
std::vector<QptDataset> simulate_datasets(const std::vector<double>& t_es_grid, const PhysicsModel& model,
                                          PulseConfig pulses, const std::optional<DatasetNoise>& noise = std::nullopt,
                                          unsigned workers = 1);

/// Dataset generated by applying `chi` to ideal inputs.
QptDataset synthesize_dataset(const ChiMatrix& chi, double t_es_ns,
                              const std::optional<DatasetNoise>& noise = std::nullopt);

/// Linear inversion to chi_meas. Hermitian, possibly not positive.
ChiMatrix expectations_to_chi(const QptDataset& dataset);

struct MleOptions {
  int restarts = 8;
  double lambda_tp = 1e4;
  double cost_tol = 1e-10;
  int max_evaluations = 60000;  ///< per restart, and for the final polish
  std::uint64_t seed = 1;
};

struct MleResult {
  ChiMatrix chi;
  double cost = 0.0;        ///< at the optimum, before the trace-preservation polish
  double start_cost = 0.0;  ///< at the PSD projection of chi_meas
  int evaluations = 0;
  int converged_restarts = 0;
  bool polished = false;  ///< projected-gradient polish reached its fixed point
};

class MleError : public std::runtime_error {
 public:
  MleError(const std::string& what, ChiMatrix best, double cost)
      : std::runtime_error(what), best(std::move(best)), cost(cost) {}
  ChiMatrix best;
  double cost;
};

/// chi = T^dag T / Tr(T^dag T) with T lower triangular, fitted by multi-start
/// Nelder-Mead to the weighted expectations plus a trace-preservation penalty,
/// then polished by projected gradient directly on chi. The cost is convex in
/// chi, so restarts stop once a polish reaches its fixed point. Throws MleError
/// when no restart converged and no polish reached a fixed point either.
MleResult mle_project(const QptDataset& dataset, const MleOptions& options = {});

/// Weighted cost used by mle_project, for diagnostics and tests.
double mle_cost(const QptDataset& dataset, const ChiMatrix& chi, double lambda_tp = 1e4);

/// Closest PSD unit-trace matrix in eigenvalue-clipping sense.
ChiMatrix clip_to_psd(const ChiMatrix& chi);

/// Kraus-side correction E(S^{-1/2} rho S^{-1/2}) making a CP map exactly trace preserving.
ChiMatrix renormalize_trace(const ChiMatrix& chi);

struct MonteCarloErrors {
  double sigma_f = 0.0;
  double sigma_phi_deg = 0.0;
  int replicas = 0;
  int failures = 0;
};

/// Poisson-resamples every count and repeats normalization, inversion, MLE and
/// phase optimization per replica. Replica i draws from substream(seed, i).
MonteCarloErrors monte_carlo_errors(const QptDataset& dataset, int replicas, std::uint64_t seed,
                                    const MleOptions& mle = {}, unsigned workers = 1);

struct CurvePoint {
  double t_es_ns = 0.0;
  double fidelity = 0.0;
  double sigma_f = 0.0;
  double phi_deg = 0.0;  ///< unwrapped across the curve
  double sigma_phi_deg = 0.0;
  ChiMatrix chi_phys;
};

struct FidelityCurve {
  std::vector<CurvePoint> points;
  std::optional<double> intercept;
  std::optional<double> intercept_sigma;
  std::optional<double> slope_per_ns;
  std::optional<double> phi_slope_deg_per_ns;
  std::optional<double> phi_slope_sigma;
};

struct CurveOptions {
  MleOptions mle;
  int mc_replicas = 0;  ///< 0 skips error estimation
  std::uint64_t seed = 1;
  /// Precession rate used to resolve 360 deg ambiguities between points.
  std::optional<double> expected_phi_rate_deg_per_ns;
  unsigned workers = 1;
};

/// Per-dataset (F, phi) without the straight-line extrapolation.
FidelityCurve evaluate_points(const std::vector<QptDataset>& datasets, const CurveOptions& options = {});

/// Fills the extrapolation fields. Throws std::invalid_argument with fewer than
/// two distinct delays.
void extrapolate(FidelityCurve& curve);

FidelityCurve fidelity_curve(const std::vector<QptDataset>& datasets, const CurveOptions& options = {});

/// Unwraps phases (degrees) so successive differences are closest to the
/// expected advance, or to zero without a rate.
std::vector<double> unwrap_phases_deg(const std::vector<double>& t_ns, const std::vector<double>& phi_deg,
                                      std::optional<double> rate_deg_per_ns = std::nullopt);

nlohmann::json dataset_to_json(const QptDataset& d);
QptDataset dataset_from_json(const nlohmann::json& j);
/// chi schema plus phi_star_deg, F, sigma_F, sigma_phi_deg and seed.
nlohmann::json chi_result_json(const CurvePoint& p, std::uint64_t seed);
nlohmann::json curve_to_json(const FidelityCurve& c);
/// Columns t_es_ns,F,sigma_F,phi_deg,sigma_phi_deg.
void write_curve_csv(std::ostream& os, const FidelityCurve& c);

}  // namespace nvqpt::qpt
