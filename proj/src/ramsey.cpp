#include "nvqpt/ramsey.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "nvqpt/optimize.hpp"
#include "nvqpt/parallel.hpp"

namespace nvqpt::ramsey {

namespace {

using Params = Eigen::Matrix<double, kNumFitParams, 1>;
using spin::kPi;
constexpr double kTwoPi = 2.0 * kPi;

double envelope_factor(double tau, double t0, double w, double t) {
  const double turn_on = 0.5 * (1.0 + std::erf((t - t0) / std::max(std::abs(w), 1e-6)));
  return turn_on * std::exp(-std::max(0.0, t - t0) / std::abs(tau));
}

// Weighted linear least squares for y = a cos(wt) g + b sin(wt) g.
std::pair<double, double> quadratures(const std::vector<double>& t, const std::vector<double>& y,
                                      const std::vector<double>& weight, const std::vector<double>& g, double f) {
  double cc = 0, ss = 0, cs = 0, yc = 0, ys = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double c = g[i] * std::cos(kTwoPi * f * t[i]);
    const double s = g[i] * std::sin(kTwoPi * f * t[i]);
    const double w = weight[i];
    cc += w * c * c;
    ss += w * s * s;
    cs += w * c * s;
    yc += w * y[i] * c;
    ys += w * y[i] * s;
  }
  const double det = cc * ss - cs * cs;
  if (std::abs(det) < 1e-300) return {0.0, 0.0};
  return {(ss * yc - cs * ys) / det, (cc * ys - cs * yc) / det};
}

Params to_params(const InitialGuess& g) {
  Params p;
  p << g.amplitude, g.tau_star_ns, g.t0_ns, g.f_ghz, g.phi0_rad, g.turnon_width_ns;
  return p;
}

}  // namespace

void FringeSeries::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (i > 0 && !(p.t_es_ns > points[i - 1].t_es_ns))
      throw std::invalid_argument("fringe delays must be strictly increasing");
    if (!(p.p0 >= -0.2 && p.p0 <= 1.2)) throw std::invalid_argument("fringe p0 outside [-0.2, 1.2]");
    if (!(p.sigma_p0 >= 0.0)) throw std::invalid_argument("fringe sigma_p0 must be non-negative");
  }
}

std::vector<double> FringeSeries::times() const {
  std::vector<double> t;
  for (const auto& p : points) t.push_back(p.t_es_ns);
  return t;
}

std::vector<double> FringeSeries::values() const {
  std::vector<double> v;
  for (const auto& p : points) v.push_back(p.p0);
  return v;
}

Params RamseyFit::parameters() const {
  Params p;
  p << amplitude, tau_star_ns, t0_ns, f_fit_ghz, phi0_rad, turnon_width_ns;
  return p;
}

double RamseyFit::operator()(double t_ns) const { return fringe_model(parameters(), t_ns); }

std::pair<double, double> RamseyFit::amplitude_at(double t_ns) const {
  const double dt = std::max(0.0, t_ns - t0_ns);
  const double a = amplitude * std::exp(-dt / tau_star_ns);
  Params g = Params::Zero();
  g(kAmplitude) = std::exp(-dt / tau_star_ns);
  if (dt > 0.0) {
    g(kT0) = a / tau_star_ns;
    g(kTauStar) = a * dt / (tau_star_ns * tau_star_ns);
  }
  return {a, std::sqrt(std::max(0.0, double(g.transpose() * covariance * g)))};
}

double fringe_model(const Params& p, double t) {
  return 0.5 + 0.5 * p(kAmplitude) * envelope_factor(p(kTauStar), p(kT0), p(kTurnOnWidth), t) *
                   std::cos(kTwoPi * p(kFrequency) * t + p(kPhi0));
}

double dominant_frequency(const std::vector<double>& t, const std::vector<double>& y, double f_min) {
  if (t.size() < 4 || t.size() != y.size()) throw std::invalid_argument("periodogram needs at least 4 samples");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  std::vector<double> gaps;
  for (std::size_t i = 1; i < t.size(); ++i) gaps.push_back(t[i] - t[i - 1]);
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  const double nyquist = 0.5 / gaps[gaps.size() / 2];
  const double span = t.back() - t.front();

  auto power = [&](double f) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      re += (y[i] - mean) * std::cos(kTwoPi * f * t[i]);
      im += (y[i] - mean) * std::sin(kTwoPi * f * t[i]);
    }
    return re * re + im * im;
  };

  const double step = 0.1 / span;
  double best_f = f_min;
  double best_p = -1.0;
  for (double f = f_min; f <= nyquist; f += step) {
    const double p = power(f);
    if (p > best_p) {
      best_p = p;
      best_f = f;
    }
  }
  // Golden-section refinement within one grid step.
  double a = best_f - step, b = best_f + step;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double pc = power(c), pd = power(d);
  for (int it = 0; it < 60; ++it) {
    if (pc > pd) {
      b = d;
      d = c;
      pd = pc;
      c = b - g * (b - a);
      pc = power(c);
    } else {
      a = c;
      c = d;
      pc = pd;
      d = a + g * (b - a);
      pd = power(d);
    }
  }
  return 0.5 * (a + b);
}

InitialGuess initial_guess(const FringeSeries& data) {
  const auto t = data.times();
  std::vector<double> y;
  std::vector<double> weight;
  for (const auto& p : data.points) {
    y.push_back(p.p0 - 0.5);
    weight.push_back(p.sigma_p0 > 0.0 ? 1.0 / (p.sigma_p0 * p.sigma_p0) : 1.0);
  }
  InitialGuess g;
  g.f_ghz = dominant_frequency(t, y);

  // Local fringe amplitude: sqrt(2) x RMS over one period.
  const double half = 0.5 / g.f_ghz;
  std::vector<double> env(t.size(), 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double s = 0.0;
    int n = 0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (std::abs(t[j] - t[i]) <= half) {
        s += y[j] * y[j];
        ++n;
      }
    }
    env[i] = n > 0 ? std::sqrt(2.0 * s / n) : 0.0;
  }
  const auto peak = static_cast<std::size_t>(std::max_element(env.begin(), env.end()) - env.begin());
  const double env_max = env[peak];
  g.t0_ns = t.front();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (env[i] >= 0.5 * env_max) {
      g.t0_ns = t[i];
      break;
    }
  }

  std::vector<double> tx, ly;
  for (std::size_t i = peak; i < t.size(); ++i) {
    if (env[i] > 0.05 * env_max && env[i] > 0.0) {
      tx.push_back(t[i]);
      ly.push_back(std::log(env[i]));
    }
  }
  const double span = t.back() - t.front();
  g.tau_star_ns = span;
  if (tx.size() >= 3) {
    const auto line = opt::fit_line(tx, ly);
    if (line.slope < 0.0) g.tau_star_ns = -1.0 / line.slope;
  }
  g.tau_star_ns = std::clamp(g.tau_star_ns, 0.1, 1e3);
  g.turnon_width_ns = std::clamp(0.25 / g.f_ghz, 0.05, 1.0);

  std::vector<double> shape;
  for (double ti : t) shape.push_back(envelope_factor(g.tau_star_ns, g.t0_ns, g.turnon_width_ns, ti));
  const auto [a, b] = quadratures(t, y, weight, shape, g.f_ghz);
  g.amplitude = 2.0 * std::hypot(a, b);
  g.phi0_rad = std::atan2(-b, a);
  return g;
}

RamseyFit fit_fringe(const FringeSeries& data, const std::optional<InitialGuess>& guess) {
  data.validate();
  const std::size_t n = data.points.size();
  if (n < 40) throw std::invalid_argument("fringe fit needs at least 40 points");
  for (const auto& p : data.points)
    if (!(p.sigma_p0 > 0.0)) throw std::invalid_argument("fringe fit needs positive error bars");

  const InitialGuess start = guess.value_or(initial_guess(data));
  const opt::Residuals residuals = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    const Params p = x;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& pt = data.points[i];
      r(static_cast<Eigen::Index>(i)) = (pt.p0 - fringe_model(p, pt.t_es_ns)) / pt.sigma_p0;
    }
    return r;
  };
  Eigen::VectorXd scale(kNumFitParams);
  scale << 0.1, 1.0, 0.1, 0.01, 0.1, 0.1;

  RamseyFit fit;
  Eigen::VectorXd x;
  auto lm = opt::levenberg_marquardt(residuals, to_params(start), scale);
  fit.iterations = lm.iterations;
  if (lm.converged) {
    fit.method = "levenberg-marquardt";
    x = lm.x;
  } else {
    const opt::Objective chi2 = [&](const Eigen::VectorXd& p) { return residuals(p).squaredNorm(); };
    opt::NelderMeadOptions o;
    o.f_tol = 1e-9;
    o.initial_step = 0.05;
    const auto nm = opt::nelder_mead(chi2, lm.x, o);
    if (!nm.converged) {
      std::ostringstream msg;
      msg << "fringe fit did not converge after " << lm.iterations << " LM iterations and " << nm.evaluations
          << " simplex evaluations";
      throw FitError(msg.str());
    }
    fit.method = "nelder-mead";
    fit.iterations += nm.evaluations;
    x = nm.x;
  }

  // Canonical signs: A >= 0, tau > 0, w > 0, phi0 in (-pi, pi].
  Eigen::Matrix<double, kNumFitParams, 1> sign = Eigen::Matrix<double, kNumFitParams, 1>::Ones();
  if (x(kAmplitude) < 0.0) {
    x(kAmplitude) = -x(kAmplitude);
    x(kPhi0) += kPi;
    sign(kAmplitude) = -1.0;
  }
  if (x(kTauStar) < 0.0) {
    x(kTauStar) = -x(kTauStar);
    sign(kTauStar) = -1.0;
  }
  if (x(kTurnOnWidth) < 0.0) {
    x(kTurnOnWidth) = -x(kTurnOnWidth);
    sign(kTurnOnWidth) = -1.0;
  }
  x(kPhi0) = std::remainder(x(kPhi0), kTwoPi);

  const Eigen::MatrixXd jac = opt::numeric_jacobian(residuals, x, scale);
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jtj);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(ev.maxCoeff(), 1e-300);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) > cutoff) {
      inv(k) = 1.0 / ev(k);
    } else {
      fit.degenerate = true;
    }
  }
  const Eigen::MatrixXd cov = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  fit.covariance = sign.asDiagonal() * cov * sign.asDiagonal();
  fit.sigmas = fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

  fit.amplitude = x(kAmplitude);
  fit.tau_star_ns = x(kTauStar);
  fit.t0_ns = x(kT0);
  fit.f_fit_ghz = x(kFrequency);
  fit.phi0_rad = x(kPhi0);
  fit.turnon_width_ns = x(kTurnOnWidth);
  fit.chi_square = residuals(x).squaredNorm();
  fit.dof = static_cast<int>(n) - kNumFitParams;
  fit.reduced_chi_square = fit.chi_square / fit.dof;
  fit.converged = true;
  fit.short_span = data.points.back().t_es_ns - fit.t0_ns < 2.0 * fit.tau_star_ns;
  return fit;
}

FidelityEstimate fidelity_from_amplitude(const RamseyFit& fit) {
  return {0.5 * (1.0 + fit.amplitude), 0.5 * fit.sigmas(kAmplitude)};
}

FidelityEstimate fidelity_from_amplitude(const RamseyFit& fit, double t_ns) {
  const auto [a, s] = fit.amplitude_at(t_ns);
  return {0.5 * (1.0 + a), 0.5 * s};
}

dynamics::Timeline ramsey_timeline(double t_es_ns, const PhysicsModel& model, const PulseConfig& c) {
  if (!c.calibrated()) throw std::invalid_argument("pulse configuration is not calibrated");
  dynamics::Timeline t;
  t.add(dynamics::microwave_pulse(c.prep_center_ns, c.sigma_gs_ns, model.f_gs_ghz, 0.5 * kPi, c.rabi_gs_half_pi_ghz,
                                  0.5 * kPi, c.truncation_sigmas));
  t.add(dynamics::optical_excitation(0.0));
  t.add(dynamics::microwave_pulse(t_es_ns, c.sigma_es_ns, model.f_es_ghz, 0.5 * kPi, c.rabi_es_half_pi_ghz,
                                  0.5 * kPi, c.truncation_sigmas));
  t.pre_excitation_control = t_es_ns < 0.0;
  return t;
}

FringeSeries simulate_fringe(const std::vector<double>& grid, const PhysicsModel& model, PulseConfig pulses,
                             const std::optional<FringeNoise>& noise, double nominal_sigma, unsigned workers) {
  if (grid.empty()) throw std::invalid_argument("fringe grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < -5.0 || grid[i] > 25.0) throw std::invalid_argument("fringe delays must lie within [-5, 25] ns");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("fringe delays must be strictly increasing");
  }
  if (!pulses.calibrated()) pulses = dynamics::calibrate(pulses, model);

  // The preparation is common to every delay: run it once up to just before the
  // earliest readout pulse and continue each point from there.
  const auto opts = pulses.evolve_options();
  const auto first = ramsey_timeline(grid.front(), model, pulses);
  const double prep_end = pulses.prep_center_ns + pulses.truncation_sigmas * pulses.sigma_gs_ns;
  double split = std::min(0.0, grid.front() - pulses.truncation_sigmas * pulses.sigma_es_ns);
  if (split < prep_end) split = first.t_start_ns;
  const spin::DensityMatrix handover =
      dynamics::evolve_span(spin::DensityMatrix(), first, model, first.t_start_ns, split, opts).rho_final;

  FringeSeries out;
  out.points.resize(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    const auto timeline = ramsey_timeline(grid[i], model, pulses);
    const double p0 = dynamics::evolve_span(handover, timeline, model, split, timeline.t_end_ns, opts).p0;
    FringePoint pt{grid[i], p0, nominal_sigma};
    if (noise) {
      if (noise->seed) {
        auto rng = opt::substream(*noise->seed, i);
        const auto counts = noise->counter.draw(p0, rng);
        pt.p0 = counts.normalized_p0();
        pt.sigma_p0 = counts.sigma_p0();
      } else {
        pt.sigma_p0 = noise->counter.expected(p0).sigma_p0();
      }
    }
    out.points[i] = pt;
  });
  return out;
}

ResidualTone residual_tone(const FringeSeries& data, const RamseyFit& fit) {
  const auto t = data.times();
  std::vector<double> r, weight, ones(t.size(), 1.0);
  double ss = 0.0;
  for (const auto& p : data.points) {
    r.push_back(p.p0 - fit(p.t_es_ns));
    weight.push_back(p.sigma_p0 > 0.0 ? 1.0 / (p.sigma_p0 * p.sigma_p0) : 1.0);
    ss += r.back() * r.back();
  }
  const auto [a, b] = quadratures(t, r, weight, ones, fit.f_fit_ghz);
  double wc = 0.0, ws = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double c = std::cos(kTwoPi * fit.f_fit_ghz * t[i]);
    const double s = std::sin(kTwoPi * fit.f_fit_ghz * t[i]);
    wc += weight[i] * c * c;
    ws += weight[i] * s * s;
  }
  ResidualTone tone;
  tone.amplitude = std::hypot(a, b);
  tone.standard_error = std::sqrt(0.5 * (1.0 / wc + 1.0 / ws));
  tone.rms = std::sqrt(ss / static_cast<double>(t.size()));
  return tone;
}

void write_fringe_csv(std::ostream& os, const FringeSeries& data) {
  os << "t_es_ns,p0,sigma_p0\n";
  os.precision(17);
  for (const auto& p : data.points) os << p.t_es_ns << ',' << p.p0 << ',' << p.sigma_p0 << '\n';
}

FringeSeries read_fringe_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("t_es_ns,p0,sigma_p0", 0) != 0)
    throw std::invalid_argument("fringe CSV must start with header t_es_ns,p0,sigma_p0");
  FringeSeries out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FringePoint p;
    char c1 = 0, c2 = 0;
    if (!(ls >> p.t_es_ns >> c1 >> p.p0 >> c2 >> p.sigma_p0) || c1 != ',' || c2 != ',')
      throw std::invalid_argument("malformed fringe CSV row: " + line);
    out.points.push_back(p);
  }
  out.validate();
  return out;
}

void write_overlay_csv(std::ostream& os, const FringeSeries& data, const RamseyFit& fit) {
  os << "t_es_ns,p0_data,p0_fit,residual\n";
  os.precision(12);
  for (const auto& p : data.points) {
    const double m = fit(p.t_es_ns);
    os << p.t_es_ns << ',' << p.p0 << ',' << m << ',' << p.p0 - m << '\n';
  }
}

nlohmann::json fit_report_json(const RamseyFit& fit) {
  static const char* names[kNumFitParams] = {"amplitude", "tau_star_ns", "t0_ns",
                                             "f_fit_ghz", "phi0_rad",    "turnon_width_ns"};
  const Params p = fit.parameters();
  nlohmann::json params = nlohmann::json::array();
  for (int k = 0; k < kNumFitParams; ++k) params.push_back({{"name", names[k]}, {"value", p(k)}, {"sigma", fit.sigmas(k)}});
  nlohmann::json cov = nlohmann::json::array();
  for (int r = 0; r < kNumFitParams; ++r)
    for (int c = 0; c < kNumFitParams; ++c) cov.push_back(fit.covariance(r, c));
  nlohmann::json j = {{"parameters", params},
                      {"covariance_row_major", cov},
                      {"chi_square", fit.chi_square},
                      {"dof", fit.dof},
                      {"reduced_chi_square", fit.reduced_chi_square},
                      {"method", fit.method},
                      {"iterations", fit.iterations},
                      {"degenerate", fit.degenerate},
                      {"short_span", fit.short_span}};
  for (int k = 0; k < kNumFitParams; ++k) {
    j[names[k]] = p(k);
    j[std::string(names[k]) + "_sigma"] = fit.sigmas(k);
  }
  const auto f = fidelity_from_amplitude(fit);
  j["fidelity"] = f.fidelity;
  j["fidelity_sigma"] = f.sigma;
  // the excitation sits at t = 0 in every generated timeline
  const auto [a0, s0] = fit.amplitude_at(0.0);
  const auto f0 = fidelity_from_amplitude(fit, 0.0);
  j["amplitude_at_excitation"] = a0;
  j["amplitude_at_excitation_sigma"] = s0;
  j["fidelity_at_excitation"] = f0.fidelity;
  j["fidelity_at_excitation_sigma"] = f0.sigma;
  return j;
}

}  // namespace nvqpt::ramsey
