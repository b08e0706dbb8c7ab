#include "nvqpt/qpt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "nvqpt/optimize.hpp"
#include "nvqpt/parallel.hpp"

namespace nvqpt::qpt {

namespace {

using spin::cplx;
using spin::kPi;
using spin::Matrix2c;
using spin::Matrix4c;

int index_of(Prep p) { return static_cast<int>(p); }
int index_of(Axis a) { return static_cast<int>(a); }

// Pauli index of the measured observable.
int pauli_of(Axis a) { return 1 + index_of(a); }

double wrap_deg(double d) {
  d = std::fmod(d + 180.0, 360.0);
  if (d < 0) d += 360.0;
  return d - 180.0;
}

dynamics::CountSample counts_of(const QptEntry& e) { return {e.counts_signal, e.counts_ref_hi, e.counts_ref_lo}; }

void store_counts(QptEntry& e, const dynamics::CountSample& c) {
  e.counts_signal = c.signal;
  e.counts_ref_hi = c.ref_hi;
  e.counts_ref_lo = c.ref_lo;
}

// Fill one entry from a readout probability, through counts when a counter is given.
QptEntry make_entry(Prep p, Axis a, double p0, const std::optional<DatasetNoise>& noise, std::mt19937_64* rng) {
  QptEntry e{p, a, expectation_from_p0(a, p0), 0, 0, 0};
  if (!noise) return e;
  if (noise->seed) {
    store_counts(e, noise->counter.draw(p0, *rng));
    e.expectation = expectation_from_p0(a, counts_of(e).normalized_p0());
  } else {
    store_counts(e, noise->counter.expected(p0));
  }
  return e;
}

// Everything the MLE cost needs, flattened to real linear maps of
// x = [Re chi (row major), Im chi (row major)].
struct Problem {
  // rows 0..11: predicted expectations; rows 12..15: Pauli components of sum chi_mn P_n P_m
  Eigen::Matrix<double, 16, 32> map;
  Eigen::Matrix<double, 16, 1> target = Eigen::Matrix<double, 16, 1>::Zero();
  Eigen::Matrix<double, 16, 1> weight = Eigen::Matrix<double, 16, 1>::Zero();

  explicit Problem(const QptDataset& d, double lambda_tp) {
    const auto& p = spin::paulis();
    auto put = [&](int row, const auto& coeff) {
      for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) {
          const cplx g = coeff(m, n);
          map(row, m * 4 + n) = g.real();
          map(row, 16 + m * 4 + n) = -g.imag();
        }
    };
    int k = 0;
    for (Prep pr : kPreps) {
      const Matrix2c rho = prepared_state(pr).matrix();
      for (Axis ax : kAxes) {
        const auto& e = d.at(pr, ax);
        put(k, [&](int m, int n) { return cplx((p[pauli_of(ax)] * p[m] * rho * p[n]).trace()); });
        target(k) = e.expectation;
        const double s = e.sigma();
        weight(k) = 1.0 / (2.0 * s * s);
        ++k;
      }
    }
    // ||S - I||_F^2 = 2 sum_j (s_j - delta_j0)^2
    for (int j = 0; j < 4; ++j) {
      put(12 + j, [&](int m, int n) { return cplx(0.5 * (p[j] * p[n] * p[m]).trace()); });
      weight(12 + j) = 2.0 * lambda_tp;
    }
    target(12) = 1.0;
  }

  static Eigen::Matrix<double, 32, 1> pack(const Matrix4c& chi) {
    Eigen::Matrix<double, 32, 1> x;
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        x(m * 4 + n) = chi(m, n).real();
        x(16 + m * 4 + n) = chi(m, n).imag();
      }
    return x;
  }

  double cost(const Matrix4c& chi) const {
    const Eigen::Matrix<double, 16, 1> r = map * pack(chi) - target;
    return r.cwiseProduct(r).dot(weight);
  }

  // Frobenius gradient, restricted to Hermitian directions
  Matrix4c gradient(const Matrix4c& chi) const {
    const Eigen::Matrix<double, 16, 1> r = map * pack(chi) - target;
    const Eigen::Matrix<double, 32, 1> g = 2.0 * map.transpose() * r.cwiseProduct(weight);
    Matrix4c out;
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) out(m, n) = cplx(g(m * 4 + n), g(16 + m * 4 + n));
    return 0.5 * (out + out.adjoint());
  }

  double lipschitz() const {
    const Eigen::Matrix<double, 32, 32> h = map.transpose() * weight.asDiagonal() * map;
    return 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 32, 32>>(h).eigenvalues().maxCoeff();
  }
};

// 4 real diagonal entries then 6 complex sub-diagonal ones.
Matrix4c t_from_params(const Eigen::VectorXd& x) {
  Matrix4c t = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) t(i, i) = x(i);
  int k = 4;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j, k += 2) t(i, j) = cplx(x(k), x(k + 1));
  return t;
}

Eigen::VectorXd params_from_t(const Matrix4c& t) {
  Eigen::VectorXd x(16);
  for (int i = 0; i < 4; ++i) x(i) = t(i, i).real();
  int k = 4;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j, k += 2) {
      x(k) = t(i, j).real();
      x(k + 1) = t(i, j).imag();
    }
  return x;
}

// Lower-triangular T with T^dag T = chi, via Cholesky of the index-reversed matrix.
Matrix4c lower_factor(const Matrix4c& chi) {
  Matrix4c j = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) j(i, 3 - i) = 1.0;
  const Matrix4c rev = j * chi * j + 1e-9 * Matrix4c::Identity();
  const Matrix4c l = rev.llt().matrixL();
  return j * l.adjoint() * j;
}

Matrix4c chi_from_t(const Matrix4c& t) {
  const Matrix4c m = t.adjoint() * t;
  return m / m.trace().real();
}

ChiMatrix hermitized(const Matrix4c& m) { return ChiMatrix(0.5 * (m + m.adjoint())); }

// Euclidean projection onto {chi >= 0, Tr chi = 1}: eigenvalues onto the simplex.
Matrix4c project_spectraplex(const Matrix4c& a) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(0.5 * (a + a.adjoint()));
  const Eigen::Vector4d v = es.eigenvalues();
  Eigen::Vector4d u = v;
  std::sort(u.data(), u.data() + 4, std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (int k = 0; k < 4; ++k) {
    cum += u(k);
    const double th = (cum - 1.0) / (k + 1);
    if (u(k) - th > 0) theta = th;
  }
  const Eigen::Vector4d w = (v.array() - theta).cwiseMax(0.0);
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

struct Polished {
  Matrix4c chi;
  bool fixed_point = false;
  int iterations = 0;
};

// The MLE cost is a convex quadratic in chi over the spectraplex. Near
// rank-deficient optima the T parameterization goes flat and the simplex
// crawls (high counts especially), so finish with accelerated projected
// gradient in chi itself. Fixed point of the plain projected step = optimum.
Polished polish(const Problem& prob, const Matrix4c& from, int max_iterations) {
  const double step = 1.0 / prob.lipschitz();
  auto advance = [&](const Matrix4c& y) { return project_spectraplex(y - step * prob.gradient(y)); };
  Polished out;
  Matrix4c x = project_spectraplex(from), y = x;
  double fx = prob.cost(x), t = 1.0;
  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it + 1;
    Matrix4c xn = advance(y);
    double fn = prob.cost(xn);
    if (fn > fx) {  // momentum overshot: restart it
      t = 1.0;
      xn = advance(x);
      fn = prob.cost(xn);
      // a plain 1/L step always lowers a convex L-smooth cost by L/2 |step|^2,
      // so failing to do so means x is optimal up to roundoff
      if (fn >= fx) {
        out.fixed_point = true;
        break;
      }
    }
    if ((xn - x).norm() <= 1e-12) {
      out.fixed_point = true;
      x = xn;
      break;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = xn + ((t - 1.0) / tn) * (xn - x);
    t = tn;
    if (fn <= fx) {
      x = xn;
      fx = fn;
    }
  }
  out.chi = x;
  return out;
}

}  // namespace

std::string to_string(Prep p) {
  switch (p) {
    case Prep::plus_z: return "+Z";
    case Prep::x: return "X";
    case Prep::y: return "Y";
    case Prep::minus_z: return "-Z";
  }
  return "?";
}

std::string to_string(Axis a) {
  switch (a) {
    case Axis::x: return "X";
    case Axis::y: return "Y";
    case Axis::z: return "Z";
  }
  return "?";
}

Prep prep_from_string(const std::string& s) {
  if (s == "+Z" || s == "Z") return Prep::plus_z;
  if (s == "X" || s == "+X") return Prep::x;
  if (s == "Y" || s == "+Y") return Prep::y;
  if (s == "-Z") return Prep::minus_z;
  throw std::invalid_argument("unknown preparation '" + s + "'");
}

Axis axis_from_string(const std::string& s) {
  if (s == "X") return Axis::x;
  if (s == "Y") return Axis::y;
  if (s == "Z") return Axis::z;
  throw std::invalid_argument("unknown measurement axis '" + s + "'");
}

spin::DensityMatrix prepared_state(Prep p) {
  switch (p) {
    case Prep::plus_z: return spin::density_from_bloch({0, 0, 1});
    case Prep::x: return spin::density_from_bloch({1, 0, 0});
    case Prep::y: return spin::density_from_bloch({0, 1, 0});
    case Prep::minus_z: return spin::density_from_bloch({0, 0, -1});
  }
  throw std::invalid_argument("bad preparation");
}

double expectation_from_p0(Axis a, double p0) { return a == Axis::z ? 2.0 * p0 - 1.0 : 1.0 - 2.0 * p0; }
double p0_from_expectation(Axis a, double e) { return a == Axis::z ? 0.5 * (1.0 + e) : 0.5 * (1.0 - e); }

bool QptEntry::has_counts() const { return counts_signal != 0 || counts_ref_hi != 0 || counts_ref_lo != 0; }

double QptEntry::sigma(double fallback) const {
  if (!has_counts()) return fallback;
  return 2.0 * counts_of(*this).sigma_p0();
}

void QptDataset::validate() const {
  if (entries.size() != 12) throw std::invalid_argument("QPT dataset needs 12 entries, got " + std::to_string(entries.size()));
  std::array<int, 12> seen{};
  for (const auto& e : entries) {
    const int k = index_of(e.prep) * 3 + index_of(e.axis);
    if (seen[k]++) throw std::invalid_argument("duplicate QPT entry " + to_string(e.prep) + "/" + to_string(e.axis));
    if (!std::isfinite(e.expectation)) throw std::invalid_argument("non-finite expectation");
    if (e.has_counts()) {
      if (e.counts_signal < 0 || e.counts_ref_hi < 0 || e.counts_ref_lo < 0)
        throw std::invalid_argument("negative photon counts");
      const double span = static_cast<double>(e.counts_ref_hi - e.counts_ref_lo);
      if (span <= 0) throw std::invalid_argument("reference counts must satisfy hi > lo");
      const double from_counts = expectation_from_p0(e.axis, counts_of(e).normalized_p0());
      // counts are integers; rounding the signal moves the expectation by at most 1/span
      if (std::abs(from_counts - e.expectation) > 1.5 / span + 1e-12) {
        std::ostringstream msg;
        msg << "expectation " << e.expectation << " of " << to_string(e.prep) << "/" << to_string(e.axis)
            << " disagrees with counts (" << from_counts << ")";
        throw std::invalid_argument(msg.str());
      }
    }
  }
}

const QptEntry& QptDataset::at(Prep p, Axis a) const {
  for (const auto& e : entries)
    if (e.prep == p && e.axis == a) return e;
  throw std::invalid_argument("QPT dataset lacks entry " + to_string(p) + "/" + to_string(a));
}

bool QptDataset::has_counts() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const QptEntry& e) { return e.has_counts(); });
}

std::vector<ProtocolEntry> build_protocol(double t_es_ns, const PhysicsModel& model, const PulseConfig& c,
                                          bool pre_excitation_control) {
  if (!c.calibrated()) throw std::invalid_argument("pulse configuration is not calibrated");
  if (!std::isfinite(t_es_ns)) throw std::invalid_argument("t_es must be finite");
  if (t_es_ns < 0 && !pre_excitation_control)
    throw std::invalid_argument("t_es < 0 places the readout pulse before excitation; flag it as a control run");
  const double prep_end = c.prep_center_ns + c.truncation_sigmas * c.sigma_gs_ns;
  if (prep_end > 0.0) {
    std::ostringstream msg;
    msg << "preparation pulse ends at " << prep_end << " ns, overlapping the excitation at 0 ns";
    throw std::invalid_argument(msg.str());
  }
  const double t_start = c.prep_center_ns - c.truncation_sigmas * c.sigma_gs_ns;
  const double t_end = std::max(0.0, t_es_ns + c.truncation_sigmas * c.sigma_es_ns);

  std::vector<ProtocolEntry> out;
  for (Prep p : kPreps) {
    for (Axis a : kAxes) {
      dynamics::Timeline t;
      t.add(dynamics::optical_excitation(0.0));
      switch (p) {
        case Prep::plus_z: break;
        case Prep::x:
          t.add(dynamics::microwave_pulse(c.prep_center_ns, c.sigma_gs_ns, model.f_gs_ghz, 0.5 * kPi,
                                          c.rabi_gs_half_pi_ghz, 0.5 * kPi, c.truncation_sigmas));
          break;
        case Prep::y:
          t.add(dynamics::microwave_pulse(c.prep_center_ns, c.sigma_gs_ns, model.f_gs_ghz, kPi, c.rabi_gs_half_pi_ghz,
                                          0.5 * kPi, c.truncation_sigmas));
          break;
        case Prep::minus_z:
          t.add(dynamics::microwave_pulse(c.prep_center_ns, c.sigma_gs_ns, model.f_gs_ghz, kPi,
                                          c.rabi_gs_three_pi_ghz, 3.0 * kPi, c.truncation_sigmas));
          break;
      }
      if (a != Axis::z) {
        const double axis_phase = a == Axis::x ? 0.5 * kPi : kPi;
        t.add(dynamics::microwave_pulse(t_es_ns, c.sigma_es_ns, model.f_es_ghz, axis_phase, c.rabi_es_half_pi_ghz,
                                        0.5 * kPi, c.truncation_sigmas));
      }
      // common window so every setting reads out the same instant
      t.t_start_ns = std::min(t.t_start_ns, t_start);
      t.t_end_ns = std::max(t.t_end_ns, t_end);
      t.pre_excitation_control = pre_excitation_control;
      t.validate(model);
      out.push_back({p, a, std::move(t)});
    }
  }
  return out;
}

std::vector<QptDataset> simulate_datasets(const std::vector<double>& t_es_grid, const PhysicsModel& model,
                                          PulseConfig pulses, const std::optional<DatasetNoise>& noise,
                                          unsigned workers) {
  model.validate();
  if (t_es_grid.empty()) throw std::invalid_argument("QPT delay grid is empty");
  if (!pulses.calibrated()) pulses = dynamics::calibrate(pulses, model);
  std::vector<std::vector<ProtocolEntry>> protocols;
  for (double t : t_es_grid) protocols.push_back(build_protocol(t, model, pulses, t < 0));

  // Preparations do not depend on t_es: evolve each once up to a handover time
  // ahead of every readout pulse, then continue the 12 x N settings from there.
  const auto opts = pulses.evolve_options();
  const double t_min = *std::min_element(t_es_grid.begin(), t_es_grid.end());
  const double prep_end = pulses.prep_center_ns + pulses.truncation_sigmas * pulses.sigma_gs_ns;
  const double t_start = protocols.front().front().timeline.t_start_ns;
  double split = std::min(0.0, t_min - pulses.truncation_sigmas * pulses.sigma_es_ns);
  if (split < prep_end) split = t_start;
  std::array<spin::DensityMatrix, 4> handover;
  parallel_for(4, workers, [&](std::size_t k) {
    // entry (prep k, Z) carries only the preparation pulse
    const auto& tl = protocols.front()[k * 3 + 2].timeline;
    handover[k] = dynamics::evolve_span(spin::DensityMatrix(), tl, model, t_start, split, opts).rho_final;
  });

  const std::size_t per = 12;
  std::vector<double> p0(per * t_es_grid.size());
  parallel_for(p0.size(), workers, [&](std::size_t i) {
    const auto& e = protocols[i / per][i % per];
    p0[i] = dynamics::evolve_span(handover[index_of(e.prep)], e.timeline, model, split, e.timeline.t_end_ns, opts).p0;
  });

  std::vector<QptDataset> out;
  for (std::size_t j = 0; j < t_es_grid.size(); ++j) {
    QptDataset d;
    d.t_es_ns = t_es_grid[j];
    std::mt19937_64 rng = opt::substream(noise && noise->seed ? *noise->seed : 0, j);
    for (std::size_t i = 0; i < per; ++i) {
      const auto& e = protocols[j][i];
      d.entries.push_back(make_entry(e.prep, e.axis, p0[j * per + i], noise, &rng));
    }
    out.push_back(std::move(d));
  }
  return out;
}

QptDataset simulate_dataset(double t_es_ns, const PhysicsModel& model, PulseConfig pulses,
                            const std::optional<DatasetNoise>& noise, unsigned workers) {
  return simulate_datasets({t_es_ns}, model, std::move(pulses), noise, workers).front();
}

QptDataset synthesize_dataset(const ChiMatrix& chi, double t_es_ns, const std::optional<DatasetNoise>& noise) {
  QptDataset d;
  d.t_es_ns = t_es_ns;
  std::mt19937_64 rng = opt::substream(noise && noise->seed ? *noise->seed : 0, 0);
  for (Prep p : kPreps) {
    const auto out = spin::apply_channel(chi, prepared_state(p)).bloch();
    for (Axis a : kAxes) {
      const double e = a == Axis::x ? out.x : a == Axis::y ? out.y : out.z;
      d.entries.push_back(make_entry(p, a, p0_from_expectation(a, e), noise, &rng));
    }
  }
  return d;
}

ChiMatrix expectations_to_chi(const QptDataset& d) {
  d.validate();
  std::array<Eigen::Vector3d, 4> r;
  for (Prep p : kPreps) {
    for (Axis a : kAxes) {
      const auto& entry = d.at(p, a);
      const double e = entry.expectation;
      // shot noise may legitimately push a few sigma past the physical range
      const double eps = 0.1 + (entry.has_counts() ? 5.0 * entry.sigma() : 0.0);
      if (e < -1.0 - eps || e > 1.0 + eps) {
        std::ostringstream msg;
        msg << "expectation " << e << " of " << to_string(p) << "/" << to_string(a) << " is outside [-1, 1]";
        throw std::invalid_argument(msg.str());
      }
      r[index_of(p)](index_of(a)) = e;
    }
  }
  const Eigen::Vector3d& rz = r[index_of(Prep::plus_z)];
  const Eigen::Vector3d& rmz = r[index_of(Prep::minus_z)];
  Eigen::Matrix4d ptm = Eigen::Matrix4d::Zero();
  ptm(0, 0) = 1.0;
  ptm.block<3, 1>(1, 0) = 0.5 * (rz + rmz);
  ptm.block<3, 1>(1, 1) = 0.5 * (2.0 * r[index_of(Prep::x)] - rz - rmz);
  ptm.block<3, 1>(1, 2) = 0.5 * (2.0 * r[index_of(Prep::y)] - rz - rmz);
  ptm.block<3, 1>(1, 3) = 0.5 * (rz - rmz);
  return spin::chi_from_ptm(ptm);
}

double mle_cost(const QptDataset& dataset, const ChiMatrix& chi, double lambda_tp) {
  return Problem(dataset, lambda_tp).cost(chi.matrix() / chi.trace());
}

ChiMatrix clip_to_psd(const ChiMatrix& chi) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(chi.matrix());
  Eigen::Vector4d ev = es.eigenvalues().cwiseMax(0.0);
  if (ev.sum() <= 0) throw std::invalid_argument("chi has no positive part");
  ev /= ev.sum();
  return hermitized(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint());
}

ChiMatrix renormalize_trace(const ChiMatrix& chi) {
  const auto& p = spin::paulis();
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(chi.matrix());
  std::vector<Matrix2c> kraus;
  for (int i = 0; i < 4; ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam <= 0) continue;
    Matrix2c k = Matrix2c::Zero();
    for (int m = 0; m < 4; ++m) k += std::sqrt(lam) * es.eigenvectors()(m, i) * p[m];
    kraus.push_back(k);
  }
  Matrix2c s = Matrix2c::Zero();
  for (const auto& k : kraus) s += k.adjoint() * k;
  Eigen::SelfAdjointEigenSolver<Matrix2c> ss(s);
  if (ss.eigenvalues()(0) <= 0) throw std::domain_error("process annihilates a state; cannot restore trace");
  const Matrix2c inv_sqrt =
      ss.eigenvectors() * ss.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * ss.eigenvectors().adjoint();
  for (auto& k : kraus) k = k * inv_sqrt;
  return hermitized(spin::chi_from_kraus(kraus).matrix());
}

MleResult mle_project(const QptDataset& dataset, const MleOptions& o) {
  dataset.validate();
  if (o.restarts < 1) throw std::invalid_argument("MLE needs at least one start");
  const Problem prob(dataset, o.lambda_tp);

  const ChiMatrix start = clip_to_psd(expectations_to_chi(dataset));
  const Matrix4c t0 = lower_factor(start.matrix());
  const Eigen::VectorXd x0 = params_from_t(t0);

  auto objective = [&](const Eigen::VectorXd& x) {
    const Matrix4c t = t_from_params(x);
    const Matrix4c m = t.adjoint() * t;
    const double tr = m.trace().real();
    if (!(tr > 1e-300)) return 1e300;
    // gauge: pins the overall scale of T
    return prob.cost(m / tr) + (tr - 1.0) * (tr - 1.0);
  };
  MleResult res;
  res.start_cost = prob.cost(chi_from_t(t0));
  opt::NelderMeadOptions nm;
  nm.f_tol = o.cost_tol;
  nm.x_tol = 1e-9;
  nm.max_evaluations = o.max_evaluations;
  nm.initial_step = 0.05;

  Eigen::VectorXd best_x = x0;
  double best = objective(x0);
  Polished pol;
  int starts = 0;
  for (int r = 0; r < o.restarts; ++r) {
    Eigen::VectorXd xs = x0;
    if (r > 0) {
      auto rng = opt::substream(o.seed, static_cast<std::uint64_t>(r));
      std::normal_distribution<double> jitter(0.0, 0.05);
      for (int i = 0; i < xs.size(); ++i) xs(i) += jitter(rng);
    }
    const auto m = opt::nelder_mead(objective, xs, nm);
    ++starts;
    res.evaluations += m.evaluations;
    if (m.converged) ++res.converged_restarts;
    if (m.value < best) {
      best = m.value;
      best_x = m.x;
    }
    pol = polish(prob, chi_from_t(t_from_params(best_x)), o.max_evaluations);
    res.evaluations += pol.iterations;
    // convex in chi: a certified fixed point is the global optimum, more starts cannot beat it
    if (pol.fixed_point) break;
  }
  res.polished = pol.fixed_point;
  if (res.converged_restarts == 0 && !res.polished) {
    std::ostringstream msg;
    msg << "MLE did not converge in any of " << starts << " starts (best cost " << prob.cost(pol.chi) << ")";
    throw MleError(msg.str(), hermitized(pol.chi), prob.cost(pol.chi));
  }
  res.chi = renormalize_trace(hermitized(pol.chi));
  res.cost = prob.cost(pol.chi);
  return res;
}

MonteCarloErrors monte_carlo_errors(const QptDataset& dataset, int replicas, std::uint64_t seed,
                                    const MleOptions& mle, unsigned workers) {
  if (replicas < 100) throw std::invalid_argument("Monte Carlo needs at least 100 replicas");
  if (!dataset.has_counts()) throw std::invalid_argument("Monte Carlo needs raw photon counts");
  dataset.validate();
  const double phi_ref = spin::rad_to_deg(spin::optimize_phi(mle_project(dataset, mle).chi).phi);

  std::vector<double> f(replicas, 0.0), dphi(replicas, 0.0);
  std::vector<char> ok(replicas, 0);
  std::vector<std::string> why(replicas);
  parallel_for(static_cast<std::size_t>(replicas), workers, [&](std::size_t i) {
    auto rng = opt::substream(seed, i);
    QptDataset rep;
    rep.t_es_ns = dataset.t_es_ns;
    for (const auto& e : dataset.entries) {
      QptEntry r = e;
      r.counts_signal = std::poisson_distribution<long long>(static_cast<double>(e.counts_signal))(rng);
      r.counts_ref_hi = std::poisson_distribution<long long>(static_cast<double>(e.counts_ref_hi))(rng);
      r.counts_ref_lo = std::poisson_distribution<long long>(static_cast<double>(e.counts_ref_lo))(rng);
      rep.entries.push_back(r);
    }
    try {
      for (auto& r : rep.entries) r.expectation = expectation_from_p0(r.axis, counts_of(r).normalized_p0());
      const auto opt = spin::optimize_phi(mle_project(rep, mle).chi);
      f[i] = opt.fidelity;
      dphi[i] = wrap_deg(spin::rad_to_deg(opt.phi) - phi_ref);
      ok[i] = 1;
    } catch (const std::exception& ex) {
      why[i] = ex.what();
    }
  });

  MonteCarloErrors out;
  out.replicas = replicas;
  std::vector<double> fs, ps;
  for (int i = 0; i < replicas; ++i) {
    if (ok[i]) {
      fs.push_back(f[i]);
      ps.push_back(dphi[i]);
    } else {
      ++out.failures;
    }
  }
  if (out.failures > 0.05 * replicas) {
    std::ostringstream msg;
    msg << "Monte Carlo: " << out.failures << " of " << replicas << " replica fits failed";
    for (int i = 0; i < replicas; ++i)
      if (!ok[i]) {
        msg << "; first failure (replica " << i << "): " << why[i];
        break;
      }
    throw std::runtime_error(msg.str());
  }
  auto stdev = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / (v.size() - 1));
  };
  out.sigma_f = stdev(fs);
  out.sigma_phi_deg = stdev(ps);
  return out;
}

std::vector<double> unwrap_phases_deg(const std::vector<double>& t, const std::vector<double>& phi,
                                      std::optional<double> rate) {
  if (t.size() != phi.size()) throw std::invalid_argument("unwrap: size mismatch");
  std::vector<double> out(phi);
  for (std::size_t i = 1; i < out.size(); ++i) {
    const double target = out[i - 1] + (rate ? *rate * (t[i] - t[i - 1]) : 0.0);
    out[i] = phi[i] + 360.0 * std::round((target - phi[i]) / 360.0);
  }
  return out;
}

FidelityCurve evaluate_points(const std::vector<QptDataset>& datasets, const CurveOptions& o) {
  std::vector<const QptDataset*> sorted;
  for (const auto& d : datasets) sorted.push_back(&d);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const QptDataset* a, const QptDataset* b) { return a->t_es_ns < b->t_es_ns; });

  FidelityCurve c;
  std::vector<double> ts, raw;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& d = *sorted[i];
    CurvePoint p;
    p.t_es_ns = d.t_es_ns;
    try {
      p.chi_phys = mle_project(d, o.mle).chi;
    } catch (const std::exception& ex) {
      std::ostringstream msg;
      msg << "MLE at t_es = " << d.t_es_ns << " ns: " << ex.what();
      throw std::runtime_error(msg.str());
    }
    const auto best = spin::optimize_phi(p.chi_phys);
    p.fidelity = best.fidelity;
    p.phi_deg = spin::rad_to_deg(best.phi);
    if (o.mc_replicas > 0) {
      const std::uint64_t s = opt::substream(o.seed, 1000 + i)();
      const auto mc = monte_carlo_errors(d, o.mc_replicas, s, o.mle, o.workers);
      p.sigma_f = mc.sigma_f;
      p.sigma_phi_deg = mc.sigma_phi_deg;
    }
    ts.push_back(p.t_es_ns);
    raw.push_back(p.phi_deg);
    c.points.push_back(std::move(p));
  }
  const auto un = unwrap_phases_deg(ts, raw, o.expected_phi_rate_deg_per_ns);
  for (std::size_t i = 0; i < un.size(); ++i) c.points[i].phi_deg = un[i];
  return c;
}

void extrapolate(FidelityCurve& c) {
  std::vector<double> t, f, sf, phi, sphi;
  for (const auto& p : c.points) {
    t.push_back(p.t_es_ns);
    f.push_back(p.fidelity);
    sf.push_back(p.sigma_f);
    phi.push_back(p.phi_deg);
    sphi.push_back(p.sigma_phi_deg);
  }
  std::vector<double> uniq(t);
  std::sort(uniq.begin(), uniq.end());
  if (std::adjacent_find(uniq.begin(), uniq.end()) != uniq.end())
    throw std::invalid_argument("fidelity curve has repeated t_es values");
  if (uniq.size() < 2) throw std::invalid_argument("extrapolation needs at least two distinct t_es values");
  auto weights_or_none = [](const std::vector<double>& s) {
    return std::all_of(s.begin(), s.end(), [](double x) { return x > 0; }) ? s : std::vector<double>{};
  };
  const auto wf = weights_or_none(sf);
  const auto lf = opt::fit_line(t, f, wf);
  c.intercept = lf.intercept;
  c.slope_per_ns = lf.slope;
  c.intercept_sigma = lf.sigma_intercept;
  const auto wp = weights_or_none(sphi);
  const auto lp = opt::fit_line(t, phi, wp);
  c.phi_slope_deg_per_ns = lp.slope;
  c.phi_slope_sigma = lp.sigma_slope;
}

FidelityCurve fidelity_curve(const std::vector<QptDataset>& datasets, const CurveOptions& options) {
  if (datasets.size() < 2) throw std::invalid_argument("fidelity curve needs at least two datasets");
  auto c = evaluate_points(datasets, options);
  extrapolate(c);
  return c;
}

nlohmann::json dataset_to_json(const QptDataset& d) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : d.entries)
    entries.push_back({{"prep", to_string(e.prep)},
                       {"axis", to_string(e.axis)},
                       {"expectation", e.expectation},
                       {"counts_signal", e.counts_signal},
                       {"counts_ref_hi", e.counts_ref_hi},
                       {"counts_ref_lo", e.counts_ref_lo}});
  return {{"t_es_ns", d.t_es_ns}, {"entries", entries}};
}

QptDataset dataset_from_json(const nlohmann::json& j) {
  QptDataset d;
  d.t_es_ns = j.at("t_es_ns").get<double>();
  for (const auto& e : j.at("entries")) {
    QptEntry q;
    q.prep = prep_from_string(e.at("prep").get<std::string>());
    q.axis = axis_from_string(e.at("axis").get<std::string>());
    q.expectation = e.at("expectation").get<double>();
    q.counts_signal = e.value("counts_signal", 0LL);
    q.counts_ref_hi = e.value("counts_ref_hi", 0LL);
    q.counts_ref_lo = e.value("counts_ref_lo", 0LL);
    d.entries.push_back(q);
  }
  d.validate();
  return d;
}

nlohmann::json chi_result_json(const CurvePoint& p, std::uint64_t seed) {
  auto j = spin::chi_to_json(p.chi_phys);
  j["t_es_ns"] = p.t_es_ns;
  j["phi_star_deg"] = p.phi_deg;
  j["F"] = p.fidelity;
  j["sigma_F"] = p.sigma_f;
  j["sigma_phi_deg"] = p.sigma_phi_deg;
  j["seed"] = seed;
  return j;
}

nlohmann::json curve_to_json(const FidelityCurve& c) {
  auto opt_json = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"t_es_ns", p.t_es_ns},
                   {"F", p.fidelity},
                   {"sigma_F", p.sigma_f},
                   {"phi_deg", p.phi_deg},
                   {"sigma_phi_deg", p.sigma_phi_deg}});
  return {{"points", pts},
          {"intercept", opt_json(c.intercept)},
          {"intercept_sigma", opt_json(c.intercept_sigma)},
          {"slope_per_ns", opt_json(c.slope_per_ns)},
          {"phi_slope_deg_per_ns", opt_json(c.phi_slope_deg_per_ns)},
          {"phi_slope_sigma_deg_per_ns", opt_json(c.phi_slope_sigma)},
          {"extrapolation", {{"method", "error-weighted straight line"}, {"heuristic", true}}}};
}

void write_curve_csv(std::ostream& os, const FidelityCurve& c) {
  os << "t_es_ns,F,sigma_F,phi_deg,sigma_phi_deg\n";
  for (const auto& p : c.points)
    os << p.t_es_ns << ',' << p.fidelity << ',' << p.sigma_f << ',' << p.phi_deg << ',' << p.sigma_phi_deg << '\n';
}

}  // namespace nvqpt::qpt
