#pragma once

// Single-qubit state and process algebra.
//
// Basis convention: index 0 is |0>, index 1 is |-1>. |0> sits at Bloch +Z and a
// positive rotation angle about Z carries +X toward +Y. Process matrices are
// expressed in the Pauli operator basis ordered (I, X, Y, Z) with
//   E(rho) = sum_mn chi_mn P_m rho P_n.

#include <array>
#include <complex>
#include <random>
#include <span>
#include <stdexcept>

#include <Eigen/Dense>

#include "json.hpp"

namespace nvqpt::spin {

using cplx = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;
using Matrix4c = Eigen::Matrix4cd;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Pauli matrices in (I, X, Y, Z) order.
const std::array<Matrix2c, 4>& paulis();

struct BlochVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  double transverse() const;
  /// Azimuth about Z in radians, in (-pi, pi].
  double azimuth() const;
};

class DensityMatrix {
 public:
  /// |0><0|.
  DensityMatrix();

  /// Validates Hermiticity, unit trace and positivity to `tol`.
  explicit DensityMatrix(const Matrix2c& elements, double tol = 1e-12);

  /// Wraps raw elements without validation. Used for outputs of maps that
  /// may leave the physical set (e.g. linear-inversion estimates).
  static DensityMatrix unchecked(const Matrix2c& elements);

  const Matrix2c& matrix() const { return rho_; }
  BlochVector bloch() const;
  /// <0|rho|0>.
  double population0() const { return rho_(0, 0).real(); }
  double trace() const { return rho_.trace().real(); }
  double min_eigenvalue() const;
  bool is_valid(double tol = 1e-12) const;

 private:
  struct Unchecked {};
  DensityMatrix(const Matrix2c& elements, Unchecked) : rho_(elements) {}
  Matrix2c rho_;
};

/// rho = (I + b.sigma)/2. Throws std::invalid_argument when |b| > 1 + 1e-9.
DensityMatrix density_from_bloch(const BlochVector& b);

class ChiMatrix {
 public:
  ChiMatrix() : chi_(Matrix4c::Zero()) {}
  /// Throws std::invalid_argument unless Hermitian to `tol`.
  explicit ChiMatrix(const Matrix4c& elements, double tol = 1e-10);

  const Matrix4c& matrix() const { return chi_; }
  cplx operator()(int m, int n) const { return chi_(m, n); }

  double trace() const { return chi_.trace().real(); }
  double min_eigenvalue() const;
  /// sum_mn chi_mn P_n P_m - I; zero for trace-preserving processes.
  Matrix2c tp_defect() const;
  bool is_trace_preserving(double tol = 1e-6) const;
  bool is_physical(double psd_tol = 1e-10, double tp_tol = 1e-6) const;

 private:
  Matrix4c chi_;
};

ChiMatrix identity_process();

/// Process matrix of a single Pauli conjugation, chi = e_k e_k^T.
ChiMatrix pauli_process(int k);

/// chi_mn = sum_i e_im conj(e_in) with K_i = sum_m e_im P_m.
ChiMatrix chi_from_kraus(std::span<const Matrix2c> kraus);

/// Pauli transfer matrix R_ij = Tr(P_i E(P_j)) / 2.
Eigen::Matrix4d ptm_from_chi(const ChiMatrix& chi);

/// Inverse of ptm_from_chi. The result is Hermitian for any real R.
ChiMatrix chi_from_ptm(const Eigen::Matrix4d& ptm);

/// E(rho) = sum_mn chi_mn P_m rho P_n. The output is physical only when chi is
/// CPTP, so it is returned unvalidated.
DensityMatrix apply_channel(const ChiMatrix& chi, const DensityMatrix& rho);

/// Rotation by `phi` radians about Z with no decoherence.
ChiMatrix chi_ideal(double phi);

/// Z rotation by `phi` radians followed by phase damping that scales the
/// transverse Bloch components by k in [0, 1].
ChiMatrix dephased_rotation(double phi, double k);

/// Haar-like random CPTP map with `rank` Kraus operators (isometry from a
/// complex Gaussian matrix).
ChiMatrix random_cptp(std::mt19937_64& rng, int rank = 4);

/// Random state with Bloch vector uniform in the unit ball.
DensityMatrix random_density(std::mt19937_64& rng);

/// Tr(chi_a chi_b) with both matrices normalized to unit trace. Logs a warning
/// to std::clog when the trace has an imaginary part above 1e-8.
double process_fidelity(const ChiMatrix& chi_a, const ChiMatrix& chi_b);

struct PhaseOptimum {
  double phi = 0.0;       ///< radians, in (-pi, pi]
  double fidelity = 0.0;  ///< F at phi
  bool degenerate = false;
  /// F(phi) = offset + cos_coeff cos(phi) + sin_coeff sin(phi)
  double offset = 0.0;
  double cos_coeff = 0.0;
  double sin_coeff = 0.0;
};

/// Maximizes process_fidelity(chi, chi_ideal(phi)) over phi in closed form.
PhaseOptimum optimize_phi(const ChiMatrix& chi);

nlohmann::json chi_to_json(const ChiMatrix& chi);
ChiMatrix chi_from_json(const nlohmann::json& j);

}  // namespace nvqpt::spin
