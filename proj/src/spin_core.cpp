#include "nvqpt/spin_core.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace nvqpt::spin {

namespace {

constexpr cplx kI{0.0, 1.0};

double hermitian_defect(const auto& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

// Linear map vec(chi) -> vec(R), indices m*4+n and i*4+j.
const Eigen::Matrix<cplx, 16, 16>& chi_to_ptm_map() {
  static const Eigen::Matrix<cplx, 16, 16> map = [] {
    const auto& p = paulis();
    Eigen::Matrix<cplx, 16, 16> a;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int m = 0; m < 4; ++m)
          for (int n = 0; n < 4; ++n)
            a(i * 4 + j, m * 4 + n) = 0.5 * (p[i] * p[m] * p[j] * p[n]).trace();
    return a;
  }();
  return map;
}

const Eigen::Matrix<cplx, 16, 16>& ptm_to_chi_map() {
  static const Eigen::Matrix<cplx, 16, 16> inv = chi_to_ptm_map().fullPivLu().inverse();
  return inv;
}

}  // namespace

const std::array<Matrix2c, 4>& paulis() {
  static const std::array<Matrix2c, 4> p = [] {
    std::array<Matrix2c, 4> out;
    out[0] << 1, 0, 0, 1;
    out[1] << 0, 1, 1, 0;
    out[2] << 0, -kI, kI, 0;
    out[3] << 1, 0, 0, -1;
    return out;
  }();
  return p;
}

double BlochVector::norm() const { return std::sqrt(x * x + y * y + z * z); }
double BlochVector::transverse() const { return std::hypot(x, y); }
double BlochVector::azimuth() const { return std::atan2(y, x); }

DensityMatrix::DensityMatrix() : rho_(Matrix2c::Zero()) { rho_(0, 0) = 1.0; }

DensityMatrix::DensityMatrix(const Matrix2c& elements, double tol) : rho_(elements) {
  if (hermitian_defect(rho_) > tol) throw std::invalid_argument("density matrix is not Hermitian");
  if (std::abs(rho_.trace() - 1.0) > tol) throw std::invalid_argument("density matrix trace is not 1");
  if (min_eigenvalue() < -tol) throw std::invalid_argument("density matrix is not positive semidefinite");
}

DensityMatrix DensityMatrix::unchecked(const Matrix2c& elements) { return DensityMatrix(elements, Unchecked{}); }

BlochVector DensityMatrix::bloch() const {
  // Tr(rho sigma_k)
  return {2.0 * rho_(0, 1).real(), -2.0 * rho_(0, 1).imag(), (rho_(0, 0) - rho_(1, 1)).real()};
}

double DensityMatrix::min_eigenvalue() const {
  const Matrix2c h = 0.5 * (rho_ + rho_.adjoint());
  return Eigen::SelfAdjointEigenSolver<Matrix2c>(h, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

bool DensityMatrix::is_valid(double tol) const {
  return hermitian_defect(rho_) <= tol && std::abs(rho_.trace() - 1.0) <= tol && min_eigenvalue() >= -tol;
}

DensityMatrix density_from_bloch(const BlochVector& b) {
  const double n = b.norm();
  if (n > 1.0 + 1e-9) throw std::invalid_argument("Bloch vector norm exceeds 1");
  // tolerated overshoot is pulled back onto the sphere
  const double s = n > 1.0 ? 1.0 / n : 1.0;
  Matrix2c rho;
  rho << 0.5 * (1.0 + s * b.z), 0.5 * s * cplx(b.x, -b.y), 0.5 * s * cplx(b.x, b.y), 0.5 * (1.0 - s * b.z);
  // Rounding on a pure state may leave a -1e-17 eigenvalue.
  return DensityMatrix(rho, 1e-12);
}

ChiMatrix::ChiMatrix(const Matrix4c& elements, double tol) : chi_(elements) {
  if (hermitian_defect(chi_) > tol) throw std::invalid_argument("chi matrix is not Hermitian");
}

double ChiMatrix::min_eigenvalue() const {
  const Matrix4c h = 0.5 * (chi_ + chi_.adjoint());
  return Eigen::SelfAdjointEigenSolver<Matrix4c>(h, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

Matrix2c ChiMatrix::tp_defect() const {
  const auto& p = paulis();
  Matrix2c s = Matrix2c::Zero();
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n) s += chi_(m, n) * p[n] * p[m];
  return s - Matrix2c::Identity();
}

bool ChiMatrix::is_trace_preserving(double tol) const { return tp_defect().cwiseAbs().maxCoeff() <= tol; }

bool ChiMatrix::is_physical(double psd_tol, double tp_tol) const {
  return hermitian_defect(chi_) <= psd_tol && min_eigenvalue() >= -psd_tol && is_trace_preserving(tp_tol);
}

ChiMatrix identity_process() { return pauli_process(0); }

ChiMatrix pauli_process(int k) {
  if (k < 0 || k > 3) throw std::out_of_range("Pauli index must be 0..3");
  Matrix4c m = Matrix4c::Zero();
  m(k, k) = 1.0;
  return ChiMatrix(m);
}

ChiMatrix chi_from_kraus(std::span<const Matrix2c> kraus) {
  const auto& p = paulis();
  Matrix4c chi = Matrix4c::Zero();
  for (const auto& k : kraus) {
    Eigen::Vector4cd e;
    for (int m = 0; m < 4; ++m) e(m) = 0.5 * (p[m] * k).trace();
    chi += e * e.adjoint();
  }
  return ChiMatrix(chi);
}

Eigen::Matrix4d ptm_from_chi(const ChiMatrix& chi) {
  Eigen::Matrix<cplx, 16, 1> v;
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n) v(m * 4 + n) = chi(m, n);
  const Eigen::Matrix<cplx, 16, 1> r = chi_to_ptm_map() * v;
  Eigen::Matrix4d out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out(i, j) = r(i * 4 + j).real();
  return out;
}

ChiMatrix chi_from_ptm(const Eigen::Matrix4d& ptm) {
  Eigen::Matrix<cplx, 16, 1> r;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) r(i * 4 + j) = ptm(i, j);
  const Eigen::Matrix<cplx, 16, 1> v = ptm_to_chi_map() * r;
  Matrix4c chi;
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n) chi(m, n) = v(m * 4 + n);
  return ChiMatrix(0.5 * (chi + chi.adjoint()));
}

DensityMatrix apply_channel(const ChiMatrix& chi, const DensityMatrix& rho) {
  const auto& p = paulis();
  Matrix2c out = Matrix2c::Zero();
  for (int m = 0; m < 4; ++m) {
    const Matrix2c left = p[m] * rho.matrix();
    for (int n = 0; n < 4; ++n) {
      if (chi(m, n) == cplx(0.0)) continue;
      out += chi(m, n) * left * p[n];
    }
  }
  return DensityMatrix::unchecked(out);
}

ChiMatrix chi_ideal(double phi) {
  const double c = std::cos(0.5 * phi);
  const double s = std::sin(0.5 * phi);
  Matrix4c m = Matrix4c::Zero();
  m(0, 0) = c * c;
  m(3, 3) = s * s;
  m(0, 3) = kI * c * s;
  m(3, 0) = -kI * c * s;
  return ChiMatrix(m);
}

double process_fidelity(const ChiMatrix& chi_a, const ChiMatrix& chi_b) {
  const cplx t = (chi_a.matrix() * chi_b.matrix()).trace() / (chi_a.trace() * chi_b.trace());
  if (std::abs(t.imag()) > 1e-8)
    std::clog << "warning: process fidelity has imaginary part " << t.imag() << "; inputs not Hermitian\n";
  return t.real();
}

ChiMatrix dephased_rotation(double phi, double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw std::invalid_argument("transverse scale must lie in [0, 1]");
  const auto& p = paulis();
  const Matrix2c u = std::cos(0.5 * phi) * p[0] - kI * std::sin(0.5 * phi) * p[3];
  const std::array<Matrix2c, 2> kraus = {std::sqrt(0.5 * (1.0 + k)) * u, std::sqrt(0.5 * (1.0 - k)) * (u * p[3])};
  return chi_from_kraus(kraus);
}

ChiMatrix random_cptp(std::mt19937_64& rng, int rank) {
  if (rank < 1 || rank > 4) throw std::invalid_argument("Kraus rank must lie in [1, 4]");
  std::normal_distribution<double> g;
  Eigen::MatrixXcd a(2 * rank, 2);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < 2; ++j) a(i, j) = cplx(g(rng), g(rng));
  // V = A (A^dag A)^{-1/2} satisfies V^dag V = I
  Eigen::SelfAdjointEigenSolver<Matrix2c> es(a.adjoint() * a);
  const Matrix2c inv_sqrt =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().adjoint();
  const Eigen::MatrixXcd v = a * inv_sqrt;
  std::vector<Matrix2c> kraus;
  for (int r = 0; r < rank; ++r) kraus.push_back(v.block(2 * r, 0, 2, 2));
  return chi_from_kraus(kraus);
}

DensityMatrix random_density(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BlochVector b{g(rng), g(rng), g(rng)};
  const double scale = std::cbrt(u(rng)) / std::max(b.norm(), 1e-300);
  return density_from_bloch({b.x * scale, b.y * scale, b.z * scale});
}

PhaseOptimum optimize_phi(const ChiMatrix& chi) {
  const double f0 = process_fidelity(chi, chi_ideal(0.0));
  const double f90 = process_fidelity(chi, chi_ideal(0.5 * kPi));
  const double f180 = process_fidelity(chi, chi_ideal(kPi));
  PhaseOptimum out;
  out.offset = 0.5 * (f0 + f180);
  out.cos_coeff = 0.5 * (f0 - f180);
  out.sin_coeff = f90 - out.offset;
  const double amp = std::hypot(out.cos_coeff, out.sin_coeff);
  if (amp < 1e-12) {
    out.degenerate = true;
    out.phi = 0.0;
    out.fidelity = out.offset + out.cos_coeff;
    return out;
  }
  out.phi = std::atan2(out.sin_coeff, out.cos_coeff);
  out.fidelity = out.offset + amp;
  return out;
}

nlohmann::json chi_to_json(const ChiMatrix& chi) {
  nlohmann::json re = nlohmann::json::array();
  nlohmann::json im = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    nlohmann::json rr = nlohmann::json::array();
    nlohmann::json ri = nlohmann::json::array();
    for (int j = 0; j < 4; ++j) {
      rr.push_back(chi(i, j).real());
      ri.push_back(chi(i, j).imag());
    }
    re.push_back(rr);
    im.push_back(ri);
  }
  return {{"basis", {"I", "X", "Y", "Z"}}, {"re", re}, {"im", im}};
}

ChiMatrix chi_from_json(const nlohmann::json& j) {
  if (j.at("basis") != nlohmann::json({"I", "X", "Y", "Z"}))
    throw std::invalid_argument("chi JSON basis must be [\"I\",\"X\",\"Y\",\"Z\"]");
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (re.size() != 4 || im.size() != 4) throw std::invalid_argument("chi JSON must be 4x4");
  Matrix4c m;
  for (int r = 0; r < 4; ++r) {
    if (re.at(r).size() != 4 || im.at(r).size() != 4) throw std::invalid_argument("chi JSON must be 4x4");
    for (int c = 0; c < 4; ++c) m(r, c) = cplx(re.at(r).at(c).get<double>(), im.at(r).at(c).get<double>());
  }
  return ChiMatrix(m);
}

}  // namespace nvqpt::spin
