#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "nvqpt/optimize.hpp"
#include "nvqpt/spin_core.hpp"

using namespace nvqpt::spin;
using nvqpt::opt::substream;

namespace {

const cplx I1{0.0, 1.0};

// Test-side oracles, built from first principles rather than the library.

Eigen::Matrix3d rotz(double phi) {
  Eigen::Matrix3d r;
  r << std::cos(phi), -std::sin(phi), 0, std::sin(phi), std::cos(phi), 0, 0, 0, 1;
  return r;
}

Matrix2c sx() { return (Matrix2c() << 0, 1, 1, 0).finished(); }
Matrix2c sy() { return (Matrix2c() << 0, -I1, I1, 0).finished(); }
Matrix2c sz() { return (Matrix2c() << 1, 0, 0, -1).finished(); }

// exp(-i phi sz / 2)
Matrix2c uz(double phi) {
  Matrix2c u = Matrix2c::Zero();
  u(0, 0) = std::exp(-I1 * phi / 2.0);
  u(1, 1) = std::exp(I1 * phi / 2.0);
  return u;
}

Eigen::Vector3d bloch_of(const Matrix2c& rho) {
  return {(rho * sx()).trace().real(), (rho * sy()).trace().real(), (rho * sz()).trace().real()};
}

Eigen::Vector3d vec(const BlochVector& b) { return {b.x, b.y, b.z}; }

// Tr(chi_a chi_b) / (Tr chi_a Tr chi_b), no library calls.
double fidelity_oracle(const Matrix4c& a, const Matrix4c& b) {
  return (a * b).trace().real() / (a.trace().real() * b.trace().real());
}

// chi of exp(-i phi sz/2): coefficients of U in the Pauli basis are (cos, 0, 0, -i sin).
Matrix4c chi_ideal_oracle(double phi) {
  Eigen::Vector4cd e(std::cos(phi / 2), 0, 0, -I1 * std::sin(phi / 2));
  return e * e.adjoint();
}

Matrix4c random_hermitian_psd(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix4c a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = {n(rng), n(rng)};
  return a * a.adjoint();
}

}  // namespace

TEST_CASE("density_from_bloch examples") {
  auto r = density_from_bloch({0, 0, 1}).matrix();
  CHECK(std::abs(r(0, 0) - 1.0) < 1e-15);
  CHECK(std::abs(r(1, 1)) < 1e-15);

  r = density_from_bloch({1, 0, 0}).matrix();
  CHECK(std::abs(r(0, 1) - 0.5) < 1e-15);
  CHECK(std::abs(r(1, 0) - 0.5) < 1e-15);

  const auto rho = density_from_bloch({0.3, -0.4, 0.5});
  Eigen::SelfAdjointEigenSolver<Matrix2c> es(rho.matrix());
  const double b = std::sqrt(0.5);
  CHECK(es.eigenvalues()(0) == doctest::Approx((1 - b) / 2).epsilon(1e-13));
  CHECK(es.eigenvalues()(1) == doctest::Approx((1 + b) / 2).epsilon(1e-13));
  CHECK(rho.population0() == doctest::Approx(0.75));

  CHECK_THROWS_AS(density_from_bloch({1.0, 0.1, 0.0}), std::invalid_argument);
  CHECK_NOTHROW(density_from_bloch({1.0 + 5e-10, 0, 0}));
}

TEST_CASE("bloch round trip") {
  auto rng = substream(11, 0);
  for (int i = 0; i < 200; ++i) {
    const auto rho = random_density(rng);
    const auto back = density_from_bloch(rho.bloch());
    CHECK((back.matrix() - rho.matrix()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rho.bloch().norm() <= 1.0 + 1e-12);
    CHECK(rho.is_valid());
  }
}

TEST_CASE("DensityMatrix validation") {
  Matrix2c bad = Matrix2c::Zero();
  bad(0, 0) = 1.2;
  bad(1, 1) = -0.2;
  CHECK_THROWS(DensityMatrix(bad));
  Matrix2c nonherm = Matrix2c::Identity() * 0.5;
  nonherm(0, 1) = 0.3;
  CHECK_THROWS(DensityMatrix(nonherm));
  CHECK_NOTHROW(DensityMatrix::unchecked(bad));
}

TEST_CASE("apply_channel examples") {
  auto rng = substream(12, 0);
  const auto rho = random_density(rng);
  const auto out = apply_channel(identity_process(), rho);
  CHECK((out.matrix() - rho.matrix()).cwiseAbs().maxCoeff() < 1e-15);

  const auto xs = apply_channel(pauli_process(3), density_from_bloch({1, 0, 0}));
  CHECK((vec(xs.bloch()) - Eigen::Vector3d(-1, 0, 0)).norm() < 1e-15);

  const auto r90 = apply_channel(chi_ideal(kPi / 2), density_from_bloch({1, 0, 0}));
  CHECK((vec(r90.bloch()) - rotz(kPi / 2) * Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("chi_ideal structure") {
  SUBCASE("90 degrees") {
    const auto c = chi_ideal(kPi / 2);
    CHECK(std::abs(c(0, 0) - 0.5) < 1e-15);
    CHECK(std::abs(c(3, 3) - 0.5) < 1e-15);
    CHECK(std::abs(c(0, 3) - 0.5 * I1) < 1e-15);
    CHECK(std::abs(c(3, 0) + 0.5 * I1) < 1e-15);
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n)
        if (!((m == 0 || m == 3) && (n == 0 || n == 3))) CHECK(std::abs(c(m, n)) == 0.0);
  }
  SUBCASE("0 and 2 pi are the identity") {
    for (double phi : {0.0, 2 * kPi}) {
      const auto c = chi_ideal(phi);
      CHECK((c.matrix() - identity_process().matrix()).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  SUBCASE("matches Pauli expansion of the unitary") {
    for (double phi : {-2.0, 0.3, 1.7, 4.0})
      CHECK((chi_ideal(phi).matrix() - chi_ideal_oracle(phi)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("physical, rank 1") {
    const auto c = chi_ideal(1.234);
    CHECK(c.is_physical());
    Eigen::SelfAdjointEigenSolver<Matrix4c> es(c.matrix());
    CHECK(std::abs(es.eigenvalues()(2)) < 1e-12);
    CHECK(es.eigenvalues()(3) == doctest::Approx(1.0));
  }
}

TEST_CASE("property: chi_ideal acts as the 3x3 Z rotation on 36 angles") {
  auto rng = substream(13, 0);
  for (int k = 0; k < 36; ++k) {
    const double phi = k * 2 * kPi / 36;
    for (int s = 0; s < 5; ++s) {
      const auto rho = random_density(rng);
      const auto out = apply_channel(chi_ideal(phi), rho);
      CHECK((vec(out.bloch()) - rotz(phi) * vec(rho.bloch())).norm() < 1e-10);
    }
  }
}

TEST_CASE("property: channel linearity on random physical chi") {
  auto rng = substream(14, 0);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const auto chi = random_cptp(rng, 1 + i % 4);
    const auto r1 = random_density(rng), r2 = random_density(rng);
    const double a = u(rng);
    const auto mix = DensityMatrix(a * r1.matrix() + (1 - a) * r2.matrix());
    const Matrix2c lhs = apply_channel(chi, mix).matrix();
    const Matrix2c rhs = a * apply_channel(chi, r1).matrix() + (1 - a) * apply_channel(chi, r2).matrix();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(apply_channel(chi, r1).trace() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(apply_channel(chi, r1).is_valid(1e-10));
  }
}

TEST_CASE("random_cptp is physical") {
  auto rng = substream(15, 0);
  for (int rank = 1; rank <= 4; ++rank)
    for (int i = 0; i < 25; ++i) {
      const auto chi = random_cptp(rng, rank);
      CHECK(chi.is_physical());
      CHECK(chi.trace() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("chi_from_kraus against a Kraus-sum oracle") {
  auto rng = substream(16, 0);
  const double k = 0.6, phi = 0.8;
  const Matrix2c a = std::sqrt((1 + k) / 2) * uz(phi);
  const Matrix2c b = std::sqrt((1 - k) / 2) * uz(phi) * sz();
  const std::vector<Matrix2c> kraus{a, b};
  const auto chi = chi_from_kraus(kraus);
  for (int i = 0; i < 20; ++i) {
    const auto rho = random_density(rng);
    const Matrix2c want = a * rho.matrix() * a.adjoint() + b * rho.matrix() * b.adjoint();
    CHECK((apply_channel(chi, rho).matrix() - want).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("dephased_rotation scales transverse components by k") {
  auto rng = substream(17, 0);
  for (double k : {0.0, 0.37, 0.74, 1.0})
    for (double phi : {-1.0, 0.5, 1.651}) {
      const auto chi = dephased_rotation(phi, k);
      CHECK(chi.is_physical());
      const auto rho = random_density(rng);
      const Eigen::Vector3d b = vec(rho.bloch());
      Eigen::Vector3d want = rotz(phi) * b;
      want.x() *= k;
      want.y() *= k;
      CHECK((vec(apply_channel(chi, rho).bloch()) - want).norm() < 1e-12);
    }
}

TEST_CASE("PTM round trip") {
  auto rng = substream(18, 0);
  for (int i = 0; i < 50; ++i) {
    const auto chi = random_cptp(rng);
    const auto r = ptm_from_chi(chi);
    CHECK(r(0, 0) == doctest::Approx(1.0));
    for (int j = 1; j < 4; ++j) CHECK(std::abs(r(0, j)) < 1e-12);  // trace preservation
    CHECK((chi_from_ptm(r).matrix() - chi.matrix()).cwiseAbs().maxCoeff() < 1e-12);
    // PTM acts on (1, b): oracle via the Kraus-free channel application
    const auto rho = random_density(rng);
    Eigen::Vector4d v(1, rho.bloch().x, rho.bloch().y, rho.bloch().z);
    const Eigen::Vector4d w = r * v;
    CHECK((w.tail<3>() - bloch_of(apply_channel(chi, rho).matrix())).norm() < 1e-12);
  }
}

TEST_CASE("process_fidelity examples") {
  for (double phi : {0.0, 0.4, 1.65, -2.9}) CHECK(process_fidelity(chi_ideal(phi), chi_ideal(phi)) == doctest::Approx(1.0));
  CHECK(process_fidelity(chi_ideal(0), chi_ideal(kPi / 2)) == doctest::Approx(0.5));
  // phase damped 90 degree rotation, k = 0.74, F = (1+k)/2
  const Matrix2c u = uz(kPi / 2);
  const double k = 0.74;
  const std::vector<Matrix2c> kraus{std::sqrt((1 + k) / 2) * u, std::sqrt((1 - k) / 2) * sz() * u};
  const auto damped = chi_from_kraus(kraus);
  const double f = process_fidelity(damped, chi_ideal(kPi / 2));
  CHECK(f == doctest::Approx(0.87).epsilon(1e-12));
  CHECK(f == doctest::Approx(fidelity_oracle(damped.matrix(), chi_ideal_oracle(kPi / 2))));
  // normalization: scaling either argument does not move F
  CHECK(process_fidelity(ChiMatrix(3.0 * damped.matrix()), chi_ideal(kPi / 2)) == doctest::Approx(0.87));
}

TEST_CASE("process_fidelity lies in [0,1] for physical vs ideal") {
  auto rng = substream(19, 0);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int i = 0; i < 200; ++i) {
    const double f = process_fidelity(random_cptp(rng), chi_ideal(u(rng)));
    CHECK(f >= -1e-12);
    CHECK(f <= 1 + 1e-12);
  }
}

TEST_CASE("property: F invariant under a common Z-rotation conjugation of the Kraus sets") {
  auto rng = substream(20, 0);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  const auto& P = paulis();
  for (int i = 0; i < 50; ++i) {
    const Matrix2c v = uz(u(rng));
    // K = sum e_m P_m  ->  V K V^+ = sum e_m V P_m V^+ ; chi -> R chi R^T
    Eigen::Matrix4d r;
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) r(n, m) = (P[n] * v * P[m] * v.adjoint()).trace().real() / 2;
    const auto a = random_cptp(rng), b = random_cptp(rng);
    const ChiMatrix a2(r.cast<cplx>() * a.matrix() * r.transpose().cast<cplx>());
    const ChiMatrix b2(r.cast<cplx>() * b.matrix() * r.transpose().cast<cplx>());
    CHECK(process_fidelity(a2, b2) == doctest::Approx(process_fidelity(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("optimize_phi examples") {
  const auto o = optimize_phi(chi_ideal(deg_to_rad(94.6)));
  CHECK(rad_to_deg(o.phi) == doctest::Approx(94.6).epsilon(1e-10));
  CHECK(o.fidelity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(o.degenerate);

  const ChiMatrix dep(Matrix4c::Identity() / 4.0);
  const auto d = optimize_phi(dep);
  CHECK(d.degenerate);
  CHECK(d.phi == 0.0);
  CHECK(d.fidelity == doctest::Approx(0.25));
  for (int deg = 0; deg < 360; deg += 15) CHECK(process_fidelity(dep, chi_ideal(deg_to_rad(deg))) == doctest::Approx(0.25));

  // paper regime: F = 0.87 +- 0.03 at t_ES = 0.59 ns
  const auto p = optimize_phi(dephased_rotation(deg_to_rad(94.6), 0.74));
  CHECK(std::abs(p.fidelity - 0.87) <= 0.03);
}

TEST_CASE("property: optimize_phi beats a 0.01 degree brute-force scan") {
  auto rng = substream(21, 0);
  for (int i = 0; i < 100; ++i) {
    const Matrix4c m = random_hermitian_psd(rng);
    const auto o = optimize_phi(ChiMatrix(m));
    double best = -1, best_phi = 0;
    for (int s = 0; s < 36000; ++s) {
      const double phi = deg_to_rad(s * 0.01);
      const double f = fidelity_oracle(m, chi_ideal_oracle(phi));
      if (f > best) best = f, best_phi = s * 0.01;
    }
    double dphi = std::fmod(std::abs(rad_to_deg(o.phi) - best_phi), 360.0);
    dphi = std::min(dphi, 360.0 - dphi);
    CHECK(dphi <= 0.02);
    CHECK(o.fidelity >= best - 1e-12);
    CHECK(o.fidelity == doctest::Approx(o.offset + std::hypot(o.cos_coeff, o.sin_coeff)));
  }
}

TEST_CASE("chi JSON round trip is bit exact") {
  auto rng = substream(22, 0);
  for (int i = 0; i < 20; ++i) {
    const auto chi = random_cptp(rng);
    const auto j = nlohmann::json::parse(chi_to_json(chi).dump());
    CHECK(j.at("basis") == nlohmann::json({"I", "X", "Y", "Z"}));
    const auto back = chi_from_json(j);
    CHECK(back.matrix() == chi.matrix());
  }
  CHECK_THROWS(chi_from_json(nlohmann::json{{"basis", {"I", "X", "Y", "Z"}}, {"re", {1, 2}}}));
}

TEST_CASE("ChiMatrix rejects non-Hermitian input") {
  Matrix4c m = Matrix4c::Identity() / 4.0;
  m(0, 1) = 0.1;
  CHECK_THROWS_AS(ChiMatrix{m}, std::invalid_argument);
  CHECK(identity_process().is_physical());
  CHECK(identity_process().tp_defect().norm() < 1e-15);
}
