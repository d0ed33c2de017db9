#include <cmath>
#include <complex>
#include <random>

#include <doctest.h>

#include "fc/lti.hpp"
#include "helpers.hpp"

using fc::Errc;
using fc::LtiSystem;
using fc::test::code_of;

namespace {

// relative degree two, one-dimensional leftover dynamics; blocks readable
// directly off the matrices
LtiSystem structured_siso() {
  LtiSystem s;
  s.A.resize(3, 3);
  s.A << 0, 1, 0, 1.5, -2, 0.7, 0.4, 0, -3;
  s.B.resize(3, 1);
  s.B << 0, 2, 0;
  s.C.resize(1, 3);
  s.C << 1, 0, 0;
  return s;
}

// two inputs/outputs, chain length two, scalar leftover dynamics
LtiSystem structured_mimo(double q = -2.0) {
  Eigen::MatrixXd R1(2, 2), R2(2, 2), Gamma(2, 2);
  R1 << 0.3, -0.1, 0.2, 0.5;
  R2 << -1, 0.4, 0, -0.7;
  Gamma << 2, 0.5, -0.5, 1;
  Eigen::VectorXd S(2);
  S << 0.5, -0.2;
  Eigen::RowVectorXd P(2);
  P << 0.3, 0.1;

  LtiSystem s;
  s.A = Eigen::MatrixXd::Zero(5, 5);
  s.A.block(0, 2, 2, 2).setIdentity();
  s.A.block(2, 0, 2, 2) = R1;
  s.A.block(2, 2, 2, 2) = R2;
  s.A.block(2, 4, 2, 1) = S;
  s.A.block(4, 0, 1, 2) = P;
  s.A(4, 4) = q;
  s.B = Eigen::MatrixXd::Zero(5, 2);
  s.B.block(2, 0, 2, 2) = Gamma;
  s.C = Eigen::MatrixXd::Zero(2, 5);
  s.C.block(0, 0, 2, 2).setIdentity();
  return s;
}

LtiSystem heat_modes3() {
  LtiSystem s;
  s.A = Eigen::Vector3d(0, -M_PI * M_PI, -4 * M_PI * M_PI).asDiagonal();
  s.B = Eigen::Vector3d(1, 0, 0);
  s.C.resize(1, 3);
  s.C << 0.5, 0, 0.25;
  return s;
}

LtiSystem scalar_sys(double a) {
  LtiSystem s;
  s.A.resize(1, 1);
  s.A << a;
  s.B.resize(1, 1);
  s.B << 1;
  s.C.resize(1, 1);
  s.C << 1;
  return s;
}

}  // namespace

TEST_SUITE("lti") {

TEST_CASE("relative degree of an integrator chain") {
  LtiSystem s;
  s.A.resize(2, 2);
  s.A << 0, 1, 0, 0;
  s.B.resize(2, 1);
  s.B << 0, 1;
  s.C.resize(1, 2);
  s.C << 1, 0;
  auto rd = fc::relative_degree(s);
  REQUIRE(rd.has_value());
  CHECK(rd->r == 2);
  CHECK(rd->Gamma(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("rank-deficient leading block yields no relative degree") {
  LtiSystem s;
  s.A = Eigen::MatrixXd::Zero(2, 2);
  s.B = Eigen::MatrixXd::Identity(2, 2);
  s.C.resize(2, 2);
  s.C << 1, 0, 0, 1e-13;  // CB clearly rank one at the working tolerance
  CHECK_FALSE(fc::relative_degree(s).has_value());
  CHECK(code_of([&] { fc::byrnes_isidori(s); }) == Errc::invalid_argument);

  s.C(1, 1) = 1e-11;  // inside the ambiguous band: refuse to decide
  CHECK(code_of([&] { fc::relative_degree(s); }) == Errc::numerical_rank);
}

TEST_CASE("structured blocks recovered from a known chain form") {
  auto s = structured_siso();
  auto bi = fc::byrnes_isidori(s);
  CHECK(bi.r == 2);
  CHECK(bi.Gamma(0, 0) == doctest::Approx(2.0));
  CHECK(bi.R[0](0, 0) == doctest::Approx(1.5));
  CHECK(bi.R[1](0, 0) == doctest::Approx(-2.0));
  CHECK(bi.Q(0, 0) == doctest::Approx(-3.0));
  // the leftover coordinate is determined up to sign; the product is invariant
  CHECK((bi.S * bi.P)(0, 0) == doctest::Approx(0.7 * 0.4));

  // coordinate change is a genuine inverse pair and produces the chain shape
  CHECK((bi.U * bi.U_inv - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  Eigen::MatrixXd At = bi.U * s.A * bi.U_inv;
  CHECK(At(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(At(0, 1) == doctest::Approx(1.0));
  CHECK(At(0, 2) == doctest::Approx(0.0).epsilon(1e-12));
  Eigen::MatrixXd Bt = bi.U * s.B;
  CHECK(Bt(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(Bt(1, 0) == doctest::Approx(2.0));
  CHECK(Bt(2, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("blocks of a two-input chain are reproduced") {
  auto s = structured_mimo();
  auto bi = fc::byrnes_isidori(s);
  CHECK(bi.r == 2);
  Eigen::MatrixXd R1(2, 2), R2(2, 2), Gamma(2, 2);
  R1 << 0.3, -0.1, 0.2, 0.5;
  R2 << -1, 0.4, 0, -0.7;
  Gamma << 2, 0.5, -0.5, 1;
  CHECK((bi.Gamma - Gamma).norm() < 1e-10);
  CHECK((bi.R[0] - R1).norm() < 1e-10);
  CHECK((bi.R[1] - R2).norm() < 1e-10);
  CHECK(bi.Q(0, 0) == doctest::Approx(-2.0));
  Eigen::MatrixXd SP_expected(2, 2);
  SP_expected << 0.5 * 0.3, 0.5 * 0.1, -0.2 * 0.3, -0.2 * 0.1;
  CHECK((bi.S * bi.P - SP_expected).norm() < 1e-10);
}

TEST_CASE("structured blocks are similarity invariants") {
  auto s = structured_siso();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 0.3);
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) T(i, j) += nd(rng);
  LtiSystem st;
  st.A = T * s.A * T.inverse();
  st.B = T * s.B;
  st.C = s.C * T.inverse();
  auto bi = fc::byrnes_isidori(st);
  CHECK(bi.Gamma(0, 0) == doctest::Approx(2.0));
  CHECK(bi.R[0](0, 0) == doctest::Approx(1.5));
  CHECK(bi.R[1](0, 0) == doctest::Approx(-2.0));
  CHECK(bi.Q(0, 0) == doctest::Approx(-3.0));
  CHECK((bi.S * bi.P)(0, 0) == doctest::Approx(0.28));
}

TEST_CASE("transfer functions from both representations agree") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> re(-2.0, 2.0), im(0.3, 4.0);
  for (const auto& s : {structured_siso(), structured_mimo()}) {
    auto bi = fc::byrnes_isidori(s);
    for (int i = 0; i < 20; ++i) {
      const std::complex<double> z(re(rng), im(rng));
      Eigen::MatrixXcd g1 = fc::transfer_eval(s, z);
      Eigen::MatrixXcd g2 = fc::transfer_eval(bi, z);
      CHECK((g1 - g2).norm() <= 1e-8 * std::max(1.0, g1.norm()));
    }
  }
}

TEST_CASE("zero dynamics spectrum equals the pencil zeros") {
  auto rep = fc::zero_dynamics(structured_mimo());
  REQUIRE(rep.internal_spectrum.size() == 1);
  CHECK(rep.internal_spectrum(0).real() == doctest::Approx(-2.0));
  CHECK(rep.asymptotically_stable);
  REQUIRE(rep.invariant_zeros.size() == 1);
  CHECK(rep.invariant_zeros(0).real() == doctest::Approx(-2.0).epsilon(1e-8));
  CHECK(std::abs(rep.invariant_zeros(0).imag()) < 1e-8);

  auto bad = fc::zero_dynamics(structured_mimo(+1.0));
  CHECK_FALSE(bad.asymptotically_stable);
  CHECK(bad.spectral_abscissa == doctest::Approx(1.0));

  // full-length chain leaves nothing over: stable by convention, no zeros
  LtiSystem chain;
  chain.A.resize(2, 2);
  chain.A << 0, 1, 0, 0;
  chain.B.resize(2, 1);
  chain.B << 0, 1;
  chain.C.resize(1, 2);
  chain.C << 1, 0;
  auto none = fc::zero_dynamics(chain);
  CHECK(none.asymptotically_stable);
  CHECK(none.internal_spectrum.size() == 0);
  CHECK(none.invariant_zeros.size() == 0);
}

TEST_CASE("sign definiteness of the leading gain") {
  Eigen::MatrixXd G(2, 2);
  G << 1, 3, 0, 1;  // symmetric part has eigenvalues -0.5 and 2.5
  CHECK_FALSE(fc::sign_definite(G).definite);

  Eigen::MatrixXd H(2, 2);
  H << 2, 0.5, -0.5, 1;  // symmetric part diag(2, 1)
  auto sd = fc::sign_definite(H);
  CHECK(sd.definite);
  CHECK(sd.sign == 1);
  auto sdm = fc::sign_definite(Eigen::MatrixXd(-H));
  CHECK(sdm.definite);
  CHECK(sdm.sign == -1);

  Eigen::MatrixXd K(2, 2);
  K << 0, 1, -1, 0;  // skew: quadratic form vanishes everywhere
  CHECK_FALSE(fc::sign_definite(K).definite);
}

TEST_CASE("high gain threshold for scalar loops") {
  auto k1 = fc::high_gain_threshold(scalar_sys(1.0), 100.0);
  REQUIRE(k1.has_value());
  CHECK(std::abs(*k1 - 1.0) <= 2e-6);

  auto k0 = fc::high_gain_threshold(scalar_sys(0.0), 100.0);
  REQUIRE(k0.has_value());
  CHECK(*k0 <= 1e-6);

  CHECK_FALSE(fc::high_gain_threshold(scalar_sys(5.0), 2.0).has_value());

  LtiSystem chain;
  chain.A.resize(2, 2);
  chain.A << 0, 1, 0, 0;
  chain.B.resize(2, 1);
  chain.B << 0, 1;
  chain.C.resize(1, 2);
  chain.C << 1, 0;
  CHECK(code_of([&] { fc::high_gain_threshold(chain, 10.0); }) == Errc::invalid_argument);
}

TEST_CASE("membership in the admissible linear class") {
  auto heat = fc::is_in_Lmr(heat_modes3());
  CHECK(heat.member);
  CHECK(heat.r == 1);

  auto unstable = fc::is_in_Lmr(structured_mimo(+1.0));
  CHECK_FALSE(unstable.member);
  CHECK(unstable.zd_stable == false);
  CHECK(unstable.gamma_sign_definite);

  LtiSystem nord;
  nord.A = Eigen::MatrixXd::Zero(2, 2);
  nord.B = Eigen::MatrixXd::Identity(2, 2);
  nord.C.resize(2, 2);
  nord.C << 1, 0, 0, 0;  // CB singular and so is every later block
  auto rep = fc::is_in_Lmr(nord);
  CHECK_FALSE(rep.member);
  CHECK_FALSE(rep.r.has_value());
}

}  // TEST_SUITE
