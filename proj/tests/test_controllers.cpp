#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "fc/controllers.hpp"
#include "helpers.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using fc::AlphaMap;
using fc::DesignParams;
using fc::Errc;
using fc::FunnelFunction;
using fc::SurjectionMap;
using fc::test::code_of;

namespace {

VectorXd scalar(double v) {
  VectorXd x(1);
  x << v;
  return x;
}

DesignParams basic_params(int r = 1) {
  DesignParams p;
  p.alpha = AlphaMap::reciprocal();
  p.N = SurjectionMap::neg_identity();
  p.phi = FunnelFunction::constant_reciprocal(1.0);
  p.r = r;
  p.r_hat = r;
  return p;
}

// weight phi(t) = 1 + t: a valid funnel whose weight grows without bound
FunnelFunction unbounded_weight() {
  fc::CustomFunnelTraits traits;
  traits.bounded = false;
  traits.liminf_positive = true;
  traits.zero_at_zero = false;
  traits.smoothness = 3;
  return FunnelFunction::custom(
      [](double t, int order) {
        if (order == 0) return 1.0 + t;
        return order == 1 ? 1.0 : 0.0;
      },
      traits);
}

// the filtered feedback at depth two, written out longhand for cross-checking
// the recursive implementation (scalar measurement, one filter state)
double gamma2_longhand(double v, double xi, double a_of_k, double nprime, double n_of_k) {
  double g1 = n_of_k * v;
  double djac2 = nprime * nprime * v * v + n_of_k * n_of_k;
  double amp = a_of_k * (1.0 + std::abs(xi));
  return g1 - amp * amp * djac2 * (xi - g1);
}

}  // namespace

TEST_SUITE_BEGIN("controllers");

TEST_CASE("gain maps: values, rates, and domains") {
  AlphaMap rec = AlphaMap::reciprocal();
  CHECK(rec(0.75) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(rec(0.0) == doctest::Approx(1.0));
  CHECK(rec.gain_rate(4.0) == doctest::Approx(16.0).epsilon(1e-15));

  AlphaMap pow2 = AlphaMap::power_reciprocal(2.0);
  CHECK(pow2(0.75) == doctest::Approx(16.0).epsilon(1e-14));
  CHECK(pow2.gain_rate(16.0) == doctest::Approx(128.0).epsilon(1e-14));

  // the rate function must reproduce the slope of the map: alpha' = a(alpha)
  for (const AlphaMap& a : {rec, pow2}) {
    for (double s = 0.05; s < 0.9; s += 0.1) {
      double h = 1e-7;
      double slope = (a(s + h) - a(s - h)) / (2.0 * h);
      CHECK(slope == doctest::Approx(a.gain_rate(a(s))).epsilon(1e-5));
    }
  }

  CHECK(code_of([&] { rec(1.0); }) == Errc::domain_violation);
  CHECK(code_of([&] { rec(-0.1); }) == Errc::domain_violation);
  CHECK(code_of([&] { rec.gain_rate(0.5); }) == Errc::invalid_argument);
  CHECK(code_of([] { AlphaMap::power_reciprocal(0.0); }) == Errc::invalid_argument);
}

TEST_CASE("direction maps: families, derivatives, custom callables") {
  CHECK(SurjectionMap::neg_identity()(2.0) == -2.0);
  CHECK(SurjectionMap::pos_identity()(2.0) == 2.0);
  CHECK(SurjectionMap::s_sin_s()(2.0) == doctest::Approx(2.0 * std::sin(2.0)));
  CHECK(SurjectionMap::neg_identity().derivative(5.0) == -1.0);
  CHECK(SurjectionMap::s_sin_s().derivative(2.0) ==
        doctest::Approx(std::sin(2.0) + 2.0 * std::cos(2.0)));

  SurjectionMap cub = SurjectionMap::custom([](double s) { return s * s * s; },
                                            [](double s) { return 3.0 * s * s; });
  CHECK(cub(2.0) == 8.0);
  CHECK(cub.derivative(2.0) == 12.0);
  CHECK(cub.differentiable());

  SurjectionMap bare = SurjectionMap::custom([](double s) { return -s; });
  CHECK_FALSE(bare.differentiable());
  CHECK(code_of([&] { bare.derivative(1.0); }) == Errc::unsupported_derivative);
  CHECK(code_of([] { SurjectionMap::custom({}); }) == Errc::invalid_argument);
}

TEST_CASE("unit-ball gain map") {
  AlphaMap rec = AlphaMap::reciprocal();
  CHECK(fc::gamma(scalar(0.5), rec)(0) == doctest::Approx(0.66666666666666663).epsilon(1e-15));

  VectorXd w(2);
  w << 0.3, 0.4;  // norm 0.5, so the scale is alpha(0.25) = 4/3
  VectorXd g = fc::gamma(w, rec);
  CHECK(g(0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(g(1) == doctest::Approx(0.53333333333333333).epsilon(1e-15));

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uni(-0.6, 0.6);
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd v(3);
    v << uni(rng), uni(rng), uni(rng);
    if (v.norm() >= 0.99) continue;
    CHECK((fc::gamma(-v, rec) + fc::gamma(v, rec)).norm() == doctest::Approx(0.0).epsilon(1e-14));
  }

  CHECK(code_of([&] { fc::gamma(scalar(1.0), rec); }) == Errc::domain_violation);
  CHECK(code_of([&] { fc::gamma(scalar(1.0 - 1e-13), rec); }) == Errc::domain_violation);
}

TEST_CASE("nested error map") {
  AlphaMap rec = AlphaMap::reciprocal();

  VectorXd eta(2);
  eta << 0.5, 0.0;
  auto w = fc::rho_r(eta, 2, 1, rec);
  REQUIRE(w.has_value());
  CHECK((*w)(0) == doctest::Approx(0.66666666666666663).epsilon(1e-15));

  // the second coordinate pushes the recursion out of the ball: 0.4 + 2/3 > 1
  eta << 0.5, 0.4;
  CHECK_FALSE(fc::rho_r(eta, 2, 1, rec).has_value());

  // depth one is the identity on the ball
  auto id = fc::rho_r(scalar(0.25), 1, 1, rec);
  REQUIRE(id.has_value());
  CHECK((*id)(0) == 0.25);

  // whenever a value comes back it lies strictly inside the unit ball
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uni(-1.5, 1.5);
  for (int r = 1; r <= 4; ++r) {
    for (int m = 1; m <= 3; ++m) {
      int inside = 0;
      for (int trial = 0; trial < 10000; ++trial) {
        VectorXd stack(r * m);
        for (int i = 0; i < stack.size(); ++i) stack(i) = uni(rng) * 0.4;
        auto out = fc::rho_r(stack, r, m, rec);
        if (out) {
          ++inside;
          CHECK(out->norm() < 1.0);
        }
      }
      CHECK(inside > 0);
    }
  }

  CHECK(code_of([&] { fc::rho_r(scalar(0.1), 2, 1, rec); }) == Errc::invalid_argument);
}

TEST_CASE("static funnel feedback") {
  DesignParams p1 = basic_params(1);
  CHECK(fc::fc_output(p1, 0.0, scalar(0.5))(0) ==
        doctest::Approx(-0.66666666666666663).epsilon(1e-15));

  // depth two: w = gamma(0.5) = 2/3, then scale by -alpha(4/9) = -9/5
  DesignParams p2 = basic_params(2);
  VectorXd stacked(2);
  stacked << 0.5, 0.0;
  CHECK(fc::fc_output(p2, 0.0, stacked)(0) == doctest::Approx(-1.2).epsilon(1e-14));

  // odd in the feedback vector when the direction map is odd
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> uni(-0.25, 0.25);
  DesignParams p2m = basic_params(2);
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd e(4);
    for (int i = 0; i < 4; ++i) e(i) = uni(rng);
    auto maybe = fc::rho_r(e, 2, 2, p2m.alpha);
    if (!maybe) continue;
    VectorXd a = fc::fc_output(p2m, 1.0, e);
    VectorXd b = fc::fc_output(p2m, 1.0, -e);
    CHECK((a + b).norm() == doctest::Approx(0.0).epsilon(1e-13));
  }

  CHECK(code_of([&] { fc::fc_output(p1, 0.0, scalar(1.2)); }) == Errc::domain_violation);

  // replacing error derivatives by output derivatives requires a bounded weight
  DesignParams truncated = basic_params(2);
  truncated.r_hat = 1;
  truncated.phi = unbounded_weight();
  CHECK(code_of([&] { truncated.validate(); }) == Errc::invalid_argument);
  truncated.phi = FunnelFunction::exp_decay_reciprocal(4.0, 2.0, 0.1);
  CHECK_NOTHROW(truncated.validate());

  DesignParams bad = basic_params(2);
  bad.r_hat = 3;
  CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_argument);
}

TEST_CASE("classic gain and scalar adaptation laws") {
  CHECK(fc::classic_gain(1.0, 0.5) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(fc::classic_gain(2.0, 0.25) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK(code_of([] { fc::classic_gain(1.0, 1.0); }) == Errc::domain_violation);
  CHECK(code_of([] { fc::classic_gain(-1.0, 0.5); }) == Errc::invalid_argument);

  auto hg = fc::high_gain_step(3.0, scalar(0.5));
  CHECK(hg.u(0) == -1.5);
  CHECK(hg.k_dot == 0.25);

  CHECK(fc::dist_lambda(0.05, 0.1) == 0.0);
  CHECK(fc::dist_lambda(-0.5, 0.1) == doctest::Approx(0.4));
  auto lam_inside = fc::lambda_step(2.0, scalar(0.05), 0.1);
  CHECK(lam_inside.u(0) == doctest::Approx(-0.1));
  CHECK(lam_inside.k_dot == 0.0);  // adaptation freezes inside the tube
  auto lam_outside = fc::lambda_step(2.0, scalar(0.5), 0.1);
  CHECK(lam_outside.k_dot == doctest::Approx(0.2).epsilon(1e-15));

  std::mt19937 rng(17);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  for (int trial = 0; trial < 300; ++trial) {
    CHECK(fc::lambda_step(1.0, scalar(uni(rng)), 0.3).k_dot >= 0.0);
  }
}

TEST_CASE("switching function and its sign-alternation probe") {
  CHECK(fc::nussbaum_N(0.0) == 0.0);
  CHECK(fc::nussbaum_N(M_PI) == doctest::Approx(-M_PI * M_PI));

  // the control attacks with the raw (not negated) switching gain
  auto nb = fc::nussbaum_step(2.0, scalar(0.5));
  CHECK(nb.u(0) == doctest::Approx(fc::nussbaum_N(2.0) * 0.5));
  CHECK(nb.k_dot == 0.25);

  CHECK(fc::nussbaum_antiderivative(M_PI) - fc::nussbaum_antiderivative(0.0) ==
        doctest::Approx(-6.2831853071795853).epsilon(1e-14));

  // exact antiderivative against quadrature on one period
  double quad = 0.0;
  int steps = 20000;
  for (int i = 0; i < steps; ++i) {
    double a = 2.0 * M_PI * i / steps;
    double b = 2.0 * M_PI * (i + 1) / steps;
    quad += (b - a) / 6.0 *
            (fc::nussbaum_N(a) + 4.0 * fc::nussbaum_N(0.5 * (a + b)) + fc::nussbaum_N(b));
  }
  CHECK(quad == doctest::Approx(fc::nussbaum_antiderivative(2.0 * M_PI) -
                                fc::nussbaum_antiderivative(0.0))
                    .epsilon(1e-9));

  // running means must take both signs...
  auto mean_to = [](double k) {
    return (fc::nussbaum_antiderivative(k) - fc::nussbaum_antiderivative(0.0)) / k;
  };
  for (int j = 1; j <= 50; ++j) {
    CHECK(mean_to(2.0 * M_PI * j) > 0.0);
    CHECK(mean_to(2.0 * M_PI * j + M_PI) < 0.0);
  }
  // ...and with magnitudes growing beyond any bound (sampled at the
  // quarter-period peaks, where the mean grows linearly in k)
  double prev_hi = 0.0, prev_lo = 0.0;
  for (int j = 5; j <= 50; j += 5) {
    double hi = mean_to(2.0 * M_PI * j + 0.5 * M_PI);
    double lo = mean_to(2.0 * M_PI * j + 1.5 * M_PI);
    CHECK(hi > prev_hi);
    CHECK(lo < prev_lo);
    prev_hi = hi;
    prev_lo = lo;
  }
  CHECK(prev_hi > 100.0);
  CHECK(prev_lo < -100.0);
}

TEST_CASE("filter controller: depth one and two") {
  fc::FilterFc fc1;
  fc1.params = basic_params(1);
  fc1.mu = 1.0;
  fc1.m = 1;

  // depth one coincides with the static law (no filter state at all)
  std::mt19937 rng(19);
  std::uniform_real_distribution<double> uni(-0.8, 0.8);
  DesignParams st = basic_params(1);
  st.phi = FunnelFunction::exp_decay_reciprocal(0.95, 0.5, 0.05);
  fc1.params.phi = st.phi;
  for (int trial = 0; trial < 50; ++trial) {
    double t = 0.1 + 0.05 * trial;
    double e = uni(rng);
    if (st.phi.phi(t) * std::abs(e) >= 0.98) continue;
    auto res = fc1.step(t, scalar(e), VectorXd(0));
    VectorXd direct = fc::fc_output(st, t, scalar(e));
    CHECK(res.u(0) == doctest::Approx(direct(0)).epsilon(1e-15));
    CHECK(res.xi_dot.size() == 0);
  }

  fc::FilterFc fc2;
  fc2.params = basic_params(2);
  fc2.mu = 1.0;
  fc2.m = 1;

  auto at_rest = fc2.step(0.0, scalar(0.0), scalar(0.3));
  CHECK(at_rest.u(0) == doctest::Approx(-0.50700000000000001).epsilon(1e-15));
  CHECK(at_rest.k == doctest::Approx(1.0));
  CHECK(at_rest.xi_dot(0) == doctest::Approx(-0.3 + at_rest.u(0)));

  auto active = fc2.step(0.0, scalar(0.5), scalar(0.2));
  CHECK(active.u(0) == doctest::Approx(-8.6648230452674895).epsilon(1e-13));

  // longhand depth-two expansion on random inputs
  for (int trial = 0; trial < 100; ++trial) {
    double e = uni(rng);
    double xi = uni(rng);
    if (std::abs(e) >= 0.98) continue;
    double kappa = 1.0 / (1.0 - e * e);
    double expected = gamma2_longhand(e, xi, kappa * kappa, -1.0, -kappa);
    auto res = fc2.step(0.0, scalar(e), scalar(xi));
    CHECK(res.u(0) == doctest::Approx(expected).epsilon(1e-12));
  }

  CHECK(code_of([&] { fc2.step(0.0, scalar(1.0), scalar(0.0)); }) == Errc::domain_violation);
}

TEST_CASE("filter controller: vector measurements and deeper recursion") {
  // depth two with two measurement channels against the longhand expansion
  fc::FilterFc fcv;
  fcv.params = basic_params(2);
  fcv.mu = 1.0;
  fcv.m = 2;

  std::mt19937 rng(23);
  std::uniform_real_distribution<double> uni(-0.4, 0.4);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd e(2), xi(2);
    e << uni(rng), uni(rng);
    xi << uni(rng), uni(rng);
    if (e.norm() >= 0.98) continue;
    double kappa = 1.0 / (1.0 - e.squaredNorm());
    VectorXd g1 = -kappa * e;
    double djac2 = e.squaredNorm() + kappa * kappa;
    double amp = kappa * kappa * (1.0 + xi.norm());
    VectorXd expected = g1 - amp * amp * djac2 * (xi - g1);
    auto res = fcv.step(0.0, e, xi);
    CHECK((res.u - expected).norm() == doctest::Approx(0.0).epsilon(1e-11));
  }

  // depth three: the automatic derivative of the depth-two map must agree
  // with a finite-difference Jacobian of the longhand expansion
  fc::FilterFc fc3;
  fc3.params = basic_params(3);
  fc3.mu = 0.7;
  fc3.m = 1;

  double e = 0.3, xi1 = 0.1, xi2 = -0.2;
  double kappa = 1.0 / (1.0 - e * e);
  auto g2 = [&](double kk, double vv, double x1) {
    return gamma2_longhand(vv, x1, kk * kk, -1.0, -kk);
  };
  double h = 1e-6;
  double dk = (g2(kappa + h, e, xi1) - g2(kappa - h, e, xi1)) / (2.0 * h);
  double dv = (g2(kappa, e + h, xi1) - g2(kappa, e - h, xi1)) / (2.0 * h);
  double dx = (g2(kappa, e, xi1 + h) - g2(kappa, e, xi1 - h)) / (2.0 * h);
  double djac3 = dk * dk + dv * dv + dx * dx;
  double stacked = std::sqrt(xi1 * xi1 + xi2 * xi2);
  double amp = kappa * kappa * (1.0 + stacked);
  double prev = g2(kappa, e, xi1);
  double expected = prev - amp * amp * djac3 * (xi2 / fc3.mu - prev);

  VectorXd xi(2);
  xi << xi1, xi2;
  auto res = fc3.step(0.0, scalar(e), xi);
  CHECK(res.u(0) == doctest::Approx(expected).epsilon(1e-5));
  CHECK(res.xi_dot(0) == doctest::Approx(-0.7 * xi1 + xi2));
  CHECK(res.xi_dot(1) == doctest::Approx(-0.7 * xi2 + res.u(0)));

  // custom direction maps carry through depth two but not beyond
  fc::FilterFc custom2;
  custom2.params = basic_params(2);
  custom2.params.N = SurjectionMap::custom([](double s) { return -s; },
                                           [](double) { return -1.0; });
  custom2.mu = 1.0;
  custom2.m = 1;
  auto mirrored = custom2.step(0.0, scalar(0.5), scalar(0.2));
  CHECK(mirrored.u(0) == doctest::Approx(-8.6648230452674895).epsilon(1e-12));

  fc::FilterFc custom3 = custom2;
  custom3.params.r = 3;
  custom3.params.r_hat = 3;
  CHECK(code_of([&] { custom3.validate(); }) == Errc::invalid_argument);

  fc::FilterFc bare2 = custom2;
  bare2.params.N = SurjectionMap::custom([](double s) { return -s; });
  CHECK(code_of([&] { bare2.validate(); }) == Errc::invalid_argument);

  fc::FilterFc too_deep;
  too_deep.params = basic_params(6);
  CHECK(code_of([&] { too_deep.validate(); }) == Errc::invalid_argument);
}

TEST_CASE("compensator design solves the coupling equations") {
  VectorXd q2(2);
  q2 << 1.0, 1.0;
  MatrixXd Q2 = fc::precomp_Q_matrix(q2);
  CHECK(Q2(0, 0) == -1.0);
  CHECK(Q2(0, 1) == 1.0);
  CHECK(Q2(1, 0) == -1.0);
  CHECK(Q2(1, 1) == 0.0);

  VectorXd p2 = fc::precomp_design(q2, MatrixXd::Identity(2, 2));
  CHECK(p2(0) == 1.0);
  CHECK(p2(1) == doctest::Approx(0.33333333333333331).epsilon(1e-14));

  VectorXd q3(3);
  q3 << 2.0, 2.0, 1.0;
  VectorXd p3 = fc::precomp_design(q3, MatrixXd::Identity(3, 3));
  CHECK(p3(0) == 1.0);
  CHECK(p3(1) == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(p3(2) == doctest::Approx(0.49999999999999994).epsilon(1e-13));

  // the companion orientation: det(sI - Q) at s=1 is 1 + q1 + q2 + q3
  MatrixXd Q3 = fc::precomp_Q_matrix(q3);
  CHECK((MatrixXd::Identity(3, 3) - Q3).determinant() == doctest::Approx(6.0).epsilon(1e-13));

  // scalar chain: P = 1/(2 q), p = (1)
  VectorXd q1(1);
  q1 << 3.0;
  VectorXd p1 = fc::precomp_design(q1, MatrixXd::Identity(1, 1));
  CHECK(p1(0) == 1.0);

  VectorXd unstable(3);
  unstable << 1.0, 1.0, 2.0;  // s^3 + s^2 + s + 2 has roots in the right half-plane
  CHECK(code_of([&] { fc::precomp_design(unstable, MatrixXd::Identity(3, 3)); }) ==
        Errc::invalid_argument);

  VectorXd neg(2);
  neg << 1.0, -1.0;
  CHECK(code_of([&] { fc::precomp_design(neg, MatrixXd::Identity(2, 2)); }) ==
        Errc::invalid_argument);

  MatrixXd skewed(2, 2);
  skewed << 1.0, 0.5, -0.5, 1.0;
  CHECK(code_of([&] { fc::precomp_design(q2, skewed); }) == Errc::invalid_argument);

  MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  CHECK(code_of([&] { fc::precomp_design(q2, indefinite); }) == Errc::invalid_argument);
}

TEST_CASE("gain-mismatch bound for compensator chains") {
  CHECK(fc::precomp_mismatch_bound(3, 2.0) == doctest::Approx(2.0 / 47.0).epsilon(1e-15));
  CHECK(fc::precomp_mismatch_bound(3, 2.0) ==
        doctest::Approx(0.042553191489361701).epsilon(1e-15));

  auto sweep = [](int r) {
    double best = 0.0, best_rho = 1.0;
    for (double rho = 1.00001; rho <= 3.0; rho += 1e-5) {
      double b = fc::precomp_mismatch_bound(r, rho);
      if (b > best) {
        best = b;
        best_rho = rho;
      }
    }
    return std::pair<double, double>(best, best_rho);
  };
  auto [max3, arg3] = sweep(3);
  CHECK(max3 == doctest::Approx(0.11681).epsilon(1e-3));
  CHECK(arg3 == doctest::Approx(1.11681).epsilon(1e-3));
  CHECK(std::round(max3 * 1000.0) / 1000.0 == doctest::Approx(0.117));
  auto [max5, arg5] = sweep(5);
  CHECK(max5 == doctest::Approx(0.026402).epsilon(1e-3));
  CHECK(arg5 == doctest::Approx(1.07921).epsilon(1e-3));

  CHECK(code_of([] { fc::precomp_mismatch_bound(2, 1.5); }) == Errc::invalid_argument);
  CHECK(code_of([] { fc::precomp_mismatch_bound(3, 1.0); }) == Errc::invalid_argument);
}

TEST_CASE("pre-compensator stage dynamics") {
  fc::PrecompStage st;
  st.r = 3;
  st.m = 1;
  st.p = Eigen::Vector3d(1.0, 0.5, 0.5);
  st.q = Eigen::Vector3d(2.0, 2.0, 1.0);
  st.Gamma_tilde = MatrixXd::Identity(1, 1);
  st.phi = FunnelFunction::constant_reciprocal(2.0);

  // zero error: pure shift with the control entering the last state
  VectorXd xi(3);
  xi << 0.4, -0.1, 0.2;
  auto rest = st.step(0.0, scalar(0.4), xi, scalar(0.7));
  CHECK(rest.k == doctest::Approx(1.0));
  CHECK(rest.xi_dot(0) == doctest::Approx(-0.1));
  CHECK(rest.xi_dot(1) == doctest::Approx(0.2));
  CHECK(rest.xi_dot(2) == doctest::Approx(0.7));

  // the documented two-state specialization: xi2' = u + (1 + k/3)(y - xi1)
  fc::PrecompStage two;
  two.r = 2;
  two.m = 1;
  two.p = Eigen::Vector2d(1.0, 1.0 / 3.0);
  two.q = Eigen::Vector2d(1.0, 1.0);
  two.Gamma_tilde = MatrixXd::Identity(1, 1);
  two.phi = FunnelFunction::constant_reciprocal(1.0);  // weight 1, doubled from 1/2

  VectorXd xi2(2);
  xi2 << 0.1, -0.2;
  double y = 0.3, u = 0.7;
  auto d = two.step(0.0, scalar(y), xi2, scalar(u));
  double err = y - 0.1;
  double k = 1.0 / (1.0 - err * err);
  CHECK(d.k == doctest::Approx(k).epsilon(1e-15));
  CHECK(d.xi_dot(0) == doctest::Approx(-0.2 + (1.0 + k) * err).epsilon(1e-15));
  CHECK(d.xi_dot(1) == doctest::Approx(u + (1.0 + k / 3.0) * err).epsilon(1e-15));

  CHECK(code_of([&] { two.step(0.0, scalar(1.2), xi2, scalar(0.0)); }) ==
        Errc::domain_violation);

  fc::PrecompStage bad = two;
  bad.p(1) = 0.0;
  CHECK(code_of([&] { bad.step(0.0, scalar(0.1), xi2, scalar(0.0)); }) ==
        Errc::invalid_argument);
}

TEST_CASE("pre-compensator cascade: flow and derivative surrogates") {
  auto make_stage = [](double weight_scale) {
    fc::PrecompStage st;
    st.r = 3;
    st.m = 1;
    st.q = Eigen::Vector3d(2.0, 2.0, 1.0);
    st.p = fc::precomp_design(st.q, MatrixXd::Identity(3, 3));
    st.Gamma_tilde = MatrixXd::Identity(1, 1);
    st.phi = FunnelFunction::constant_reciprocal(2.0).scaled(weight_scale);
    return st;
  };

  fc::PrecompCascade cas;
  cas.r = 3;
  cas.m = 1;
  cas.stages = {make_stage(1.0), make_stage(2.0)};

  // identical stage states and a matching measurement: every error vanishes,
  // the chain shifts, and the surrogate derivatives are the raw states
  VectorXd state(6);
  state << 0.4, -0.1, 0.25, 0.4, -0.1, 0.25;
  auto flow = cas.flow(0.0, scalar(0.4), scalar(0.9), state);
  CHECK(flow.gains.size() == 2);
  CHECK(flow.gains[0] == doctest::Approx(1.0));
  CHECK(flow.state_dot(0) == doctest::Approx(-0.1));
  CHECK(flow.state_dot(2) == doctest::Approx(0.9));
  CHECK(flow.state_dot(5) == doctest::Approx(0.9));  // the control drives every stage

  auto z = cas.surrogates(0.0, scalar(0.4), state);
  REQUIRE(z.size() == 3);
  CHECK(z[0](0) == doctest::Approx(0.4));
  CHECK(z[1](0) == doctest::Approx(-0.1));
  CHECK(z[2](0) == doctest::Approx(0.25));

  // the second stage reads the first stage's output, not the plant's
  VectorXd staggered(6);
  staggered << 0.4, -0.1, 0.25, 0.3, 0.0, 0.1;
  auto f2 = cas.flow(0.0, scalar(0.4), scalar(0.0), staggered);
  double err2 = 0.4 - 0.3;
  double w2 = cas.stages[1].phi.phi(0.0);
  double k2 = 1.0 / (1.0 - w2 * w2 * err2 * err2);
  CHECK(f2.gains[1] == doctest::Approx(k2).epsilon(1e-14));
  CHECK(f2.state_dot(3) ==
        doctest::Approx(0.0 + (cas.stages[1].q(0) + cas.stages[1].p(0) * k2) * err2));

  // single-stage chain: zdot = xi2 + (q1 + p1 k)(y - xi1)
  fc::PrecompCascade single;
  single.r = 2;
  single.m = 1;
  fc::PrecompStage st2;
  st2.r = 2;
  st2.m = 1;
  st2.q = Eigen::Vector2d(1.0, 1.0);
  st2.p = Eigen::Vector2d(1.0, 1.0 / 3.0);
  st2.Gamma_tilde = MatrixXd::Identity(1, 1);
  st2.phi = FunnelFunction::constant_reciprocal(1.0);
  single.stages = {st2};
  VectorXd s2(2);
  s2 << 0.1, -0.2;
  auto zs = single.surrogates(0.0, scalar(0.3), s2);
  double errs = 0.3 - 0.1;
  double ks = 1.0 / (1.0 - errs * errs);
  CHECK(zs[0](0) == doctest::Approx(0.1));
  CHECK(zs[1](0) == doctest::Approx(-0.2 + (1.0 + ks) * errs).epsilon(1e-15));
}

TEST_CASE("surrogate derivatives agree with finite differences along a run") {
  fc::PrecompCascade cas;
  cas.r = 3;
  cas.m = 1;
  for (double scale : {1.0, 2.0}) {
    fc::PrecompStage st;
    st.r = 3;
    st.m = 1;
    st.q = Eigen::Vector3d(2.0, 2.0, 1.0);
    st.p = fc::precomp_design(st.q, MatrixXd::Identity(3, 3));
    st.Gamma_tilde = MatrixXd::Identity(1, 1);
    st.phi = FunnelFunction::constant_reciprocal(2.0).scaled(scale);
    cas.stages.push_back(st);
  }

  auto u_sig = [](double t) { return scalar(0.3 * std::sin(2.0 * t)); };
  auto y_sig = [](double t) { return scalar(0.4 * std::cos(t)); };

  const double dt = 1e-3;
  const int steps = 600;
  std::vector<VectorXd> traj;
  traj.reserve(steps + 1);
  VectorXd state(6);
  state << 0.4, 0.0, 0.0, 0.4, 0.0, 0.0;
  traj.push_back(state);
  for (int i = 0; i < steps; ++i) {
    double t = i * dt;
    auto f = [&](double tt, const VectorXd& s) { return cas.flow(tt, y_sig(tt), u_sig(tt), s).state_dot; };
    VectorXd k1 = f(t, state);
    VectorXd k2 = f(t + 0.5 * dt, state + 0.5 * dt * k1);
    VectorXd k3 = f(t + 0.5 * dt, state + 0.5 * dt * k2);
    VectorXd k4 = f(t + dt, state + dt * k3);
    state += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    traj.push_back(state);
  }

  const int mid = 300;  // t = 0.3
  double t = mid * dt;
  auto z = cas.surrogates(t, y_sig(t), traj[mid]);

  auto z_at = [&](int idx) { return traj[idx](3); };  // last stage, first state
  auto fd_err = [&](int span) {
    double h = span * dt;
    double fd = (z_at(mid + span) - z_at(mid - span)) / (2.0 * h);
    return std::abs(fd - z[1](0));
  };
  double e5 = fd_err(5), e10 = fd_err(10);
  CHECK(e5 < 1e-4);
  if (e5 > 1e-10) {
    double ratio = e10 / e5;
    CHECK(ratio > 2.5);
    CHECK(ratio < 6.0);
  }

  double h = 10 * dt;
  double fd2 = (z_at(mid + 10) - 2.0 * z_at(mid) + z_at(mid - 10)) / (h * h);
  CHECK(std::abs(fd2 - z[2](0)) < 1e-2);
}

TEST_CASE("error-cascade controller") {
  // depth one with unit weight is exactly the classic proportional law
  fc::NonBackstepFc nb1;
  nb1.r = 1;
  nb1.m = 1;
  nb1.phis = {FunnelFunction::constant_reciprocal(1.0)};
  std::mt19937 rng(29);
  std::uniform_real_distribution<double> uni(-0.9, 0.9);
  for (int trial = 0; trial < 200; ++trial) {
    double e = uni(rng);
    double u = nb1.control(0.5, {scalar(e)})(0);
    CHECK(u == doctest::Approx(-fc::classic_gain(1.0, e) * e).epsilon(1e-15));
  }

  // depth two against the explicit resolved law
  fc::NonBackstepFc nb2;
  nb2.r = 2;
  nb2.m = 1;
  nb2.phis = {FunnelFunction::exp_decay_reciprocal(0.9, 1.0, 0.4),
              FunnelFunction::exp_decay_reciprocal(0.5, 0.8, 0.3)};
  for (int trial = 0; trial < 100; ++trial) {
    double t = 0.2 + 0.01 * trial;
    double e = 0.5 * uni(rng), ed = 0.5 * uni(rng);
    double w0 = nb2.phis[0].phi(t), w1 = nb2.phis[1].phi(t);
    if (w0 * std::abs(e) >= 0.9) continue;
    double k0 = 1.0 / (1.0 - w0 * w0 * e * e);
    double e1 = ed + k0 * e;
    if (w1 * std::abs(e1) >= 0.9) continue;
    double k1 = 1.0 / (1.0 - w1 * w1 * e1 * e1);
    auto st = nb2.stages(t, {scalar(e), scalar(ed)});
    CHECK(st.u(0) == doctest::Approx(-k1 * e1).epsilon(1e-13));
    CHECK(st.k[0] == doctest::Approx(k0).epsilon(1e-13));
    CHECK(st.e[1](0) == doctest::Approx(e1).epsilon(1e-13));
  }

  auto zero2 = nb2.stages(1.0, {scalar(0.0), scalar(0.0)});
  CHECK(zero2.k[0] == doctest::Approx(1.0));
  CHECK(zero2.k[1] == doctest::Approx(1.0));
  CHECK(zero2.u(0) == 0.0);

  // depth three needs the gain's own slope; resolve it by hand and compare
  fc::NonBackstepFc nb3;
  nb3.r = 3;
  nb3.m = 1;
  nb3.phis = {FunnelFunction::exp_decay_reciprocal(0.9, 1.0, 0.4),
              FunnelFunction::exp_decay_reciprocal(0.5, 0.8, 0.3),
              FunnelFunction::constant_reciprocal(2.0)};
  for (int trial = 0; trial < 100; ++trial) {
    double t = 0.3 + 0.01 * trial;
    double e = 0.4 * uni(rng), ed = 0.4 * uni(rng), edd = 0.4 * uni(rng);
    double w0 = nb3.phis[0].phi(t), w0d = nb3.phis[0].phi(t, 1);
    double w1 = nb3.phis[1].phi(t);
    double w2 = nb3.phis[2].phi(t);
    double k0 = 1.0 / (1.0 - w0 * w0 * e * e);
    double k0d = k0 * k0 * (2.0 * w0 * w0d * e * e + 2.0 * w0 * w0 * e * ed);
    double e1 = ed + k0 * e;
    double e1d = edd + k0d * e + k0 * ed;
    double k1 = 1.0 / (1.0 - w1 * w1 * e1 * e1);
    double e2 = e1d + k1 * e1;
    double k2 = 1.0 / (1.0 - w2 * w2 * e2 * e2);
    if (w0 * std::abs(e) >= 0.9 || w1 * std::abs(e1) >= 0.9 || w2 * std::abs(e2) >= 0.9)
      continue;
    auto st = nb3.stages(t, {scalar(e), scalar(ed), scalar(edd)});
    CHECK(st.u(0) == doctest::Approx(-k2 * e2).epsilon(1e-12));
    CHECK(st.e[2](0) == doctest::Approx(e2).epsilon(1e-12));
    CHECK(st.k[1] == doctest::Approx(k1).epsilon(1e-12));
  }

  // stage identification on breach
  try {
    nb2.stages(1.0, {scalar(0.0), scalar(50.0)});
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(err.code() == Errc::domain_violation);
    CHECK(std::string(err.what()).find("stage 1") != std::string::npos);
  }

  fc::NonBackstepFc ramped = nb2;
  ramped.phis[0] = FunnelFunction::linear_ramp(0.1, 1.0);
  CHECK(code_of([&] { ramped.stages(1.0, {scalar(0.0), scalar(0.0)}); }) ==
        Errc::invalid_argument);
  CHECK(code_of([&] { nb2.stages(1.0, {scalar(0.0)}); }) == Errc::invalid_argument);
}

TEST_CASE("proportional-derivative funnel law") {
  fc::PdFunnel pd;
  pd.phi0 = FunnelFunction::constant_reciprocal(1.0);
  pd.phi1 = FunnelFunction::constant_reciprocal(1.0);

  CHECK(pd.control(0.0, 0.0, 0.0) == 0.0);
  CHECK(pd.control(0.0, 0.5, 0.0) == doctest::Approx(-2.0).epsilon(1e-15));
  pd.modified = true;
  CHECK(pd.control(0.0, 0.5, 0.0) == doctest::Approx(-2.0).epsilon(1e-15));

  // the two variants split once the velocity error is nonzero
  pd.modified = false;
  double plain = pd.control(0.0, 0.4, 0.3);
  pd.modified = true;
  double mod = pd.control(0.0, 0.4, 0.3);
  double k0 = 1.0 / (1.0 - 0.4);
  double k1 = 1.0 / (1.0 - 0.3);
  CHECK(plain == doctest::Approx(-k0 * k0 * 0.4 - k1 * 0.3).epsilon(1e-14));
  CHECK(mod == doctest::Approx(-k0 * k0 * 0.4 - k0 * k1 * 0.3).epsilon(1e-14));
  CHECK(plain != mod);

  try {
    pd.control(0.0, 1.5, 0.0);
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(err.code() == Errc::domain_violation);
    CHECK(std::string(err.what()).find("position") != std::string::npos);
  }
  try {
    pd.control(0.0, 0.0, 1.5);
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(std::string(err.what()).find("velocity") != std::string::npos);
  }
}

TEST_CASE("prescribed performance law") {
  CHECK(fc::tf_log_ratio(0.0) == 0.0);
  CHECK(fc::tf_log_ratio(0.5) == doctest::Approx(1.0986122886681098).epsilon(1e-15));
  CHECK(fc::tf_log_ratio(0.5) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(code_of([] { fc::tf_log_ratio(1.0); }) == Errc::domain_violation);

  fc::Ppc one;
  one.r = 1;
  one.m = 1;
  one.k = {1.0};
  one.phi = {FunnelFunction::constant_reciprocal(1.0)};
  CHECK(one.control(0.0, {scalar(0.7)}, scalar(0.2))(0) ==
        doctest::Approx(-std::log(3.0)).epsilon(1e-15));

  one.k = {2.0};
  CHECK(one.control(0.0, {scalar(0.7)}, scalar(0.2))(0) ==
        doctest::Approx(-2.1972245773362196).epsilon(1e-15));

  // two-stage chain, resolved by hand
  fc::Ppc chain;
  chain.r = 2;
  chain.m = 1;
  chain.k = {1.5, 0.8};
  chain.phi = {FunnelFunction::constant_reciprocal(2.0),
               FunnelFunction::exp_decay_reciprocal(0.9, 1.0, 0.4)};
  double t = 0.7, x1 = 0.6, x2 = -0.3, ref = 0.2;
  double a1 = -1.5 * fc::tf_log_ratio(chain.phi[0].phi(t) * (x1 - ref));
  double expect = -0.8 * fc::tf_log_ratio(chain.phi[1].phi(t) * (x2 - a1));
  CHECK(chain.control(t, {scalar(x1), scalar(x2)}, scalar(ref))(0) ==
        doctest::Approx(expect).epsilon(1e-14));

  // aligned chain collapses to zero
  CHECK(chain.control(t, {scalar(ref), scalar(0.0)}, scalar(ref))(0) == 0.0);

  try {
    chain.control(t, {scalar(ref), scalar(100.0)}, scalar(ref));
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(err.code() == Errc::domain_violation);
    CHECK(std::string(err.what()).find("stage 2") != std::string::npos);
  }

  fc::Ppc bad = chain;
  bad.k[0] = 0.0;
  CHECK(code_of([&] { bad.control(t, {scalar(0.0), scalar(0.0)}, scalar(0.0)); }) ==
        Errc::invalid_argument);
}

TEST_CASE("saturation, saturated law, and feasibility") {
  CHECK(fc::saturate(scalar(2.0), 1.0)(0) == doctest::Approx(1.0));
  CHECK(fc::saturate(scalar(-2.0), 1.0)(0) == doctest::Approx(-1.0));
  VectorXd v(2);
  v << 3.0, 4.0;
  VectorXd cl = fc::saturate(v, 1.0);
  CHECK(cl(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(cl(1) == doctest::Approx(0.8).epsilon(1e-15));

  std::mt19937 rng(31);
  std::uniform_real_distribution<double> uni(-4.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd w(3);
    w << uni(rng), uni(rng), uni(rng);
    VectorXd s = fc::saturate(w, 1.5);
    CHECK(s.norm() <= 1.5 + 1e-12);
    CHECK((fc::saturate(s, 1.5) - s).norm() < 1e-14);         // idempotent
    if (w.norm() <= 1.5) CHECK((s - w).norm() == 0.0);        // identity inside
    if (w.norm() > 1e-9) CHECK(s.dot(w) >= 0.0);              // direction kept
    CHECK(std::abs(s(0) * w(1) - s(1) * w(0)) < 1e-12);       // parallel
  }

  // unconstrained inside the ball, clamped outside
  FunnelFunction phi = FunnelFunction::constant_reciprocal(1.0);
  CHECK(fc::saturated_fc(phi, 1.0, 0.0, scalar(0.5))(0) ==
        doctest::Approx(-2.0 / 3.0).epsilon(1e-15));
  CHECK(fc::saturated_fc(phi, 0.5, 0.0, scalar(0.5))(0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(code_of([&] { fc::saturated_fc(phi, 1.0, 0.0, scalar(1.0)); }) ==
        Errc::domain_violation);

  auto trivial = fc::feasibility_check(0.0, 1.0, 0.1, 2.0, 0.0, 0.0, 0.0);
  CHECK(trivial.feasible);
  CHECK(trivial.rhs == 0.0);

  auto tight = fc::feasibility_check(1.0, 0.5, 2.0, 0.5, 0.1, 0.3, 0.2);
  CHECK(tight.lhs == doctest::Approx(1.0));
  CHECK(tight.rhs == doctest::Approx(1.1));
  CHECK_FALSE(tight.feasible);

  CHECK(code_of([] { fc::feasibility_check(1.0, -0.5, 1.0, 0.0, 0.0, 0.0, 0.0); }) ==
        Errc::invalid_argument);
}

TEST_CASE("input-constrained adaptation") {
  fc::Icfc law;
  law.u_hat = 1.0;
  law.alpha_d = 1.0;
  law.beta_d = 0.5;
  law.psi0 = 2.0;

  double psi = std::sqrt(1.0 / 3.0);  // places the gain exactly at 4 for e = 0.5
  auto res = law.step(0.0, scalar(0.5), psi);
  CHECK(res.k == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(res.u(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(res.kappa == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.psi_dot == doctest::Approx(-psi + 0.5 + psi * 2.0).epsilon(1e-9));

  auto origin = law.step(0.0, scalar(0.0), 1.0);
  CHECK(origin.u(0) == 0.0);
  CHECK(origin.kappa == 0.0);
  CHECK(origin.psi_dot == doctest::Approx(-1.0 + 0.5));

  // saturation inactive: the boundary relaxes toward beta/alpha
  auto slack = law.step(0.0, scalar(0.1), 2.0);
  CHECK(slack.kappa == 0.0);
  CHECK(slack.psi_dot == doctest::Approx(-2.0 + 0.5));

  std::mt19937 rng(37);
  std::uniform_real_distribution<double> uni(-0.9, 0.9);
  for (int trial = 0; trial < 300; ++trial) {
    VectorXd e(2);
    e << uni(rng), uni(rng);
    if (e.norm() >= 0.99) continue;
    CHECK(law.step(0.0, e, 1.0).u.norm() <= 1.0 + 1e-12);
  }

  CHECK(code_of([&] { law.step(0.0, scalar(1.0), 1.0); }) == Errc::domain_violation);
  fc::Icfc shallow = law;
  shallow.psi0 = 0.4;  // below beta/alpha
  CHECK(code_of([&] { shallow.validate(); }) == Errc::invalid_argument);
}

TEST_CASE("two-block constrained-output law") {
  fc::DaeFc law;
  law.params = basic_params(1);
  law.phi_II = FunnelFunction::constant_reciprocal(1.0);
  law.k_hat = 2.0;
  law.ell = 1;
  law.m = 2;

  auto zero = law.control(0.0, scalar(0.0), scalar(0.0));
  CHECK(zero.u_I(0) == 0.0);
  CHECK(zero.u_II(0) == 0.0);

  auto res = law.control(0.0, scalar(0.0), scalar(0.5));
  CHECK(res.u_II(0) == doctest::Approx(-4.0 / 3.0).epsilon(1e-15));

  // the differential block is exactly the static funnel law
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> uni(-0.4, 0.4);
  fc::DaeFc stacked;
  stacked.params = basic_params(2);
  stacked.params.phi = FunnelFunction::exp_decay_reciprocal(0.9, 1.0, 0.1);
  stacked.phi_II = FunnelFunction::exp_decay_reciprocal(0.75, 0.8, 0.25);
  stacked.k_hat = 1.5;
  stacked.ell = 1;
  stacked.m = 2;
  for (int trial = 0; trial < 100; ++trial) {
    double t = 0.1 + 0.02 * trial;
    VectorXd eI(2);
    eI << uni(rng), uni(rng);
    VectorXd eII = scalar(uni(rng));
    auto maybe = fc::rho_r(stacked.params.phi.phi(t) * eI, 2, 1, stacked.params.alpha);
    if (!maybe || stacked.phi_II.phi(t) * eII.norm() >= 0.98) continue;
    auto out = stacked.control(t, eI, eII);
    VectorXd direct = fc::fc_output(stacked.params, t, eI);
    CHECK((out.u_I - direct).norm() == doctest::Approx(0.0).epsilon(1e-14));
    double w = stacked.phi_II.phi(t) * eII(0);
    double expect = -1.5 * (1.0 / (1.0 - w * w)) * w;
    CHECK(out.u_II(0) == doctest::Approx(expect).epsilon(1e-13));
  }

  // breach identification names the block
  try {
    law.control(0.0, scalar(1.5), scalar(0.0));
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(err.code() == Errc::domain_violation);
    CHECK(std::string(err.what()).find("block I") != std::string::npos);
  }
  try {
    law.control(0.0, scalar(0.0), scalar(1.5));
    CHECK(false);
  } catch (const fc::Error& err) {
    CHECK(std::string(err.what()).find("block II") != std::string::npos);
  }

  // degenerate splits leave the matching input empty
  fc::DaeFc all_diff = law;
  all_diff.ell = 2;
  auto both = all_diff.control(0.0, Eigen::Vector2d(0.1, 0.1), VectorXd(0));
  CHECK(both.u_I.size() == 2);
  CHECK(both.u_II.size() == 0);

  fc::DaeFc all_alg = law;
  all_alg.ell = 0;
  auto alg = all_alg.control(0.0, VectorXd(0), Eigen::Vector2d(0.1, 0.1));
  CHECK(alg.u_I.size() == 0);
  CHECK(alg.u_II.size() == 2);

  fc::DaeFc bad = law;
  bad.k_hat = 0.0;
  CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_argument);
  bad = law;
  bad.ell = 3;
  CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_argument);
  bad = law;
  bad.phi_II = unbounded_weight();
  CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_argument);
}

TEST_SUITE_END();
