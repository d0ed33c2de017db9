#include "fc/operators.hpp"

#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

#include "fc/errors.hpp"
#include "helpers.hpp"

using fc::CausalOperator;
using fc::Errc;
using fc::History;
using fc::InputNonlinearity;
using fc::test::code_of;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd scalar(double v) { return VectorXd::Constant(1, v); }

History constant_record(double value, double t_lo, double t_hi, double dt = 0.1) {
  History rec(1, t_lo);
  for (double t = t_lo; t <= t_hi + 1e-12; t += dt)
    rec.push(t, scalar(value), scalar(0.0));
  return rec;
}

fc::DelayKernel identity_kernel() {
  return [](double, const VectorXd& xi) { return xi; };
}

}  // namespace

TEST_SUITE("operators") {

TEST_CASE("history interpolates cubics exactly and guards its coverage") {
  auto y = [](double t) { return t * t * t - 2.0 * t + 1.0; };
  auto dy = [](double t) { return 3.0 * t * t - 2.0; };
  History rec(1, 0.0);
  for (double t = 0.0; t <= 2.0 + 1e-12; t += 0.5)
    rec.push(t, scalar(y(t)), scalar(dy(t)));

  for (double t : {0.1, 0.62, 1.0, 1.37, 1.9, 2.0})
    CHECK(rec.eval(t)(0) == doctest::Approx(y(t)).epsilon(1e-13));

  CHECK(code_of([&] { rec.eval(2.5); }) == Errc::insufficient_history);
  CHECK(code_of([&] { rec.eval(-0.5); }) == Errc::insufficient_history);
  // slack admits short extrapolation past the last knot, reusing the last cubic
  CHECK(rec.eval(2.1, 0.2)(0) == doctest::Approx(y(2.1)).epsilon(1e-12));
  CHECK(code_of([&] { rec.eval(2.5, 0.2); }) == Errc::insufficient_history);

  History with_pre(1, 0.0, 1.0, [](double t) { return scalar(std::sin(t)); });
  with_pre.push(0.0, scalar(0.0), scalar(1.0));
  CHECK(with_pre.eval(-0.3)(0) == doctest::Approx(std::sin(-0.3)));
  CHECK(code_of([&] { with_pre.eval(-1.5); }) == Errc::insufficient_history);
  CHECK(code_of([&] { with_pre.push(-0.1, scalar(0.0), scalar(0.0)); }) ==
        Errc::invalid_argument);

  // a single sample extrapolates linearly from its slope
  History one(1, 0.0);
  one.push(0.0, scalar(2.0), scalar(3.0));
  CHECK(one.eval(0.05, 0.1)(0) == doctest::Approx(2.15));
  CHECK(code_of([&] { History bad(1, 0.0, 0.5); }) == Errc::invalid_argument);
}

TEST_CASE("point delay of a constant input reproduces the constant") {
  auto op = CausalOperator::point_delay({{1.0, identity_kernel()}}, 1, 1);
  CHECK(op.memory() == doctest::Approx(1.0));
  CHECK(op.state_dim() == 0);
  History rec = constant_record(1.0, -1.0, 4.0);
  for (double t : {0.0, 0.7, 2.0, 4.0}) CHECK(op.apply(rec, t)(0) == doctest::Approx(1.0));

  // two lags sum; memory is the largest lag
  auto two = CausalOperator::point_delay(
      {{0.5, [](double, const VectorXd& xi) { return VectorXd(2.0 * xi); }},
       {1.0, identity_kernel()}},
      1, 1);
  CHECK(two.memory() == doctest::Approx(1.0));
  CHECK(two.apply(rec, 2.0)(0) == doctest::Approx(3.0));

  // querying earlier than the recorded window is refused
  History thin = constant_record(1.0, -0.25, 2.0);
  CHECK(code_of([&] { op.apply(thin, 0.0); }) == Errc::insufficient_history);
}

TEST_CASE("internal dynamics reproduces the first-order step response") {
  auto op = CausalOperator::internal_dynamics(MatrixXd::Constant(1, 1, -1.0),
                                              MatrixXd::Constant(1, 1, 1.0),
                                              MatrixXd::Constant(1, 1, 1.0), scalar(0.0));
  CHECK(op.memory() == doctest::Approx(0.0));
  CHECK(op.state_dim() == 1);
  CHECK(op.initial_state()(0) == doctest::Approx(0.0));
  CHECK(op.state_derivative(scalar(0.5), scalar(1.0))(0) == doctest::Approx(0.5));

  History rec = constant_record(1.0, 0.0, 5.0);
  CHECK(op.apply(rec, 1.0)(0) == doctest::Approx(0.63212055882855767).epsilon(1e-9));
  CHECK(op.apply(rec, 2.0)(0) == doctest::Approx(1.0 - std::exp(-2.0)).epsilon(1e-9));
  CHECK(op.apply(rec, 0.0)(0) == doctest::Approx(0.0));
}

TEST_CASE("distributed delay integrates the kernel over the memory window") {
  auto op = CausalOperator::distributed_delay(identity_kernel(), 1.0, 5, 1, 1);
  History rec = constant_record(2.0, -1.0, 3.0);
  for (double t : {0.0, 1.3, 3.0}) CHECK(op.apply(rec, t)(0) == doctest::Approx(2.0));

  // linear input: integral of y(t+s) = t+s over [-1, 0] is t - 1/2
  History ramp(1, -1.0);
  for (double t = -1.0; t <= 3.0 + 1e-12; t += 0.25)
    ramp.push(t, scalar(t), scalar(1.0));
  CHECK(op.apply(ramp, 2.0)(0) == doctest::Approx(1.5).epsilon(1e-13));

  CHECK(code_of([&] {
          CausalOperator::distributed_delay(identity_kernel(), 1.0, 9, 1, 1);
        }) == Errc::invalid_argument);
  CHECK(code_of([&] {
          CausalOperator::distributed_delay(identity_kernel(), -1.0, 5, 1, 1);
        }) == Errc::invalid_argument);
}

TEST_CASE("outputs depend only on the input up to the evaluation time") {
  // two records share the window [-1, 1.5] and then diverge
  auto make = [](double late_value) {
    History rec(1, -1.0);
    for (double t = -1.0; t <= 3.0 + 1e-12; t += 0.125) {
      const double v = t <= 1.5 ? std::sin(t) : late_value * (t - 1.5) + std::sin(1.5);
      const double dv = t <= 1.5 ? std::cos(t) : late_value;
      rec.push(t, scalar(v), scalar(dv));
    }
    return rec;
  };
  History a = make(5.0), b = make(-7.0);

  auto delay = CausalOperator::point_delay({{1.0, identity_kernel()}}, 1, 1);
  auto internal = CausalOperator::internal_dynamics(
      MatrixXd::Constant(1, 1, -1.0), MatrixXd::Constant(1, 1, 1.0),
      MatrixXd::Constant(1, 1, 1.0), scalar(0.0));
  for (double t : {0.0, 0.5, 1.0, 1.5}) {
    CHECK(delay.apply(a, t)(0) == doctest::Approx(delay.apply(b, t)(0)).epsilon(1e-14));
    CHECK(internal.apply(a, t)(0) ==
          doctest::Approx(internal.apply(b, t)(0)).epsilon(1e-12));
  }
  // and they genuinely differ later
  CHECK(std::abs(delay.apply(a, 3.0)(0) - delay.apply(b, 3.0)(0)) > 1.0);
}

TEST_CASE("input perturbations are amplified by a bounded, resolution-stable factor") {
  auto internal = CausalOperator::internal_dynamics(
      MatrixXd::Constant(1, 1, -1.0), MatrixXd::Constant(1, 1, 1.0),
      MatrixXd::Constant(1, 1, 1.0), scalar(0.0));
  auto gain_at = [&](double dt) {
    auto record = [&](double eps) {
      History rec(1, 0.0);
      for (double t = 0.0; t <= 4.0 + 1e-12; t += dt)
        rec.push(t, scalar(std::sin(t) + eps * std::sin(3.0 * t)),
                 scalar(std::cos(t) + 3.0 * eps * std::cos(3.0 * t)));
      return rec;
    };
    History base = record(0.0), bumped = record(0.01);
    double sup = 0.0;
    for (double t = 0.0; t <= 4.0 + 1e-9; t += 0.25)
      sup = std::max(sup, std::abs(internal.apply(bumped, t)(0) - internal.apply(base, t)(0)));
    return sup / 0.01;
  };
  const double coarse = gain_at(0.05), fine = gain_at(0.025);
  CHECK(std::isfinite(coarse));
  CHECK(coarse < 5.0);
  CHECK(coarse == doctest::Approx(fine).epsilon(1e-3));
}

TEST_CASE("internal dynamics agrees with the matrix-exponential convolution") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> dist(0.0, 0.5);
  MatrixXd Q(3, 3), P(3, 2), S(2, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Q(i, j) = dist(rng);
  Q -= 2.5 * MatrixXd::Identity(3, 3);
  REQUIRE(Eigen::EigenSolver<MatrixXd>(Q).eigenvalues().real().maxCoeff() < 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) P(i, j) = dist(rng);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) S(i, j) = dist(rng);

  auto u = [](double t) {
    VectorXd v(2);
    v << std::sin(1.3 * t) + 0.4 * std::cos(2.7 * t), std::cos(0.9 * t);
    return v;
  };
  auto du = [](double t) {
    VectorXd v(2);
    v << 1.3 * std::cos(1.3 * t) - 0.4 * 2.7 * std::sin(2.7 * t), -0.9 * std::sin(0.9 * t);
    return v;
  };
  History rec(2, 0.0);
  for (double t = 0.0; t <= 3.0 + 1e-12; t += 0.01) rec.push(t, u(t), du(t));

  auto op = CausalOperator::internal_dynamics(Q, P, S, Eigen::VectorXd::Zero(3));

  // Simpson quadrature of S int_0^t e^{Q(t-tau)} P u(tau) dtau
  const double t_end = 3.0;
  const int halves = 600;
  const double h = t_end / (2 * halves);
  VectorXd acc = VectorXd::Zero(3);
  for (int k = 0; k < halves; ++k) {
    const double t0 = 2 * k * h, t1 = (2 * k + 1) * h, t2 = (2 * k + 2) * h;
    acc += (h / 3.0) * ((Q * (t_end - t0)).exp() * P * u(t0) +
                        4.0 * (Q * (t_end - t1)).exp() * P * u(t1) +
                        (Q * (t_end - t2)).exp() * P * u(t2));
  }
  const VectorXd expected = S * acc;
  const VectorXd got = op.apply(rec, t_end);
  CHECK((got - expected).norm() <= 1e-6 * std::max(1.0, expected.norm()));
}

TEST_CASE("bounded-input probe reports sup estimates and the decay bound") {
  auto internal = CausalOperator::internal_dynamics(
      MatrixXd::Constant(1, 1, -1.0), MatrixXd::Constant(1, 1, 1.0),
      MatrixXd::Constant(1, 1, 1.0), scalar(0.0));
  auto report = fc::bibo_probe(internal, 1.0, 3, 10.0);
  REQUIRE(report.analytic_bound.has_value());
  CHECK(*report.analytic_bound == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(report.c2_estimate <= *report.analytic_bound * 1.02);
  CHECK(report.c2_estimate > 0.1);
  CHECK_FALSE(report.unbounded_warning);

  auto planar = CausalOperator::internal_dynamics(-2.0 * MatrixXd::Identity(2, 2),
                                                  MatrixXd::Identity(2, 2),
                                                  MatrixXd::Identity(2, 2),
                                                  Eigen::VectorXd::Zero(2));
  auto rep2 = fc::bibo_probe(planar, 3.0, 3, 8.0);
  REQUIRE(rep2.analytic_bound.has_value());
  CHECK(*rep2.analytic_bound == doctest::Approx(1.5).epsilon(1e-3));
  CHECK(rep2.c2_estimate <= 1.5 * 1.02);

  // non-normal block: integral of the propagator norm exceeds 1/|Re lambda|
  MatrixXd J(2, 2);
  J << -1.0, 1.0, 0.0, -1.0;
  auto jordan = CausalOperator::internal_dynamics(J, MatrixXd::Identity(2, 2),
                                                  MatrixXd::Identity(2, 2),
                                                  Eigen::VectorXd::Zero(2));
  auto rep3 = fc::bibo_probe(jordan, 1.0, 1, 4.0);
  REQUIRE(rep3.analytic_bound.has_value());
  CHECK(*rep3.analytic_bound == doctest::Approx(1.6840602394210893).epsilon(2e-3));

  auto delay = CausalOperator::point_delay({{1.0, identity_kernel()}}, 1, 1);
  auto rep4 = fc::bibo_probe(delay, 1.0, 4, 12.0);
  CHECK_FALSE(rep4.analytic_bound.has_value());
  CHECK(rep4.c2_estimate == doctest::Approx(1.0).epsilon(0.05));
  CHECK(rep4.c2_estimate <= 1.0 + 1e-9);

  auto unstable = CausalOperator::internal_dynamics(MatrixXd::Constant(1, 1, 0.1),
                                                    MatrixXd::Constant(1, 1, 1.0),
                                                    MatrixXd::Constant(1, 1, 1.0),
                                                    scalar(0.0));
  auto rep5 = fc::bibo_probe(unstable, 1.0, 1, 2.0);
  CHECK(rep5.unbounded_warning);
  CHECK_FALSE(rep5.analytic_bound.has_value());

  CHECK(code_of([&] { fc::bibo_probe(delay, 1.0, 0, 1.0); }) == Errc::invalid_argument);
}

TEST_CASE("affine control-direction check reduces to the symmetric part") {
  const MatrixXd L1 = MatrixXd::Zero(2, 1), L2 = MatrixXd::Zero(2, 3);
  CHECK(fc::np1_linear_check(L1, L2, MatrixXd::Identity(2, 2)));
  CHECK(fc::np1_linear_check(L1, L2, -2.0 * MatrixXd::Identity(2, 2)));

  MatrixXd skew(2, 2);
  skew << 0.0, 1.0, -1.0, 0.0;
  CHECK_FALSE(fc::np1_linear_check(L1, L2, skew));

  // symmetric part has eigenvalues {-0.5, 2.5}: indefinite
  MatrixXd mixed(2, 2);
  mixed << 1.0, 3.0, 0.0, 1.0;
  CHECK_FALSE(fc::np1_linear_check(L1, L2, mixed));

  CHECK(code_of([&] { fc::np1_linear_check(L1, L2, MatrixXd::Zero(3, 3)); }) ==
        Errc::invalid_argument);
}

TEST_CASE("dead zone and the other input channels behave as declared") {
  auto dz = InputNonlinearity::dead_zone(-1.0, 1.0);
  CHECK(fc::deadzone_eval(dz, 0.5) == doctest::Approx(0.0));
  CHECK(fc::deadzone_eval(dz, 2.0) == doctest::Approx(1.0));
  CHECK(fc::deadzone_eval(dz, -3.0) == doctest::Approx(-2.0));
  CHECK(fc::deadzone_eval(dz, 1.0) == doctest::Approx(0.0));
  CHECK(fc::deadzone_eval(dz, -1.0) == doctest::Approx(0.0));
  CHECK(dz.surjective_unbounded);

  // outside the band the default branches are shifted identities, so adding
  // the band edge back recovers the input
  for (double v : {1.5, 2.7, 10.0}) CHECK(dz.eval(v) + dz.b_r == doctest::Approx(v));
  for (double v : {-1.2, -4.0}) CHECK(dz.eval(v) + dz.b_l == doctest::Approx(v));

  auto custom = InputNonlinearity::dead_zone(
      -1.0, 1.0, [](double v) { return -(v + 1.0) * (v + 1.0); },
      [](double v) { return (v - 1.0) * (v - 1.0); });
  CHECK(fc::deadzone_eval(custom, 3.0) == doctest::Approx(4.0));
  CHECK(fc::deadzone_eval(custom, -2.0) == doctest::Approx(-1.0));
  CHECK(code_of([&] { InputNonlinearity::dead_zone(1.0, -1.0); }) == Errc::invalid_argument);
  CHECK(code_of([&] {
          InputNonlinearity::dead_zone(-1.0, 1.0, {}, [](double v) { return v; });
        }) == Errc::invalid_argument);

  auto lin = InputNonlinearity::linear(2.0, 0.5);
  CHECK(lin.eval(3.0) == doctest::Approx(6.5));
  CHECK(lin.surjective_unbounded);
  CHECK_FALSE(InputNonlinearity::linear(0.0).surjective_unbounded);

  auto sq = InputNonlinearity::signed_square(2.0);
  CHECK(sq.eval(-3.0) == doctest::Approx(-18.0));
  CHECK(sq.eval(3.0) == doctest::Approx(18.0));
  CHECK(sq.surjective_unbounded);

  auto sat = InputNonlinearity::saturating(2.0);
  CHECK_FALSE(sat.surjective_unbounded);
  CHECK(sat.eval(100.0) == doctest::Approx(2.0));
  CHECK(std::abs(sat.eval(-50.0)) <= 2.0);
}

TEST_CASE("relay is a declared stub and composites sum their parts") {
  auto relay = CausalOperator::relay(0.5, -0.5);
  CHECK(relay.kind() == fc::OperatorKind::Relay);
  CHECK(relay.relay_thresholds().first == doctest::Approx(0.5));
  History rec = constant_record(1.0, 0.0, 1.0);
  CHECK(code_of([&] { relay.apply(rec, 0.5); }) == Errc::invalid_argument);
  CHECK(code_of([&] { CausalOperator::relay(-0.5, 0.5); }) == Errc::invalid_argument);

  auto sum = CausalOperator::composite(
      {CausalOperator::point_delay({{1.0, identity_kernel()}}, 1, 1),
       CausalOperator::internal_dynamics(MatrixXd::Constant(1, 1, -1.0),
                                         MatrixXd::Constant(1, 1, 1.0),
                                         MatrixXd::Constant(1, 1, 1.0), scalar(0.0))});
  CHECK(sum.memory() == doctest::Approx(1.0));
  CHECK(sum.state_dim() == 1);
  // record starts at 0 (where the internal state is anchored); the delay
  // window [-1, 0] comes from the prehistory
  History wide(1, 0.0, 1.0, [](double) { return scalar(1.0); });
  for (double t = 0.0; t <= 4.0 + 1e-12; t += 0.1) wide.push(t, scalar(1.0), scalar(0.0));
  CHECK(sum.apply(wide, 2.0)(0) ==
        doctest::Approx(1.0 + (1.0 - std::exp(-2.0))).epsilon(1e-8));

  CHECK(code_of([&] {
          CausalOperator::composite(
              {CausalOperator::point_delay({{1.0, identity_kernel()}}, 1, 1),
               CausalOperator::point_delay({{1.0, identity_kernel()}}, 2, 2)});
        }) == Errc::invalid_argument);
}

TEST_CASE("declared affine slopes are spot-checked against eval") {
  MatrixXd gamma(2, 2);
  gamma << 2.0, 0.5, -0.5, 1.0;
  fc::Nonlinearity f;
  f.disturbance_dim = 1;
  f.operator_dim = 2;
  f.input_dim = 2;
  f.control_direction = fc::ControlDirection::Positive;
  f.affine_gamma = gamma;
  f.eval = [gamma](const VectorXd& d, const VectorXd& z, const VectorXd& u) {
    VectorXd base(2);
    base << std::sin(d(0)), z(0) + z(1);
    return VectorXd(base + gamma * u);
  };
  CHECK_NOTHROW(f.validate());

  fc::Nonlinearity wrong = f;
  wrong.affine_gamma = MatrixXd::Identity(2, 2);
  CHECK(code_of([&] { wrong.validate(); }) == Errc::invalid_argument);

  fc::Nonlinearity unset;
  unset.input_dim = 1;
  CHECK(code_of([&] { unset.validate(); }) == Errc::invalid_argument);
}

}  // TEST_SUITE
