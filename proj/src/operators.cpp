#include "fc/operators.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <random>

#include "fc/lti.hpp"

namespace fc {

namespace {

double time_tol(double t) { return 1e-9 * std::max(1.0, std::abs(t)); }

// Gauss-Legendre abscissae/weights on [-1, 1], indexed by point count.
struct GaussRule {
  std::vector<double> x, w;
};

GaussRule gauss_rule(int points) {
  switch (points) {
    case 1:
      return {{0.0}, {2.0}};
    case 2:
      return {{-0.57735026918962573, 0.57735026918962573}, {1.0, 1.0}};
    case 3:
      return {{-0.77459666924148340, 0.0, 0.77459666924148340},
              {0.55555555555555558, 0.88888888888888884, 0.55555555555555558}};
    case 4:
      return {{-0.86113631159405258, -0.33998104358485626, 0.33998104358485626,
                0.86113631159405258},
               {0.34785484513745386, 0.65214515486254614, 0.65214515486254614,
                0.34785484513745386}};
    case 5:
      return {{-0.90617984593866399, -0.53846931010568309, 0.0, 0.53846931010568309,
                0.90617984593866399},
               {0.23692688505618909, 0.47862867049936647, 0.56888888888888889,
                0.47862867049936647, 0.23692688505618909}};
    default:
      fail(Errc::invalid_argument, "distributed_delay: quadrature order must be 1..5 points");
  }
}

double spectral_norm(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()(0);
}

}  // namespace

History::History(int dim, double t0, double memory,
                 std::function<Eigen::VectorXd(double)> prehistory)
    : dim_(dim), t0_(t0), memory_(memory), prehistory_(std::move(prehistory)) {
  require(dim > 0, Errc::invalid_argument, "History: dimension must be positive");
  require(memory >= 0.0, Errc::invalid_argument, "History: memory must be nonnegative");
  require(memory == 0.0 || static_cast<bool>(prehistory_), Errc::invalid_argument,
          "History: positive memory needs a prehistory function");
}

void History::push(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& dy) {
  require(y.size() == dim_ && dy.size() == dim_, Errc::invalid_argument,
          "History::push: sample dimension mismatch");
  require(times_.empty() ? t >= t0_ - time_tol(t0_) : t > times_.back(),
          Errc::invalid_argument, "History::push: times must increase");
  times_.push_back(t);
  values_.push_back(y);
  slopes_.push_back(dy);
}

Eigen::VectorXd History::eval(double t, double slack) const {
  const double tol = time_tol(t);
  if (t < t0_ - tol) {
    require(t >= t0_ - memory_ - tol, Errc::insufficient_history,
            "History: query precedes the recorded memory window");
    require(static_cast<bool>(prehistory_), Errc::insufficient_history,
            "History: query precedes the first sample and no prehistory was given");
    Eigen::VectorXd v = prehistory_(t);
    require(v.size() == dim_, Errc::invalid_argument,
            "History: prehistory dimension mismatch");
    return v;
  }
  require(!times_.empty(), Errc::insufficient_history, "History: no samples recorded");
  require(t <= times_.back() + slack + tol, Errc::insufficient_history,
          "History: query exceeds the recorded trajectory");

  if (times_.size() == 1)  // first-step extrapolation from the initial sample
    return values_[0] + (t - times_[0]) * slopes_[0];

  // bracketing segment; queries past the last knot reuse the final cubic
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t hi = std::min<std::size_t>(
      std::max<std::ptrdiff_t>(it - times_.begin(), 1), times_.size() - 1);
  std::size_t lo = hi - 1;

  const double dt = times_[hi] - times_[lo];
  const double s = (t - times_[lo]) / dt;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * values_[lo] + (h10 * dt) * slopes_[lo] + h01 * values_[hi] +
         (h11 * dt) * slopes_[hi];
}

CausalOperator CausalOperator::point_delay(std::vector<PointDelayTerm> terms, int input_dim,
                                           int output_dim) {
  require(!terms.empty(), Errc::invalid_argument, "point_delay: needs at least one term");
  require(input_dim > 0 && output_dim > 0, Errc::invalid_argument,
          "point_delay: dimensions must be positive");
  CausalOperator op;
  op.kind_ = OperatorKind::PointDelay;
  op.input_dim_ = input_dim;
  op.output_dim_ = output_dim;
  for (const auto& term : terms) {
    require(term.h >= 0.0, Errc::invalid_argument, "point_delay: lags must be nonnegative");
    require(static_cast<bool>(term.psi), Errc::invalid_argument,
            "point_delay: kernel must be set");
    op.memory_ = std::max(op.memory_, term.h);
  }
  op.terms_ = std::move(terms);
  return op;
}

CausalOperator CausalOperator::distributed_delay(DelayKernel psi0, double h0, int quad_points,
                                                 int input_dim, int output_dim, int panels) {
  require(static_cast<bool>(psi0), Errc::invalid_argument,
          "distributed_delay: kernel must be set");
  require(h0 > 0.0, Errc::invalid_argument, "distributed_delay: lag must be positive");
  require(panels >= 1, Errc::invalid_argument, "distributed_delay: need at least one panel");
  require(input_dim > 0 && output_dim > 0, Errc::invalid_argument,
          "distributed_delay: dimensions must be positive");
  gauss_rule(quad_points);  // validates the order
  CausalOperator op;
  op.kind_ = OperatorKind::DistributedDelay;
  op.input_dim_ = input_dim;
  op.output_dim_ = output_dim;
  op.psi0_ = std::move(psi0);
  op.h0_ = h0;
  op.memory_ = h0;
  op.quad_points_ = quad_points;
  op.panels_ = panels;
  return op;
}

CausalOperator CausalOperator::internal_dynamics(const Eigen::MatrixXd& Q,
                                                 const Eigen::MatrixXd& P,
                                                 const Eigen::MatrixXd& S,
                                                 const Eigen::VectorXd& eta0) {
  const auto n_eta = Q.rows();
  require(n_eta > 0 && Q.cols() == n_eta, Errc::invalid_argument,
          "internal_dynamics: Q must be square and nonempty");
  require(P.rows() == n_eta && P.cols() > 0, Errc::invalid_argument,
          "internal_dynamics: P must have as many rows as Q");
  require(S.cols() == n_eta && S.rows() > 0, Errc::invalid_argument,
          "internal_dynamics: S must have as many columns as Q");
  require(eta0.size() == n_eta, Errc::invalid_argument,
          "internal_dynamics: initial state size mismatch");
  CausalOperator op;
  op.kind_ = OperatorKind::InternalDynamicsLTI;
  op.input_dim_ = static_cast<int>(P.cols());
  op.output_dim_ = static_cast<int>(S.rows());
  op.Q_ = Q;
  op.P_ = P;
  op.S_ = S;
  op.eta0_ = eta0;
  return op;
}

CausalOperator CausalOperator::relay(double threshold_on, double threshold_off) {
  require(threshold_off < threshold_on, Errc::invalid_argument,
          "relay: switch-off threshold must lie below switch-on");
  CausalOperator op;
  op.kind_ = OperatorKind::Relay;
  op.input_dim_ = 1;
  op.output_dim_ = 1;
  op.thr_on_ = threshold_on;
  op.thr_off_ = threshold_off;
  return op;
}

CausalOperator CausalOperator::composite(std::vector<CausalOperator> parts) {
  require(!parts.empty(), Errc::invalid_argument, "composite: needs at least one part");
  CausalOperator op;
  op.kind_ = OperatorKind::Composite;
  op.input_dim_ = parts.front().input_dim();
  op.output_dim_ = parts.front().output_dim();
  for (const auto& part : parts) {
    require(part.input_dim() == op.input_dim_ && part.output_dim() == op.output_dim_,
            Errc::invalid_argument, "composite: parts must share input/output dimensions");
    op.memory_ = std::max(op.memory_, part.memory());
  }
  op.parts_ = std::move(parts);
  return op;
}

int CausalOperator::state_dim() const {
  switch (kind_) {
    case OperatorKind::InternalDynamicsLTI:
      return static_cast<int>(Q_.rows());
    case OperatorKind::Composite: {
      int total = 0;
      for (const auto& part : parts_) total += part.state_dim();
      return total;
    }
    default:
      return 0;
  }
}

Eigen::VectorXd CausalOperator::initial_state() const {
  if (kind_ == OperatorKind::InternalDynamicsLTI) return eta0_;
  if (kind_ == OperatorKind::Composite) {
    Eigen::VectorXd eta(state_dim());
    int off = 0;
    for (const auto& part : parts_) {
      const int nd = part.state_dim();
      eta.segment(off, nd) = part.initial_state();
      off += nd;
    }
    return eta;
  }
  return Eigen::VectorXd::Zero(0);
}

Eigen::VectorXd CausalOperator::state_derivative(const Eigen::VectorXd& eta,
                                                 const Eigen::VectorXd& y) const {
  require(y.size() == input_dim_, Errc::invalid_argument,
          "state_derivative: input dimension mismatch");
  require(eta.size() == state_dim(), Errc::invalid_argument,
          "state_derivative: state dimension mismatch");
  if (kind_ == OperatorKind::InternalDynamicsLTI) return Q_ * eta + P_ * y;
  if (kind_ == OperatorKind::Composite) {
    Eigen::VectorXd deta(eta.size());
    int off = 0;
    for (const auto& part : parts_) {
      const int nd = part.state_dim();
      if (nd > 0) deta.segment(off, nd) = part.state_derivative(eta.segment(off, nd), y);
      off += nd;
    }
    return deta;
  }
  return Eigen::VectorXd::Zero(0);
}

Eigen::VectorXd CausalOperator::evaluate(double t, const History& input,
                                         const Eigen::VectorXd& eta, double slack) const {
  switch (kind_) {
    case OperatorKind::PointDelay: {
      Eigen::VectorXd out = Eigen::VectorXd::Zero(output_dim_);
      for (const auto& term : terms_) {
        Eigen::VectorXd v = term.psi(t, input.eval(t - term.h, slack));
        require(v.size() == output_dim_, Errc::invalid_argument,
                "point_delay: kernel output dimension mismatch");
        out += v;
      }
      return out;
    }
    case OperatorKind::DistributedDelay: {
      const GaussRule rule = gauss_rule(quad_points_);
      const double panel_width = h0_ / panels_;
      Eigen::VectorXd out = Eigen::VectorXd::Zero(output_dim_);
      for (int k = 0; k < panels_; ++k) {
        const double a = -h0_ + k * panel_width;
        const double mid = a + 0.5 * panel_width;
        const double half = 0.5 * panel_width;
        for (std::size_t j = 0; j < rule.x.size(); ++j) {
          const double s = mid + half * rule.x[j];
          Eigen::VectorXd v = psi0_(s, input.eval(t + s, slack));
          require(v.size() == output_dim_, Errc::invalid_argument,
                  "distributed_delay: kernel output dimension mismatch");
          out += (half * rule.w[j]) * v;
        }
      }
      return out;
    }
    case OperatorKind::InternalDynamicsLTI:
      require(eta.size() == Q_.rows(), Errc::invalid_argument,
              "evaluate: internal state size mismatch");
      return S_ * eta;
    case OperatorKind::Composite: {
      Eigen::VectorXd out = Eigen::VectorXd::Zero(output_dim_);
      int off = 0;
      for (const auto& part : parts_) {
        const int nd = part.state_dim();
        out += part.evaluate(t, input, eta.segment(off, nd), slack);
        off += nd;
      }
      return out;
    }
    case OperatorKind::Relay:
      fail(Errc::invalid_argument, "relay realization is a stub and cannot be evaluated");
  }
  fail(Errc::invalid_argument, "evaluate: unknown realization");
}

namespace {

// fixed-step classical Runge-Kutta sweep of the operator state over
// [input.start(), t_end]; `visit` sees every accepted node
void sweep_state(const CausalOperator& op, const History& input, double t_end,
                 const std::function<void(double, const Eigen::VectorXd&)>& visit) {
  const double t0 = input.start();
  require(t_end >= t0 - time_tol(t0), Errc::invalid_argument,
          "apply: query precedes the start of the record");
  Eigen::VectorXd eta = op.initial_state();
  visit(t0, eta);
  if (t_end <= t0) return;
  const int steps = std::max(16, static_cast<int>(std::ceil((t_end - t0) / 0.002)));
  const double dt = (t_end - t0) / steps;
  auto f = [&](double t, const Eigen::VectorXd& e) {
    return op.state_derivative(e, input.eval(t));
  };
  double t = t0;
  for (int i = 0; i < steps; ++i) {
    const Eigen::VectorXd k1 = f(t, eta);
    const Eigen::VectorXd k2 = f(t + 0.5 * dt, eta + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = f(t + 0.5 * dt, eta + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = f(t + dt, eta + dt * k3);
    eta += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t = t0 + (i + 1) * dt;
    visit(t, eta);
  }
}

}  // namespace

Eigen::VectorXd CausalOperator::apply(const History& input, double t) const {
  if (state_dim() == 0) return evaluate(t, input, Eigen::VectorXd());
  Eigen::VectorXd eta_t = initial_state();
  sweep_state(*this, input, t, [&](double, const Eigen::VectorXd& eta) { eta_t = eta; });
  return evaluate(t, input, eta_t);
}

namespace {

// integral of ||e^{Q tau}||_2 over [0, infinity), truncated once the
// propagator has decayed to rounding level
double decay_integral(const Eigen::MatrixXd& Q, double abscissa) {
  const double T = std::clamp(40.0 / std::abs(abscissa), 1.0, 200.0);
  const int steps = 4000;
  const double dt = T / steps;
  const Eigen::MatrixXd step = (Q * dt).exp();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(Q.rows(), Q.cols());
  double integral = 0.0;
  double prev = spectral_norm(acc);
  for (int i = 1; i <= steps; ++i) {
    acc = acc * step;
    const double cur = spectral_norm(acc);
    integral += 0.5 * dt * (prev + cur);
    prev = cur;
  }
  return integral;
}

void collect_internal_parts(const CausalOperator& op, std::vector<const CausalOperator*>& out) {
  if (op.kind() == OperatorKind::InternalDynamicsLTI) out.push_back(&op);
  if (op.kind() == OperatorKind::Composite)
    for (const auto& part : op.parts()) collect_internal_parts(part, out);
}

}  // namespace

BiboReport bibo_probe(const CausalOperator& op, double c1, int trials, double horizon,
                      unsigned long long seed) {
  require(c1 > 0.0, Errc::invalid_argument, "bibo_probe: input bound must be positive");
  require(trials >= 1, Errc::invalid_argument, "bibo_probe: need at least one trial");
  require(horizon > 0.0, Errc::invalid_argument, "bibo_probe: horizon must be positive");

  BiboReport report;

  std::vector<const CausalOperator*> internal_parts;
  collect_internal_parts(op, internal_parts);
  for (const auto* part : internal_parts) {
    const double abscissa = Eigen::EigenSolver<Eigen::MatrixXd>(part->Q())
                                .eigenvalues().real().maxCoeff();
    if (abscissa >= 0.0) {
      report.unbounded_warning = true;
    } else if (op.kind() == OperatorKind::InternalDynamicsLTI) {
      report.analytic_bound =
          spectral_norm(part->S()) * spectral_norm(part->P()) * c1 *
          decay_integral(part->Q(), abscissa);
    }
  }

  const int n = op.input_dim();
  const double t_lo = -op.memory();
  constexpr int kModes = 6;

  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<unsigned long long>(trial));
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    std::uniform_real_distribution<double> freq(0.1, 8.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);

    Eigen::MatrixXd A(n, kModes), W(n, kModes), F(n, kModes);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kModes; ++j) {
        A(i, j) = amp(rng);
        W(i, j) = freq(rng);
        F(i, j) = phase(rng);
      }
    auto signal = [&](double t) {
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < kModes; ++j) s += A(i, j) * std::sin(W(i, j) * t + F(i, j));
        y(i) = s;
      }
      return y;
    };
    auto signal_dot = [&](double t) {
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < kModes; ++j)
          s += A(i, j) * W(i, j) * std::cos(W(i, j) * t + F(i, j));
        y(i) = s;
      }
      return y;
    };

    const int grid = 2048;
    const double dt = (horizon - t_lo) / grid;
    double sup_in = 0.0;
    for (int i = 0; i <= grid; ++i) sup_in = std::max(sup_in, signal(t_lo + i * dt).norm());
    const double scale = sup_in > 0.0 ? c1 / sup_in : 0.0;

    History record(n, t_lo);
    for (int i = 0; i <= grid; ++i) {
      const double t = t_lo + i * dt;
      record.push(t, scale * signal(t), scale * signal_dot(t));
    }

    double sup_out = 0.0;
    if (op.state_dim() == 0) {
      const int out_grid = 1024;
      for (int i = 0; i <= out_grid; ++i) {
        const double t = i * (horizon / out_grid);
        sup_out = std::max(sup_out, op.evaluate(t, record, Eigen::VectorXd()).norm());
      }
    } else {
      sweep_state(op, record, horizon, [&](double t, const Eigen::VectorXd& eta) {
        if (t >= 0.0) sup_out = std::max(sup_out, op.evaluate(t, record, eta).norm());
      });
    }
    report.c2_estimate = std::max(report.c2_estimate, sup_out);
  }
  return report;
}

bool np1_linear_check(const Eigen::MatrixXd& L1, const Eigen::MatrixXd& L2,
                      const Eigen::MatrixXd& Gamma) {
  require(Gamma.rows() == Gamma.cols() && Gamma.rows() > 0, Errc::invalid_argument,
          "np1_linear_check: control slope must be square");
  require(L1.rows() == Gamma.rows() && L2.rows() == Gamma.rows(), Errc::invalid_argument,
          "np1_linear_check: row counts must agree across the affine blocks");
  return sign_definite(Gamma).definite;
}

void Nonlinearity::validate(unsigned long long seed) const {
  require(static_cast<bool>(eval), Errc::invalid_argument, "Nonlinearity: eval must be set");
  require(disturbance_dim >= 0 && operator_dim >= 0 && input_dim > 0, Errc::invalid_argument,
          "Nonlinearity: bad dimensions");
  if (!affine_gamma) return;
  require(affine_gamma->rows() == input_dim && affine_gamma->cols() == input_dim,
          Errc::invalid_argument, "Nonlinearity: affine slope must be m-by-m");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto draw = [&](int sz) {
    Eigen::VectorXd v(sz);
    for (int i = 0; i < sz; ++i) v(i) = dist(rng);
    return v;
  };
  for (int k = 0; k < 8; ++k) {
    const Eigen::VectorXd d = draw(disturbance_dim);
    const Eigen::VectorXd z = draw(operator_dim);
    const Eigen::VectorXd u = draw(input_dim);
    const Eigen::VectorXd lhs = eval(d, z, u) - eval(d, z, Eigen::VectorXd::Zero(input_dim));
    const Eigen::VectorXd rhs = (*affine_gamma) * u;
    require((lhs - rhs).norm() <= 1e-9 * std::max(1.0, rhs.norm()), Errc::invalid_argument,
            "Nonlinearity: declared affine slope does not match eval");
  }
}

InputNonlinearity InputNonlinearity::linear(double a, double b) {
  InputNonlinearity f;
  f.kind = Kind::Linear;
  f.a = a;
  f.b = b;
  f.surjective_unbounded = a != 0.0;
  return f;
}

InputNonlinearity InputNonlinearity::signed_square(double a) {
  InputNonlinearity f;
  f.kind = Kind::SignedSquare;
  f.a = a;
  f.surjective_unbounded = a != 0.0;
  return f;
}

InputNonlinearity InputNonlinearity::dead_zone(double b_l, double b_r,
                                               std::function<double(double)> D_l,
                                               std::function<double(double)> D_r) {
  require(b_l < b_r, Errc::invalid_argument, "dead_zone: band must have positive width");
  InputNonlinearity f;
  f.kind = Kind::DeadZone;
  f.b_l = b_l;
  f.b_r = b_r;
  f.D_l = D_l ? std::move(D_l) : [b_l](double v) { return v - b_l; };
  f.D_r = D_r ? std::move(D_r) : [b_r](double v) { return v - b_r; };
  require(std::abs(f.D_l(b_l)) <= 1e-12 && std::abs(f.D_r(b_r)) <= 1e-12,
          Errc::invalid_argument, "dead_zone: branches must vanish at the band edges");
  f.surjective_unbounded = true;
  return f;
}

InputNonlinearity InputNonlinearity::saturating(double level) {
  require(level > 0.0, Errc::invalid_argument, "saturating: level must be positive");
  InputNonlinearity f;
  f.kind = Kind::Saturating;
  f.a = level;
  f.surjective_unbounded = false;
  return f;
}

double InputNonlinearity::eval(double v) const {
  switch (kind) {
    case Kind::Linear:
      return a * v + b;
    case Kind::SignedSquare:
      return a * v * std::abs(v);
    case Kind::DeadZone:
      return deadzone_eval(*this, v);
    case Kind::Saturating:
      return a * std::tanh(v);
  }
  fail(Errc::invalid_argument, "InputNonlinearity: unknown kind");
}

double deadzone_eval(const InputNonlinearity& dz, double v) {
  require(dz.kind == InputNonlinearity::Kind::DeadZone, Errc::invalid_argument,
          "deadzone_eval: nonlinearity is not a dead zone");
  if (v >= dz.b_r) return dz.D_r ? dz.D_r(v) : v - dz.b_r;
  if (v <= dz.b_l) return dz.D_l ? dz.D_l(v) : v - dz.b_l;
  return 0.0;
}

}  // namespace fc
