#include "fc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <utility>

namespace fc {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Signal

Eigen::VectorXd Signal::eval(double t, int order) const {
  require(order >= 0 && order <= max_order, Errc::unsupported_derivative,
          "signal: derivative order " + std::to_string(order) + " beyond the supported " +
              std::to_string(max_order));
  require(std::isfinite(t), Errc::invalid_argument, "signal: time must be finite");
  require(static_cast<bool>(eval_fn), Errc::invalid_argument, "signal: empty evaluator");
  Eigen::VectorXd v = eval_fn(t, order);
  require(static_cast<int>(v.size()) == dim, Errc::invalid_argument,
          "signal: evaluator returned a wrong dimension");
  return v;
}

Signal Signal::zero(int dim) {
  require(dim >= 1, Errc::invalid_argument, "signal: dimension must be positive");
  Signal s;
  s.dim = dim;
  s.max_order = 1000;
  s.eval_fn = [dim](double, int) { return Eigen::VectorXd::Zero(dim).eval(); };
  return s;
}

Signal Signal::constant(const Eigen::VectorXd& value) {
  require(value.size() >= 1, Errc::invalid_argument, "signal: empty constant");
  Signal s;
  s.dim = static_cast<int>(value.size());
  s.max_order = 1000;
  s.eval_fn = [value](double, int order) {
    if (order == 0) return value;
    return Eigen::VectorXd::Zero(value.size()).eval();
  };
  return s;
}

Signal Signal::harmonic(const Eigen::VectorXd& amp, const Eigen::VectorXd& omega,
                        const Eigen::VectorXd& phase) {
  const int n = static_cast<int>(amp.size());
  require(n >= 1 && omega.size() == n && phase.size() == n, Errc::invalid_argument,
          "signal: harmonic parameter sizes disagree");
  Signal s;
  s.dim = n;
  s.max_order = 1000;
  s.eval_fn = [amp, omega, phase, n](double t, int order) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
      const double shift = phase(i) + 0.5 * kPi * order;
      v(i) = amp(i) * std::pow(omega(i), order) * std::sin(omega(i) * t + shift);
    }
    return v;
  };
  return s;
}

Signal Signal::rational_pow(double c0, double c1, double c2, double p) {
  Signal s;
  s.dim = 1;
  s.max_order = 2;
  s.eval_fn = [c0, c1, c2, p](double t, int order) {
    Eigen::VectorXd v(1);
    const double b = 1.0 + t;
    const double lin = c1 + c2 * t;
    switch (order) {
      case 0: v(0) = c0 + lin * std::pow(b, p); break;
      case 1: v(0) = c2 * std::pow(b, p) + lin * p * std::pow(b, p - 1.0); break;
      default:
        v(0) = 2.0 * c2 * p * std::pow(b, p - 1.0) + lin * p * (p - 1.0) * std::pow(b, p - 2.0);
        break;
    }
    return v;
  };
  return s;
}

Signal Signal::custom(int dim, int max_order, std::function<Eigen::VectorXd(double, int)> fn) {
  require(dim >= 1 && max_order >= 0 && fn, Errc::invalid_argument,
          "signal: malformed custom definition");
  Signal s;
  s.dim = dim;
  s.max_order = max_order;
  s.eval_fn = std::move(fn);
  return s;
}

// ---------------------------------------------------------------------------
// Plant factories

Plant Plant::from_lti(const LtiSystem& sys, const Eigen::VectorXd& x0) {
  sys.validate();
  require(x0.size() == sys.A.rows(), Errc::invalid_argument,
          "plant: initial state size disagrees with the system order");
  Plant p;
  p.state_dim = static_cast<int>(sys.A.rows());
  p.m = static_cast<int>(sys.B.cols());
  auto rd = relative_degree(sys);
  p.chain_len = rd ? rd->r : 1;
  p.x0 = x0;
  const Eigen::MatrixXd A = sys.A;
  const Eigen::MatrixXd B = sys.B;
  // y^(i) = C A^i x for i below the relative degree
  std::vector<Eigen::MatrixXd> obs;
  Eigen::MatrixXd row = sys.C;
  for (int i = 0; i < p.chain_len; ++i) {
    obs.push_back(row);
    row = row * A;
  }
  p.rhs = [A, B](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return (A * x + B * u).eval();
  };
  p.output_chain = [obs](double, const Eigen::VectorXd& x) {
    std::vector<Eigen::VectorXd> chain;
    chain.reserve(obs.size());
    for (const auto& Oi : obs) chain.push_back(Oi * x);
    return chain;
  };
  return p;
}

Plant Plant::scalar_linear(double a, double b, double c, const Signal& disturbance, double y0) {
  require(disturbance.dim == 1, Errc::invalid_argument,
          "plant: scalar loop needs a scalar disturbance");
  Plant p;
  p.state_dim = 1;
  p.m = 1;
  p.chain_len = 1;
  p.x0 = Eigen::VectorXd::Constant(1, y0);
  p.rhs = [a, b, c, disturbance](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(1);
    dx(0) = a * x(0) + b * u(0) + c * disturbance.eval(t)(0);
    return dx;
  };
  p.output_chain = [](double, const Eigen::VectorXd& x) {
    return std::vector<Eigen::VectorXd>{x};
  };
  return p;
}

Plant Plant::integrator_chain(int r, int m, double gain, const Eigen::VectorXd& x0) {
  require(r >= 1 && m >= 1, Errc::invalid_argument, "plant: chain needs r >= 1, m >= 1");
  require(x0.size() == static_cast<long>(r) * m, Errc::invalid_argument,
          "plant: chain initial state must have r*m entries");
  require(gain > 0.0, Errc::invalid_argument, "plant: chain gain must be positive");
  Plant p;
  p.state_dim = r * m;
  p.m = m;
  p.chain_len = r;
  p.x0 = x0;
  p.rhs = [r, m, gain](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(r * m);
    if (r > 1) dx.head((r - 1) * m) = x.tail((r - 1) * m);
    dx.tail(m) = gain * u;
    return dx;
  };
  p.output_chain = [r, m](double, const Eigen::VectorXd& x) {
    std::vector<Eigen::VectorXd> chain;
    chain.reserve(r);
    for (int i = 0; i < r; ++i) chain.push_back(x.segment(i * m, m));
    return chain;
  };
  return p;
}

Plant Plant::robot_arm(double m1, double m2, double l1, double l2, double gravity,
                       const Eigen::Vector4d& x0) {
  require(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0, Errc::invalid_argument,
          "plant: arm masses and lengths must be positive");
  Plant p;
  p.state_dim = 4;
  p.m = 2;
  p.chain_len = 2;
  p.x0 = x0;
  auto accel = [m1, m2, l1, l2, gravity](const Eigen::Vector2d& q, const Eigen::Vector2d& v,
                                         const Eigen::VectorXd& u) {
    const double c2 = std::cos(q(1));
    Eigen::Matrix2d M;
    M(0, 0) = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
    M(0, 1) = m2 * (l2 * l2 + l1 * l2 * c2);
    M(1, 0) = M(0, 1);
    M(1, 1) = m2 * l2 * l2;
    // Christoffel form of the velocity coupling for this inertia matrix
    const double h = -m2 * l1 * l2 * std::sin(q(1));
    Eigen::Matrix2d C;
    C(0, 0) = h * v(1);
    C(0, 1) = h * (v(0) + v(1));
    C(1, 0) = -h * v(0);
    C(1, 1) = 0.0;
    Eigen::Vector2d G;
    G(0) = gravity * (m1 * l1 * std::cos(q(0)) +
                      m2 * (l1 * std::cos(q(0)) + l2 * std::cos(q(0) + q(1))));
    G(1) = gravity * m2 * l2 * std::cos(q(0) + q(1));
    Eigen::LLT<Eigen::Matrix2d> llt(M);
    require(llt.info() == Eigen::Success, Errc::integration_failure,
            "plant: arm inertia matrix lost positive definiteness");
    return llt.solve((u - C * v - G).eval()).eval();
  };
  p.rhs = [accel](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::Vector2d q = x.head<2>(), v = x.tail<2>();
    Eigen::VectorXd dx(4);
    dx.head<2>() = v;
    dx.tail<2>() = accel(q, v, u);
    return dx;
  };
  p.output_chain = [](double, const Eigen::VectorXd& x) {
    return std::vector<Eigen::VectorXd>{x.head<2>(), x.tail<2>()};
  };
  return p;
}

// ---------------------------------------------------------------------------
// Controller adapters

namespace {

// error derivatives up to `upto`, falling back to raw output derivatives past
// the tracked ones
Eigen::VectorXd stacked_errors(const Signal& ref, double t,
                               const std::vector<Eigen::VectorXd>& chain, int depth,
                               int tracked) {
  require(static_cast<int>(chain.size()) >= depth, Errc::invalid_argument,
          "controller: output chain shorter than the law's depth");
  const int m = static_cast<int>(chain[0].size());
  Eigen::VectorXd out(depth * m);
  for (int i = 0; i < depth; ++i) {
    if (i < tracked)
      out.segment(i * m, m) = chain[i] - ref.eval(t, i);
    else
      out.segment(i * m, m) = chain[i];
  }
  return out;
}

// norms of the nested stack rho_1..rho_r at phi(t) * e_vec; throws at a guard
// hit exactly like the law itself would
std::vector<double> stack_margins(const DesignParams& params, double t,
                                  const Eigen::VectorXd& e_vec) {
  const int m = static_cast<int>(e_vec.size()) / params.r;
  const Eigen::VectorXd eta = params.phi.phi(t) * e_vec;
  Eigen::VectorXd rho = eta.head(m);
  std::vector<double> margins{rho.norm()};
  for (int k = 2; k <= params.r; ++k) {
    rho = eta.segment((k - 1) * m, m) + gamma(rho, params.alpha);
    margins.push_back(rho.norm());
  }
  require(margins.back() < kUnitGuard, Errc::domain_violation,
          "controller: scaled feedback stack reached the unit sphere");
  return margins;
}

}  // namespace

LoopController constant_controller(const Eigen::VectorXd& u0) {
  LoopController c;
  c.label = "constant";
  c.eval = [u0](double, const std::vector<Eigen::VectorXd>&, const Eigen::VectorXd&) {
    ControlEval ev;
    ev.u = u0;
    return ev;
  };
  return c;
}

LoopController static_fc_controller(const DesignParams& params, const Signal& reference) {
  params.validate();
  LoopController c;
  c.label = "funnel_static";
  c.eval = [params, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                               const Eigen::VectorXd&) {
    const Eigen::VectorXd e_vec = stacked_errors(reference, t, chain, params.r, params.r_hat);
    ControlEval ev;
    ev.margins = stack_margins(params, t, e_vec);
    ev.u = fc_output(params, t, e_vec);
    ev.gains = {params.alpha(ev.margins.front() * ev.margins.front()),
                params.alpha(ev.margins.back() * ev.margins.back())};
    ev.psi = {params.phi.psi(t)};
    return ev;
  };
  return c;
}

LoopController nonbackstep_controller(const NonBackstepFc& law, const Signal& reference) {
  law.validate();
  LoopController c;
  c.label = "funnel_cascade";
  c.eval = [law, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                            const Eigen::VectorXd&) {
    require(static_cast<int>(chain.size()) >= law.r, Errc::invalid_argument,
            "controller: output chain shorter than the law's depth");
    std::vector<Eigen::VectorXd> e_derivs(law.r);
    for (int i = 0; i < law.r; ++i) e_derivs[i] = chain[i] - reference.eval(t, i);
    auto st = law.stages(t, e_derivs);
    ControlEval ev;
    ev.u = st.u;
    ev.gains = st.k;
    for (int i = 0; i < law.r; ++i) {
      ev.margins.push_back(law.phis[i].phi(t) * st.e[i].norm());
      ev.psi.push_back(law.phis[i].psi(t));
    }
    return ev;
  };
  return c;
}

LoopController filter_controller(const FilterFc& law, const Eigen::VectorXd& xi0,
                                 const Signal& reference) {
  law.validate();
  const int nxi = (law.params.r - 1) * law.m;
  require(xi0.size() == nxi, Errc::invalid_argument,
          "controller: filter initial state must have (r-1)*m entries");
  LoopController c;
  c.label = "funnel_filter";
  c.state_dim = nxi;
  c.state0 = xi0;
  c.eval = [law, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                            const Eigen::VectorXd& xi) {
    const Eigen::VectorXd e = chain.at(0) - reference.eval(t);
    auto res = law.step(t, e, xi);
    ControlEval ev;
    ev.u = res.u;
    ev.state_dot = res.xi_dot;
    ev.gains = {res.k};
    ev.margins = {law.params.phi.phi(t) * e.norm()};
    ev.psi = {law.params.phi.psi(t)};
    return ev;
  };
  return c;
}

LoopController precomp_controller(const PrecompCascade& cascade, const DesignParams& surrogate,
                                  const Signal& reference) {
  cascade.validate();
  surrogate.validate();
  require(surrogate.r == cascade.r, Errc::invalid_argument,
          "controller: surrogate law depth must match the cascade order");
  LoopController c;
  c.label = "funnel_precomp";
  c.state_dim = cascade.state_dim();
  c.state0 = Eigen::VectorXd::Zero(cascade.state_dim());
  c.eval = [cascade, surrogate, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                                           const Eigen::VectorXd& state) {
    const Eigen::VectorXd& y = chain.at(0);
    const auto z_chain = cascade.surrogates(t, y, state);
    const Eigen::VectorXd e_vec =
        stacked_errors(reference, t, z_chain, surrogate.r, surrogate.r_hat);
    ControlEval ev;
    ev.margins = stack_margins(surrogate, t, e_vec);
    ev.u = fc_output(surrogate, t, e_vec);
    auto fl = cascade.flow(t, y, ev.u, state);
    ev.state_dot = fl.state_dot;
    std::vector<double> margins;
    for (std::size_t i = 0; i < fl.gains.size(); ++i) {
      // stage gain k = 1/(1 - margin^2) inverts to the stage funnel margin
      margins.push_back(std::sqrt(std::max(0.0, 1.0 - 1.0 / fl.gains[i])));
      ev.psi.push_back(cascade.stages[i].phi.psi(t));
    }
    margins.insert(margins.end(), ev.margins.begin(), ev.margins.end());
    ev.margins = std::move(margins);
    ev.gains = fl.gains;
    ev.gains.push_back(surrogate.alpha(ev.margins.back() * ev.margins.back()));
    ev.psi.push_back(surrogate.phi.psi(t));
    return ev;
  };
  return c;
}

LoopController high_gain_controller(double k0) {
  LoopController c;
  c.label = "high_gain";
  c.state_dim = 1;
  c.state0 = Eigen::VectorXd::Constant(1, k0);
  c.eval = [](double, const std::vector<Eigen::VectorXd>& chain, const Eigen::VectorXd& state) {
    auto gs = high_gain_step(state(0), chain.at(0));
    ControlEval ev;
    ev.u = gs.u;
    ev.state_dot = Eigen::VectorXd::Constant(1, gs.k_dot);
    ev.gains = {state(0)};
    return ev;
  };
  return c;
}

LoopController lambda_controller(double lambda, double k0, const Signal& reference) {
  require(lambda > 0.0, Errc::invalid_argument, "controller: tube radius must be positive");
  LoopController c;
  c.label = "lambda_tracker";
  c.state_dim = 1;
  c.state0 = Eigen::VectorXd::Constant(1, k0);
  c.eval = [lambda, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                               const Eigen::VectorXd& state) {
    const Eigen::VectorXd e = chain.at(0) - reference.eval(t);
    auto gs = lambda_step(state(0), e, lambda);
    ControlEval ev;
    ev.u = gs.u;
    ev.state_dot = Eigen::VectorXd::Constant(1, gs.k_dot);
    ev.gains = {state(0)};
    ev.psi = {lambda};
    return ev;
  };
  return c;
}

LoopController nussbaum_controller(double k0) {
  LoopController c;
  c.label = "nussbaum";
  c.state_dim = 1;
  c.state0 = Eigen::VectorXd::Constant(1, k0);
  c.eval = [](double, const std::vector<Eigen::VectorXd>& chain, const Eigen::VectorXd& state) {
    auto gs = nussbaum_step(state(0), chain.at(0));
    ControlEval ev;
    ev.u = gs.u;
    ev.state_dot = Eigen::VectorXd::Constant(1, gs.k_dot);
    ev.gains = {state(0), nussbaum_N(state(0))};
    return ev;
  };
  return c;
}

LoopController pd_controller(const PdFunnel& law, const Signal& reference) {
  LoopController c;
  c.label = "pd_funnel";
  c.eval = [law, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                            const Eigen::VectorXd&) {
    require(chain.size() >= 2 && chain[0].size() == 1, Errc::invalid_argument,
            "controller: the proportional-derivative law is scalar and needs e and e'");
    const double e = chain[0](0) - reference.eval(t, 0)(0);
    const double ed = chain[1](0) - reference.eval(t, 1)(0);
    ControlEval ev;
    ev.u = Eigen::VectorXd::Constant(1, law.control(t, e, ed));
    const double w0 = law.phi0.phi(t), w1 = law.phi1.phi(t);
    ev.margins = {w0 * std::abs(e), w1 * std::abs(ed)};
    ev.gains = {w0 / (1.0 - w0 * std::abs(e)), w1 / (1.0 - w1 * std::abs(ed))};
    ev.psi = {law.phi0.psi(t), law.phi1.psi(t)};
    return ev;
  };
  return c;
}

LoopController ppc_controller(const Ppc& law, const Signal& reference) {
  law.validate();
  LoopController c;
  c.label = "prescribed_performance";
  c.eval = [law, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                            const Eigen::VectorXd&) {
    require(static_cast<int>(chain.size()) >= law.r, Errc::invalid_argument,
            "controller: output chain shorter than the law's depth");
    std::vector<Eigen::VectorXd> x(chain.begin(), chain.begin() + law.r);
    ControlEval ev;
    ev.u = law.control(t, x, reference.eval(t));
    // mirror the stage recursion for the reported margins and virtual controls
    Eigen::VectorXd a_prev = reference.eval(t);
    for (int i = 0; i < law.r; ++i) {
      const Eigen::VectorXd s = law.phi[i].phi(t) * (x[i] - a_prev);
      ev.margins.push_back(s.norm());
      ev.psi.push_back(law.phi[i].psi(t));
      Eigen::VectorXd a(s.size());
      for (int j = 0; j < s.size(); ++j) a(j) = -law.k[i] * tf_log_ratio(s(j));
      ev.gains.push_back(a.norm());
      a_prev = a;
    }
    return ev;
  };
  return c;
}

LoopController saturated_controller(const FunnelFunction& phi, double u_hat,
                                    const Signal& reference) {
  require(u_hat > 0.0, Errc::invalid_argument, "controller: saturation bound must be positive");
  LoopController c;
  c.label = "saturated_fc";
  c.eval = [phi, u_hat, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                                   const Eigen::VectorXd&) {
    const Eigen::VectorXd e = chain.at(0) - reference.eval(t);
    ControlEval ev;
    ev.u = saturated_fc(phi, u_hat, t, e);
    const double w = phi.phi(t);
    const double en = e.norm();
    const double k = w / (1.0 - (w * en) * (w * en));
    ev.margins = {w * en};
    ev.gains = {k, k * en > u_hat ? 1.0 : 0.0};
    ev.psi = {phi.psi(t)};
    return ev;
  };
  return c;
}

LoopController icfc_controller(const Icfc& law, const Signal& reference) {
  law.validate();
  LoopController c;
  c.label = "input_constrained_fc";
  c.state_dim = 1;
  c.state0 = Eigen::VectorXd::Constant(1, law.psi0);
  c.eval = [law, reference](double t, const std::vector<Eigen::VectorXd>& chain,
                            const Eigen::VectorXd& state) {
    const Eigen::VectorXd e = chain.at(0) - reference.eval(t);
    auto res = law.step(t, e, state(0));
    ControlEval ev;
    ev.u = res.u;
    ev.state_dot = Eigen::VectorXd::Constant(1, res.psi_dot);
    ev.gains = {res.k, res.kappa};
    ev.margins = {e.norm() / state(0)};
    ev.psi = {state(0)};
    return ev;
  };
  return c;
}

// ---------------------------------------------------------------------------
// Assembly

std::vector<Eigen::VectorXd> unpack_state(const ClosedLoopProblem& problem,
                                          const Eigen::VectorXd& x) {
  require(x.size() == problem.state_dim, Errc::invalid_argument,
          "unpack: state size disagrees with the problem");
  std::vector<Eigen::VectorXd> blocks;
  int at = 0;
  for (int sz : problem.layout) {
    blocks.push_back(x.segment(at, sz));
    at += sz;
  }
  require(at == problem.state_dim, Errc::invalid_argument,
          "unpack: layout does not cover the state");
  return blocks;
}

Eigen::VectorXd pack_state(const ClosedLoopProblem& problem,
                           const std::vector<Eigen::VectorXd>& blocks) {
  require(blocks.size() == problem.layout.size(), Errc::invalid_argument,
          "pack: block count disagrees with the layout");
  Eigen::VectorXd x(problem.state_dim);
  int at = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    require(static_cast<int>(blocks[i].size()) == problem.layout[i], Errc::invalid_argument,
            "pack: block size disagrees with the layout");
    x.segment(at, problem.layout[i]) = blocks[i];
    at += problem.layout[i];
  }
  return x;
}

ClosedLoopProblem assemble(const Plant& plant, const LoopController& controller,
                           const Signal& reference, double t0, double t_end) {
  require(plant.state_dim > 0 && plant.rhs && plant.output_chain, Errc::invalid_argument,
          "assemble: plant is incomplete");
  require(static_cast<bool>(controller.eval), Errc::invalid_argument, "assemble: controller has no evaluation");
  require(controller.state0.size() == controller.state_dim, Errc::invalid_argument,
          "assemble: controller initial state size disagrees");
  require(reference.dim == plant.m, Errc::invalid_argument,
          "assemble: reference dimension disagrees with the plant output");
  require(t_end > t0 && std::isfinite(t0) && std::isfinite(t_end), Errc::invalid_argument,
          "assemble: empty or non-finite time span");
  ClosedLoopProblem p;
  p.name = controller.label;
  p.state_dim = plant.state_dim + controller.state_dim;
  p.m = plant.m;
  p.t0 = t0;
  p.t_end = t_end;
  p.layout = {plant.state_dim, 0, controller.state_dim};
  p.x0.resize(p.state_dim);
  p.x0 << plant.x0, controller.state0;
  const int np = plant.state_dim;
  const int nc = controller.state_dim;
  p.rhs = [plant, controller, np, nc](double t, const Eigen::VectorXd& x, const History*,
                                      double) {
    const auto chain = plant.output_chain(t, x.head(np));
    const ControlEval ev = controller.eval(t, chain, x.tail(nc));
    Eigen::VectorXd dx(np + nc);
    dx.head(np) = plant.rhs(t, x.head(np), ev.u);
    if (nc > 0) dx.tail(nc) = ev.state_dot;
    return dx;
  };
  p.observe = [plant, controller, reference, np, nc](double t, const Eigen::VectorXd& x,
                                                     const History*, double) {
    const auto chain = plant.output_chain(t, x.head(np));
    ControlEval ev = controller.eval(t, chain, x.tail(nc));
    Sample s;
    s.t = t;
    s.y = chain[0];
    s.u = ev.u;
    s.e = chain[0] - reference.eval(t);
    s.gains = std::move(ev.gains);
    s.margins = std::move(ev.margins);
    s.psi = std::move(ev.psi);
    return s;
  };
  return p;
}

namespace {

double smallest_point_lag(const CausalOperator& op) {
  double lag = std::numeric_limits<double>::infinity();
  if (op.kind() == OperatorKind::PointDelay) {
    for (const auto& term : op.delay_terms())
      if (term.h > 0.0) lag = std::min(lag, term.h);
  } else if (op.kind() == OperatorKind::Composite) {
    for (const auto& part : op.parts()) lag = std::min(lag, smallest_point_lag(part));
  }
  return lag;
}

}  // namespace

ClosedLoopProblem assemble_functional(const FunctionalPlant& plant,
                                      const LoopController& controller, const Signal& reference,
                                      double t0, double t_end) {
  require(plant.m >= 1 && plant.r >= 1 && plant.f, Errc::invalid_argument,
          "assemble: functional plant is incomplete");
  require(plant.chain0.size() == static_cast<long>(plant.r) * plant.m, Errc::invalid_argument,
          "assemble: functional plant initial chain must have r*m entries");
  require(static_cast<bool>(controller.eval), Errc::invalid_argument, "assemble: controller has no evaluation");
  require(controller.state0.size() == controller.state_dim, Errc::invalid_argument,
          "assemble: controller initial state size disagrees");
  require(t_end > t0 && std::isfinite(t0) && std::isfinite(t_end), Errc::invalid_argument,
          "assemble: empty or non-finite time span");
  if (plant.op) {
    require(plant.op->input_dim() == plant.m, Errc::invalid_argument,
            "assemble: operator input dimension disagrees with the output");
    require(plant.op->memory() == 0.0 || static_cast<bool>(plant.prehistory),
            Errc::invalid_argument,
            "assemble: an operator with memory needs a prehistory on [t0 - memory, t0]");
  }
  const int m = plant.m, r = plant.r;
  const int nchain = r * m;
  const int neta = plant.op ? plant.op->state_dim() : 0;
  const int nc = controller.state_dim;
  FunctionalPlant plant_copy = plant;
  if (!plant_copy.disturbance.eval_fn) plant_copy.disturbance = Signal::zero(m);
  ClosedLoopProblem p;
  p.name = controller.label;
  p.state_dim = nchain + neta + nc;
  p.m = m;
  p.t0 = t0;
  p.t_end = t_end;
  p.layout = {nchain, neta, nc};
  p.x0.resize(p.state_dim);
  if (neta > 0)
    p.x0 << plant.chain0, plant.op->initial_state(), controller.state0;
  else
    p.x0 << plant.chain0, controller.state0;
  p.history_dim = m;
  p.memory = plant.op ? plant.op->memory() : 0.0;
  p.min_lag = plant.op ? smallest_point_lag(*plant.op) : std::numeric_limits<double>::infinity();
  p.prehistory = plant.prehistory;
  p.history_value = [m](const Eigen::VectorXd& x) { return x.head(m).eval(); };
  p.history_slope = [m](const Eigen::VectorXd&, const Eigen::VectorXd& xdot) {
    return xdot.head(m).eval();
  };
  auto chain_blocks = [m, r](const Eigen::VectorXd& x) {
    std::vector<Eigen::VectorXd> chain;
    chain.reserve(r);
    for (int i = 0; i < r; ++i) chain.push_back(x.segment(i * m, m));
    return chain;
  };
  p.rhs = [plant = plant_copy, controller, chain_blocks, m, r, nchain, neta, nc](
              double t, const Eigen::VectorXd& x, const History* hist, double slack) {
    const auto chain = chain_blocks(x);
    const ControlEval ev = controller.eval(t, chain, x.tail(nc));
    Eigen::VectorXd Ty(0);
    if (plant.op) {
      require(hist != nullptr, Errc::insufficient_history,
              "assemble: operator evaluation without an output record");
      Ty = plant.op->evaluate(t, *hist, x.segment(nchain, neta), slack);
    }
    const Eigen::VectorXd d = plant.disturbance.eval(t);
    Eigen::VectorXd dx(nchain + neta + nc);
    if (r > 1) dx.head((r - 1) * m) = x.segment(m, (r - 1) * m);
    dx.segment((r - 1) * m, m) = plant.f(t, d, Ty, ev.u);
    if (neta > 0)
      dx.segment(nchain, neta) = plant.op->state_derivative(x.segment(nchain, neta), chain[0]);
    if (nc > 0) dx.tail(nc) = ev.state_dot;
    return dx;
  };
  p.observe = [controller, reference, chain_blocks, nc](double t, const Eigen::VectorXd& x,
                                                        const History*, double) {
    const auto chain = chain_blocks(x);
    ControlEval ev = controller.eval(t, chain, x.tail(nc));
    Sample s;
    s.t = t;
    s.y = chain[0];
    s.u = ev.u;
    s.e = chain[0] - reference.eval(t);
    s.gains = std::move(ev.gains);
    s.margins = std::move(ev.margins);
    s.psi = std::move(ev.psi);
    return s;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Integration

namespace {

// Dormand-Prince 5(4) coefficients; the last row doubles as the 5th-order
// weights (first-same-as-last pair)
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// difference between the 5th- and 4th-order weights
constexpr double kE[7] = {35.0 / 384 - 5179.0 / 57600,    0.0,
                          500.0 / 1113 - 7571.0 / 16695,  125.0 / 192 - 393.0 / 640,
                          -2187.0 / 6784 + 92097.0 / 339200, 11.0 / 84 - 187.0 / 2100,
                          -1.0 / 40};

double error_norm(const Eigen::VectorXd& diff, const Eigen::VectorXd& x0,
                  const Eigen::VectorXd& x1, double rtol, double atol) {
  double acc = 0.0;
  for (int i = 0; i < diff.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(x0(i)), std::abs(x1(i)));
    const double q = diff(i) / sc;
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(diff.size()));
}

}  // namespace

Trajectory integrate(const ClosedLoopProblem& problem, const IntegrateOptions& options) {
  require(problem.rhs && problem.observe, Errc::invalid_argument,
          "integrate: problem lacks rhs or observe");
  require(problem.x0.size() == problem.state_dim, Errc::invalid_argument,
          "integrate: initial state size disagrees");
  require(problem.t_end > problem.t0, Errc::invalid_argument, "integrate: empty time span");
  require(options.rtol > 0.0 && options.atol > 0.0 && std::isfinite(options.rtol) &&
              std::isfinite(options.atol),
          Errc::invalid_argument, "integrate: tolerances must be positive");

  const double rtol = options.rtol, atol = options.atol;
  const double min_step = std::max(1e-12 * std::abs(problem.t_end), 1e-300);

  std::optional<History> hist;
  if (problem.history_dim > 0) {
    require(static_cast<bool>(problem.history_value) && static_cast<bool>(problem.history_slope),
            Errc::invalid_argument, "integrate: history wiring is incomplete");
    hist.emplace(problem.history_dim, problem.t0, problem.memory, problem.prehistory);
  }
  const History* hp = hist ? &*hist : nullptr;

  Trajectory traj;
  auto deriv = [&](double t, const Eigen::VectorXd& x, double slack) {
    ++traj.stats.rhs_evals;
    Eigen::VectorXd dx = problem.rhs(t, x, hp, slack);
    if (!dx.allFinite())
      fail(Errc::integration_failure,
           "integrate: non-finite right-hand side at t = " + fmt17(t));
    return dx;
  };
  auto store = [&](double t, const Eigen::VectorXd& x) {
    Sample s = problem.observe(t, x, hp, 0.0);
    for (double mg : s.margins)
      if (!(mg < kUnitGuard)) ++traj.domain_faults;
    if (problem.algebraic_residual)
      traj.residual_max =
          std::max(traj.residual_max, std::abs(problem.algebraic_residual(t, x, hp, 0.0)));
    traj.samples.push_back(std::move(s));
  };

  double t = problem.t0;
  Eigen::VectorXd x = problem.x0;
  Eigen::VectorXd f0;
  try {
    if (hist) {
      // the first knot's slope comes from this very evaluation; a provisional
      // zero-slope knot is exact because only values at or before t0 are read
      History boot(problem.history_dim, problem.t0, problem.memory, problem.prehistory);
      boot.push(t, problem.history_value(x), Eigen::VectorXd::Zero(problem.history_dim));
      hp = &boot;
      f0 = deriv(t, x, 0.0);
      hp = &*hist;
    } else {
      f0 = deriv(t, x, 0.0);
    }
  } catch (const Error& err) {
    hp = hist ? &*hist : nullptr;
    if (err.code() == Errc::domain_violation) {
      traj.termination = Termination::GuardUnsatisfiableAtStart;
      traj.t_final = t;
      return traj;
    }
    throw;
  }
  if (hist) hist->push(t, problem.history_value(x), problem.history_slope(x, f0));
  store(t, x);

  auto cap = [&](double h) {
    h = std::min(h, problem.t_end - t);
    if (options.max_step > 0.0) h = std::min(h, options.max_step);
    if (hist && std::isfinite(problem.min_lag)) h = std::min(h, problem.min_lag);
    if (options.history_max_dt > 0.0) h = std::min(h, options.history_max_dt);
    return h;
  };

  // starting step from the scaled state/derivative magnitudes, probed with one
  // Euler trial that may itself hit a guard
  double h;
  if (options.initial_step > 0.0) {
    h = options.initial_step;
  } else {
    auto scn = [&](const Eigen::VectorXd& v) { return error_norm(v, x, x, rtol, atol); };
    const double d0 = scn(x), d1 = scn(f0);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = cap(h0);
    double h1 = h0;
    try {
      const Eigen::VectorXd f1 = deriv(t + h0, x + h0 * f0, h0);
      const double d2 = scn(f1 - f0) / h0;
      const double dm = std::max(d1, d2);
      h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    } catch (const Error& err) {
      if (err.code() != Errc::domain_violation) throw;
      h1 = h0 / 50.0;
    }
    h = std::min(100.0 * h0, h1);
  }

  double errold = 1.0;
  std::array<Eigen::VectorXd, 7> k;
  while (problem.t_end - t > min_step) {
    h = cap(h);
    if (h < min_step) {
      traj.termination = Termination::MinStepReached;
      break;
    }
    bool guard_hit = false;
    Eigen::VectorXd x5;
    k[0] = f0;
    try {
      for (int s = 1; s <= 5; ++s) {
        Eigen::VectorXd xs = x;
        for (int j = 0; j < s; ++j) xs += (h * kA[s][j]) * k[j];
        k[s] = deriv(t + kC[s] * h, xs, h);
      }
      x5 = x;
      for (int j = 0; j < 6; ++j) x5 += (h * kA[6][j]) * k[j];
      k[6] = deriv(t + h, x5, h);
    } catch (const Error& err) {
      if (err.code() != Errc::domain_violation) throw;
      guard_hit = true;
    }
    if (guard_hit) {
      ++traj.stats.guard_rejections;
      h *= 0.5;
      errold = 1.0;
      continue;
    }
    Eigen::VectorXd diff = Eigen::VectorXd::Zero(x.size());
    for (int j = 0; j < 7; ++j) diff += (h * kE[j]) * k[j];
    const double err = error_norm(diff, x, x5, rtol, atol);
    if (err <= 1.0) {
      traj.segments.push_back({t, t + h, x, x5, k[0], k[6]});
      t += h;
      x = x5;
      f0 = k[6];
      if (hist) hist->push(t, problem.history_value(x), problem.history_slope(x, f0));
      store(t, x);
      ++traj.stats.accepted;
      const double fac =
          err == 0.0 ? 5.0 : 0.9 * std::pow(err, -0.14) * std::pow(errold, 0.08);
      h *= std::clamp(fac, 0.2, 5.0);
      errold = std::max(err, 1e-10);
    } else {
      ++traj.stats.rejected;
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
    }
  }
  traj.t_final = t;
  return traj;
}

Eigen::VectorXd Trajectory::state_at(double t) const {
  require(!segments.empty(), Errc::invalid_argument, "trajectory: no dense output stored");
  const double lo = segments.front().t0, hi = segments.back().t1;
  require(t >= lo - 1e-12 * std::max(1.0, std::abs(lo)) &&
              t <= hi + 1e-12 * std::max(1.0, std::abs(hi)),
          Errc::invalid_argument, "trajectory: query outside the integrated span");
  t = std::clamp(t, lo, hi);
  std::size_t a = 0, b = segments.size() - 1;
  while (a < b) {
    const std::size_t mid = (a + b) / 2;
    if (segments[mid].t1 < t)
      a = mid + 1;
    else
      b = mid;
  }
  const DenseSegment& seg = segments[a];
  const double dt = seg.t1 - seg.t0;
  const double th = (t - seg.t0) / dt;
  const double th2 = th * th, th3 = th2 * th;
  return (2 * th3 - 3 * th2 + 1) * seg.x0 + (th3 - 2 * th2 + th) * dt * seg.f0 +
         (-2 * th3 + 3 * th2) * seg.x1 + (th3 - th2) * dt * seg.f1;
}

Trajectory resample(const ClosedLoopProblem& problem, const Trajectory& trajectory, int points) {
  require(points >= 2, Errc::invalid_argument, "resample: need at least two points");
  require(problem.history_dim == 0, Errc::invalid_argument,
          "resample: not available for delay problems");
  require(!trajectory.segments.empty(), Errc::invalid_argument,
          "resample: trajectory has no dense output");
  Trajectory out;
  out.termination = trajectory.termination;
  out.t_final = trajectory.t_final;
  out.stats = trajectory.stats;
  out.domain_faults = trajectory.domain_faults;
  out.residual_max = trajectory.residual_max;
  const double a = problem.t0, b = trajectory.t_final;
  for (int i = 0; i < points; ++i) {
    const double t = a + (b - a) * static_cast<double>(i) / (points - 1);
    out.samples.push_back(problem.observe(t, trajectory.state_at(t), nullptr, 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics and export

bool RunReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

RunReport verify_invariants(const Trajectory& trajectory,
                            const std::vector<InvariantCheck>& checks) {
  RunReport rep;
  rep.termination = trajectory.termination;
  rep.t_final = trajectory.t_final;
  rep.domain_faults = trajectory.domain_faults;
  rep.residual_max = trajectory.residual_max;
  rep.stats = trajectory.stats;
  for (const auto& s : trajectory.samples) {
    if (rep.eps_observed.size() < s.margins.size()) rep.eps_observed.resize(s.margins.size(), 0.0);
    for (std::size_t i = 0; i < s.margins.size(); ++i)
      rep.eps_observed[i] = std::max(rep.eps_observed[i], s.margins[i]);
    if (rep.gain_max.size() < s.gains.size()) rep.gain_max.resize(s.gains.size(), 0.0);
    for (std::size_t i = 0; i < s.gains.size(); ++i)
      rep.gain_max[i] = std::max(rep.gain_max[i], s.gains[i]);
    rep.input_sup = std::max(rep.input_sup, s.u.norm());
  }
  for (const auto& check : checks) rep.checks.push_back(check(trajectory));
  return rep;
}

void write_csv(std::ostream& os, const Trajectory& trajectory) {
  require(!trajectory.samples.empty(), Errc::invalid_argument, "csv: trajectory has no samples");
  const Sample& first = trajectory.samples.front();
  os << "t";
  for (int i = 1; i <= first.y.size(); ++i) os << ", y_" << i;
  for (int i = 1; i <= first.u.size(); ++i) os << ", u_" << i;
  for (int i = 1; i <= first.e.size(); ++i) os << ", e_" << i;
  for (std::size_t i = 1; i <= first.psi.size(); ++i) os << ", psi_" << i;
  os << "\n";
  for (const auto& s : trajectory.samples) {
    os << fmt17(s.t);
    for (int i = 0; i < s.y.size(); ++i) os << ", " << fmt17(s.y(i));
    for (int i = 0; i < s.u.size(); ++i) os << ", " << fmt17(s.u(i));
    for (int i = 0; i < s.e.size(); ++i) os << ", " << fmt17(s.e(i));
    for (double v : s.psi) os << ", " << fmt17(v);
    os << "\n";
  }
}

void write_csv(const std::string& path, const Trajectory& trajectory) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io_failure, "csv: cannot open " + path);
  write_csv(os, trajectory);
  os.flush();
  require(static_cast<bool>(os), Errc::io_failure, "csv: write failed for " + path);
}

namespace {

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::Completed: return "Completed";
    case Termination::MinStepReached: return "MinStepReached";
    case Termination::GuardUnsatisfiableAtStart: return "GuardUnsatisfiableAtStart";
  }
  return "?";
}

void write_list(std::ostream& os, const char* label, const std::vector<double>& v) {
  os << label << ":";
  for (double x : v) os << " " << fmt17(x);
  os << "\n";
}

}  // namespace

void write_report(std::ostream& os, const RunReport& report) {
  os << "termination: " << termination_name(report.termination) << "\n";
  os << "t_final: " << fmt17(report.t_final) << "\n";
  write_list(os, "eps_observed", report.eps_observed);
  write_list(os, "gain_max", report.gain_max);
  os << "input_sup: " << fmt17(report.input_sup) << "\n";
  os << "domain_faults: " << report.domain_faults << "\n";
  os << "residual_max: " << fmt17(report.residual_max) << "\n";
  os << "steps: accepted=" << report.stats.accepted << " rejected=" << report.stats.rejected
     << " guard_rejections=" << report.stats.guard_rejections
     << " rhs_evals=" << report.stats.rhs_evals << "\n";
  os << "wall_ms: " << fmt17(report.wall_ms) << "\n";
  for (const auto& c : report.checks)
    os << "check " << (c.pass ? "PASS" : "FAIL") << " " << c.name << ": value=" << fmt17(c.value)
       << " bound=" << fmt17(c.bound) << "\n";
}

void write_report(const std::string& path, const RunReport& report) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io_failure, "report: cannot open " + path);
  write_report(os, report);
  os.flush();
  require(static_cast<bool>(os), Errc::io_failure, "report: write failed for " + path);
}

}  // namespace fc
