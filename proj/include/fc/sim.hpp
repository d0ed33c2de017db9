#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fc/controllers.hpp"
#include "fc/errors.hpp"
#include "fc/funnel.hpp"
#include "fc/lti.hpp"
#include "fc/operators.hpp"

namespace fc {

// Reference or disturbance trajectory with analytic derivatives. Controllers
// request derivatives up to their relative degree, so every factory supplies
// them exactly rather than by differencing.
struct Signal {
  int dim = 1;
  int max_order = 0;
  std::function<Eigen::VectorXd(double, int)> eval_fn;

  static Signal zero(int dim = 1);
  static Signal constant(const Eigen::VectorXd& value);
  // componentwise amp_i sin(omega_i t + phase_i)
  static Signal harmonic(const Eigen::VectorXd& amp, const Eigen::VectorXd& omega,
                         const Eigen::VectorXd& phase);
  // scalar c0 + (c1 + c2 t)(1+t)^p; derivatives available through order 2
  static Signal rational_pow(double c0, double c1, double c2, double p);
  static Signal custom(int dim, int max_order, std::function<Eigen::VectorXd(double, int)> fn);

  Eigen::VectorXd eval(double t, int order = 0) const;
};

// State-space plant exposing the first chain_len output derivatives as state
// functions, which is what the static feedback laws consume.
struct Plant {
  int state_dim = 0;
  int m = 1;
  int chain_len = 1;
  Eigen::VectorXd x0;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)> rhs;
  std::function<std::vector<Eigen::VectorXd>(double, const Eigen::VectorXd&)> output_chain;

  static Plant from_lti(const LtiSystem& sys, const Eigen::VectorXd& x0);
  // x' = a x + b u + c d(t), output x
  static Plant scalar_linear(double a, double b, double c, const Signal& disturbance, double y0);
  // y^(r) = gain * u with state (y, y', ..., y^(r-1)), m channels
  static Plant integrator_chain(int r, int m, double gain, const Eigen::VectorXd& x0);
  // two-link planar arm; state (y, y'); inertia checked positive definite at
  // every evaluation
  static Plant robot_arm(double m1, double m2, double l1, double l2, double gravity,
                         const Eigen::Vector4d& x0);
};

// One controller evaluation. margins are the funnel-interiority measures the
// integrator guards (each must stay below 1); psi are the tube radii the CSV
// export carries alongside the trajectory.
struct ControlEval {
  Eigen::VectorXd u;
  Eigen::VectorXd state_dot;
  std::vector<double> gains;
  std::vector<double> margins;
  std::vector<double> psi;
};

// Uniform adapter around the feedback laws: optional dynamic state plus an
// evaluation on the measured output chain. Evaluations outside the admissible
// set throw domain_violation, which the integrator treats as a rejected step,
// so the law itself is never sampled at or past a funnel boundary.
struct LoopController {
  std::string label;
  int state_dim = 0;
  Eigen::VectorXd state0;
  std::function<ControlEval(double, const std::vector<Eigen::VectorXd>&, const Eigen::VectorXd&)>
      eval;
};

LoopController constant_controller(const Eigen::VectorXd& u0);
LoopController static_fc_controller(const DesignParams& params, const Signal& reference);
LoopController nonbackstep_controller(const NonBackstepFc& law, const Signal& reference);
LoopController filter_controller(const FilterFc& law, const Eigen::VectorXd& xi0,
                                 const Signal& reference);
// pre-compensator cascade driven by the measured output; the static law acts
// on the surrogate output chain of the last stage
LoopController precomp_controller(const PrecompCascade& cascade, const DesignParams& surrogate,
                                  const Signal& reference);
LoopController high_gain_controller(double k0);
LoopController lambda_controller(double lambda, double k0, const Signal& reference);
LoopController nussbaum_controller(double k0);
LoopController pd_controller(const PdFunnel& law, const Signal& reference);
LoopController ppc_controller(const Ppc& law, const Signal& reference);
LoopController saturated_controller(const FunnelFunction& phi, double u_hat,
                                    const Signal& reference);
LoopController icfc_controller(const Icfc& law, const Signal& reference);

// Per-sample record written to CSV and consumed by the invariant checks.
struct Sample {
  double t = 0.0;
  Eigen::VectorXd y, u, e;
  std::vector<double> gains, margins, psi;
};

enum class Termination { Completed, MinStepReached, GuardUnsatisfiableAtStart };

struct StepStats {
  long long accepted = 0;
  long long rejected = 0;
  long long guard_rejections = 0;
  long long rhs_evals = 0;
};

// cubic Hermite segment of the packed state over one accepted step
struct DenseSegment {
  double t0 = 0.0, t1 = 0.0;
  Eigen::VectorXd x0, x1, f0, f1;
};

struct Trajectory {
  std::vector<Sample> samples;
  std::vector<DenseSegment> segments;
  Termination termination = Termination::Completed;
  double t_final = 0.0;
  StepStats stats;
  long long domain_faults = 0;  // accepted samples at or past a guard; must stay 0
  double residual_max = 0.0;    // largest algebraic-row residual, constrained runs only

  Eigen::VectorXd state_at(double t) const;
};

// Guarded initial-value problem: everything integrate() needs, closed over the
// plant, controller, and reference. The rhs receives the output history (null
// when no operator needs one) and the extrapolation slack for trial stages.
struct ClosedLoopProblem {
  std::string name;
  int state_dim = 0;
  int m = 1;
  double t0 = 0.0;
  double t_end = 1.0;
  Eigen::VectorXd x0;
  std::vector<int> layout;  // block sizes: plant, operator, controller states

  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const History*, double)> rhs;
  std::function<Sample(double, const Eigen::VectorXd&, const History*, double)> observe;
  // algebraic-row residual recomputed at accepted samples (constrained runs)
  std::function<double(double, const Eigen::VectorXd&, const History*, double)> algebraic_residual;

  // output-history wiring for delay operators; history_dim = 0 means none
  int history_dim = 0;
  double memory = 0.0;
  double min_lag = std::numeric_limits<double>::infinity();
  std::function<Eigen::VectorXd(double)> prehistory;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> history_value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> history_slope;
};

// split the packed state into the layout blocks and reassemble it
std::vector<Eigen::VectorXd> unpack_state(const ClosedLoopProblem& problem,
                                          const Eigen::VectorXd& x);
Eigen::VectorXd pack_state(const ClosedLoopProblem& problem,
                           const std::vector<Eigen::VectorXd>& blocks);

ClosedLoopProblem assemble(const Plant& plant, const LoopController& controller,
                           const Signal& reference, double t0, double t_end);

// Plant given as a functional relation y^(r) = f(d(t), (T y)(t), u) with a
// causal operator acting on the recorded output; realizes the general
// closed-loop class the static laws are proved against.
struct FunctionalPlant {
  int m = 1;
  int r = 1;
  std::optional<CausalOperator> op;
  Signal disturbance;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      f;
  Eigen::VectorXd chain0;
  std::function<Eigen::VectorXd(double)> prehistory;
};

ClosedLoopProblem assemble_functional(const FunctionalPlant& plant,
                                      const LoopController& controller, const Signal& reference,
                                      double t0, double t_end);

struct IntegrateOptions {
  double rtol = 1e-9;
  double atol = 1e-9;
  double max_step = 0.0;       // 0 = limited only by the remaining span
  double initial_step = 0.0;   // 0 = automatic selection
  double history_max_dt = 0.0; // 0 = uncapped; >0 forces denser history knots
};

// Embedded 5(4) Runge-Kutta pair with PI step control. A trial step is
// rejected and halved whenever any stage evaluation reports a guard violation;
// error-controlled otherwise. Stops early with MinStepReached when the step
// underflows 1e-12 * t_end.
Trajectory integrate(const ClosedLoopProblem& problem, const IntegrateOptions& options = {});

struct CheckResult {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
};

using InvariantCheck = std::function<CheckResult(const Trajectory&)>;

struct RunReport {
  Termination termination = Termination::Completed;
  double t_final = 0.0;
  std::vector<double> eps_observed;  // per margin channel, sup over samples
  std::vector<double> gain_max;      // per gain channel, sup over samples
  double input_sup = 0.0;
  long long domain_faults = 0;
  double residual_max = 0.0;
  StepStats stats;
  double wall_ms = 0.0;
  std::vector<CheckResult> checks;

  bool all_passed() const;
};

// Aggregates the per-sample diagnostics and evaluates the scenario's identity
// and monotonicity checks; violations are reported in the result, not thrown.
RunReport verify_invariants(const Trajectory& trajectory,
                            const std::vector<InvariantCheck>& checks = {});

// Trajectory re-sampled on a uniform grid through the dense output; delay-free
// problems only. Used for regression fixtures that must not depend on the
// accepted step sequence.
Trajectory resample(const ClosedLoopProblem& problem, const Trajectory& trajectory, int points);

// header `t, y_1.., u_1.., e_1.., psi_1..`, rows with 17 significant digits
void write_csv(std::ostream& os, const Trajectory& trajectory);
void write_csv(const std::string& path, const Trajectory& trajectory);

void write_report(std::ostream& os, const RunReport& report);
void write_report(const std::string& path, const RunReport& report);

}  // namespace fc
