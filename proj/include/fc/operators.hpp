#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "fc/errors.hpp"

namespace fc {

// Dense record of a trajectory: knots (t, y, y') joined by cubic Hermite
// segments, optionally preceded by a user-supplied prehistory on [t0 - memory, t0].
class History {
 public:
  History(int dim, double t0, double memory = 0.0,
          std::function<Eigen::VectorXd(double)> prehistory = {});

  // knots must arrive with strictly increasing times
  void push(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& dy);

  // Piecewise-cubic evaluation. Queries in [t0 - memory, t0) use the
  // prehistory; queries up to `slack` beyond the last knot extrapolate the
  // final segment (the integrator passes its trial step here); anything else
  // raises insufficient_history.
  Eigen::VectorXd eval(double t, double slack = 0.0) const;

  double start() const { return t0_; }
  double end() const { return times_.empty() ? t0_ : times_.back(); }
  double memory() const { return memory_; }
  int dim() const { return dim_; }
  std::size_t knots() const { return times_.size(); }

 private:
  int dim_;
  double t0_;
  double memory_;
  std::function<Eigen::VectorXd(double)> prehistory_;
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> values_;
  std::vector<Eigen::VectorXd> slopes_;
};

// time-and-value kernel (t, xi) -> vector
using DelayKernel = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

struct PointDelayTerm {
  double h = 0.0;  // lag >= 0
  DelayKernel psi;
};

enum class OperatorKind { PointDelay, DistributedDelay, InternalDynamicsLTI, Relay, Composite };

// Causal map from input histories to outputs: the output at t depends only on
// the input on [t - memory, t]. Descriptors are immutable; any run-time state
// (the internal-dynamics accumulator) lives in the closed-loop ODE state.
class CausalOperator {
 public:
  // sum_i psi_i(t, y(t - h_i))
  static CausalOperator point_delay(std::vector<PointDelayTerm> terms, int input_dim,
                                    int output_dim);
  // integral of psi0(s, y(t+s)) over s in [-h0, 0], composite Gauss quadrature
  static CausalOperator distributed_delay(DelayKernel psi0, double h0, int quad_points,
                                          int input_dim, int output_dim, int panels = 8);
  // eta' = Q eta + P y, output S eta
  static CausalOperator internal_dynamics(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& P,
                                          const Eigen::MatrixXd& S, const Eigen::VectorXd& eta0);
  // placeholder realization: constructible and serializable, not evaluable
  static CausalOperator relay(double threshold_on, double threshold_off);
  // pointwise sum of realizations with common input/output dimensions
  static CausalOperator composite(std::vector<CausalOperator> parts);

  OperatorKind kind() const { return kind_; }
  double memory() const { return memory_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

  // run-time state exposed for ODE augmentation (empty for stateless kinds)
  int state_dim() const;
  Eigen::VectorXd initial_state() const;
  Eigen::VectorXd state_derivative(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) const;

  // output at time t given the input record and the current augmented state
  Eigen::VectorXd evaluate(double t, const History& input, const Eigen::VectorXd& eta,
                           double slack = 0.0) const;

  // self-contained evaluation: stateful parts integrate their state from the
  // start of the record up to t (fixed-step fourth-order sweep)
  Eigen::VectorXd apply(const History& input, double t) const;

  // internal-dynamics accessors (empty matrices otherwise)
  const Eigen::MatrixXd& Q() const { return Q_; }
  const Eigen::MatrixXd& P() const { return P_; }
  const Eigen::MatrixXd& S() const { return S_; }
  const std::vector<CausalOperator>& parts() const { return parts_; }
  const std::vector<PointDelayTerm>& delay_terms() const { return terms_; }
  double distributed_lag() const { return h0_; }
  int quad_points() const { return quad_points_; }
  int quad_panels() const { return panels_; }
  std::pair<double, double> relay_thresholds() const { return {thr_on_, thr_off_}; }

 private:
  CausalOperator() = default;

  OperatorKind kind_ = OperatorKind::PointDelay;
  double memory_ = 0.0;
  int input_dim_ = 0;
  int output_dim_ = 0;

  std::vector<PointDelayTerm> terms_;            // PointDelay
  DelayKernel psi0_;                             // DistributedDelay
  double h0_ = 0.0;
  int quad_points_ = 5;
  int panels_ = 8;
  Eigen::MatrixXd Q_, P_, S_;                    // InternalDynamicsLTI
  Eigen::VectorXd eta0_;
  double thr_on_ = 0.0, thr_off_ = 0.0;          // Relay
  std::vector<CausalOperator> parts_;            // Composite
};

struct BiboReport {
  double c2_estimate = 0.0;               // largest output sup over the trials
  std::optional<double> analytic_bound;   // ||S|| ||P|| c1 * integral of ||e^{Q tau}||
  bool unbounded_warning = false;         // internal dynamics not Hurwitz
};

// Drives the operator with band-limited random inputs of sup-norm <= c1 and
// records the largest output magnitude seen.
BiboReport bibo_probe(const CausalOperator& op, double c1, int trials, double horizon,
                      unsigned long long seed = 0);

// For affine maps (d, z, u) -> f0(d, z) + Gamma u the admissibility of the
// control direction reduces to sign-definiteness of Gamma.
bool np1_linear_check(const Eigen::MatrixXd& L1, const Eigen::MatrixXd& L2,
                      const Eigen::MatrixXd& Gamma);

enum class ControlDirection { Positive, Negative, Unknown };

// Plant-side nonlinearity f(d, z, u). The control direction is declared
// metadata; when `affine_gamma` is set the map is promised to be affine in u
// with that slope, and validate() spot-checks the promise.
struct Nonlinearity {
  int disturbance_dim = 0;  // p
  int operator_dim = 0;     // q
  int input_dim = 0;        // m
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      eval;
  ControlDirection control_direction = ControlDirection::Unknown;
  std::optional<Eigen::MatrixXd> affine_gamma;

  // checks eval(d, z, u) - eval(d, z, 0) == affine_gamma * u on sampled points
  void validate(unsigned long long seed = 0) const;
};

// Input channel nonlinearities; `surjective_unbounded` marks the kinds a
// gain-scaling controller may employ.
struct InputNonlinearity {
  enum class Kind { Linear, SignedSquare, DeadZone, Saturating };

  static InputNonlinearity linear(double a, double b = 0.0);
  static InputNonlinearity signed_square(double a);
  static InputNonlinearity dead_zone(double b_l, double b_r,
                                     std::function<double(double)> D_l = {},
                                     std::function<double(double)> D_r = {});
  static InputNonlinearity saturating(double level);

  double eval(double v) const;

  Kind kind = Kind::Linear;
  bool surjective_unbounded = false;
  double a = 1.0, b = 0.0;   // Linear: a v + b; SignedSquare: a v |v|; Saturating: level
  double b_l = 0.0, b_r = 0.0;
  std::function<double(double)> D_l, D_r;
};

// dead-zone branch evaluation: 0 on (b_l, b_r), D_r right of the band, D_l left
double deadzone_eval(const InputNonlinearity& dz, double v);

}  // namespace fc
