#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "fc/errors.hpp"
#include "fc/funnel.hpp"

namespace fc {

// gains and scaled errors may approach their poles but never sample them; the
// integrator treats a guard hit as a rejected step
inline constexpr double kUnitGuard = 1.0 - 1e-12;

// bijection [0,1) -> [1,inf) used to turn funnel proximity into gain
struct AlphaMap {
  enum class Kind { Reciprocal, PowerReciprocal };

  static AlphaMap reciprocal();
  static AlphaMap power_reciprocal(double beta);

  double operator()(double s) const;
  // the function a with alpha' = a(alpha), needed by the filter recursion
  double gain_rate(double kappa) const;

  Kind kind = Kind::Reciprocal;
  double beta = 1.0;
};

// continuous surjection N modulating the control direction
struct SurjectionMap {
  enum class Kind { NegIdentity, PosIdentity, SSinS, Custom };

  static SurjectionMap neg_identity();
  static SurjectionMap pos_identity();
  static SurjectionMap s_sin_s();
  static SurjectionMap custom(std::function<double(double)> fn,
                              std::function<double(double)> dfn = {});

  double operator()(double s) const;
  double derivative(double s) const;
  bool differentiable() const;

  Kind kind = Kind::NegIdentity;
  std::function<double(double)> fn, dfn;
};

// the (alpha, N, phi, r, r_hat) tuple shared by the gain-scaling controllers
struct DesignParams {
  AlphaMap alpha;
  SurjectionMap N;
  FunnelFunction phi = FunnelFunction::constant_reciprocal(1.0);
  int r = 1;
  int r_hat = 1;

  void validate() const;
};

// w -> alpha(||w||^2) w on the open unit ball
Eigen::VectorXd gamma(const Eigen::VectorXd& w, const AlphaMap& alpha);

// recursion rho_1 = eta_1, rho_k = eta_k + gamma(rho_{k-1}); nullopt when an
// intermediate leaves the unit ball (a value, not a fault: used by
// initial-condition checks)
std::optional<Eigen::VectorXd> rho_r(const Eigen::VectorXd& eta, int r, int m,
                                     const AlphaMap& alpha);

// u = (N o alpha)(||w||^2) w with w = rho_r(phi(t) e_vec); e_vec stacks the
// feedback vector (error derivatives and, past r_hat, output derivatives)
Eigen::VectorXd fc_output(const DesignParams& params, double t, const Eigen::VectorXd& e_vec);

// k = phi / (1 - (phi e)^2), the original scalar funnel gain
double classic_gain(double phi_t, double e);

double dist_lambda(double z, double lambda);

struct GainStep {
  Eigen::VectorXd u;
  double k_dot = 0.0;
};

// u = -k y, k' = ||y||^2
GainStep high_gain_step(double k, const Eigen::VectorXd& y);
// u = -k e, k' = ||e|| dist_lambda(||e||): adaptation freezes inside the tube
GainStep lambda_step(double k, const Eigen::VectorXd& e, double lambda);
// u = N(k) y, k' = ||y||^2 with the probing function N(k) = k^2 cos k
GainStep nussbaum_step(double k, const Eigen::VectorXd& y);
double nussbaum_N(double k);
// exact antiderivative of k^2 cos k, used to probe the sign-alternation means
double nussbaum_antiderivative(double k);

// dynamic output feedback through a linear input filter; derivative-free
struct FilterFc {
  DesignParams params;
  double mu = 1.0;
  int m = 1;

  void validate() const;

  struct Result {
    Eigen::VectorXd u;
    Eigen::VectorXd xi_dot;  // (r-1)m filter states
    double k = 0.0;
  };
  Result step(double t, const Eigen::VectorXd& e, const Eigen::VectorXd& xi) const;
};

// solves Q^T P + P Q = -R for the compensator coupling vector p = (1, -P4^{-1} P2^T)
Eigen::VectorXd precomp_design(const Eigen::VectorXd& q, const Eigen::MatrixXd& R);

// companion-like matrix with q in the first column and ones on the superdiagonal
Eigen::MatrixXd precomp_Q_matrix(const Eigen::VectorXd& q);

// admissible plant/compensator gain mismatch for the cascade theorem (r >= 3)
double precomp_mismatch_bound(int r, double rho);

// one funnel pre-compensator: state (xi_1..xi_r), each block of size m
struct PrecompStage {
  Eigen::VectorXd p, q;
  Eigen::MatrixXd Gamma_tilde;
  FunnelFunction phi = FunnelFunction::constant_reciprocal(1.0);
  int r = 1;
  int m = 1;

  void validate() const;

  struct Deriv {
    Eigen::VectorXd xi_dot;
    double k = 0.0;
  };
  Deriv step(double t, const Eigen::VectorXd& y_prev, const Eigen::VectorXd& xi,
             const Eigen::VectorXd& u) const;
};

// chain of r-1 pre-compensators; the output z = xi_{r-1,1} and its first r-1
// derivatives are computable from the cascade's own right-hand sides
struct PrecompCascade {
  std::vector<PrecompStage> stages;
  int r = 2;
  int m = 1;

  void validate() const;
  int state_dim() const { return static_cast<int>(stages.size()) * r * m; }

  struct Flow {
    Eigen::VectorXd state_dot;
    std::vector<double> gains;
  };
  Flow flow(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& u,
            const Eigen::VectorXd& state) const;

  // z, z', ..., z^{(r-1)} reconstructed by Taylor propagation through the
  // stage dynamics (only the measured y value enters, never its derivatives)
  std::vector<Eigen::VectorXd> surrogates(double t, const Eigen::VectorXd& y,
                                          const Eigen::VectorXd& state) const;
};

// error-cascade controller u = -k_{r-1} e_{r-1} with e_i = e'_{i-1} + k_{i-1} e_{i-1},
// the intermediate derivatives resolved symbolically via truncated Taylor series
struct NonBackstepFc {
  std::vector<FunnelFunction> phis;  // phi_0..phi_{r-1}, stage i needs C^{r-i}
  int r = 1;
  int m = 1;

  void validate() const;

  struct Stages {
    std::vector<Eigen::VectorXd> e;  // e_0..e_{r-1} values
    std::vector<double> k;           // k_0..k_{r-1}
    Eigen::VectorXd u;
  };
  Stages stages(double t, const std::vector<Eigen::VectorXd>& e_derivs) const;
  Eigen::VectorXd control(double t, const std::vector<Eigen::VectorXd>& e_derivs) const;
};

// proportional-derivative law with separate funnels on e and e'
struct PdFunnel {
  FunnelFunction phi0 = FunnelFunction::constant_reciprocal(1.0);
  FunnelFunction phi1 = FunnelFunction::constant_reciprocal(1.0);
  bool modified = false;  // u = -k0^2 e - k0 k1 e' instead of -k0^2 e - k1 e'

  double control(double t, double e, double e_dot) const;
};

// componentwise log-ratio transformation ln((1+s)/(1-s))
double tf_log_ratio(double s);

// backstepping-style prescribed performance controller over the state chain
struct Ppc {
  std::vector<double> k;             // stage gains k_1..k_r
  std::vector<FunnelFunction> phi;   // stage funnels
  int r = 1;
  int m = 1;

  void validate() const;
  Eigen::VectorXd control(double t, const std::vector<Eigen::VectorXd>& x,
                          const Eigen::VectorXd& y_ref) const;
};

// radial clamp onto the ball of radius u_hat
Eigen::VectorXd saturate(const Eigen::VectorXd& v, double u_hat);

// classic funnel law with the input passed through the clamp
Eigen::VectorXd saturated_fc(const FunnelFunction& phi, double u_hat, double t,
                             const Eigen::VectorXd& e);

struct FeasibilityReport {
  bool feasible = false;
  double lhs = 0.0;  // available control authority c b u_hat
  double rhs = 0.0;  // demand from plant drift, funnel motion, and reference
};

// a-priori inequality deciding whether the saturated controller can keep the
// error inside the funnel, from declared sup-norms (not sampled estimates)
FeasibilityReport feasibility_check(double a, double cb, double u_hat, double sup_psi,
                                    double sup_psi_dot, double sup_yref,
                                    double sup_yref_dot);

// input-constrained funnel controller with a self-adjusting boundary psi
struct Icfc {
  double u_hat = 1.0;
  double alpha_d = 1.0;
  double beta_d = 1.0;
  double psi0 = 2.0;  // initial boundary, must exceed beta_d/alpha_d

  void validate() const;

  struct Result {
    Eigen::VectorXd u;
    double psi_dot = 0.0;
    double k = 0.0;
    double kappa = 0.0;  // norm of the clamped-away part of the raw input
  };
  Result step(double t, const Eigen::VectorXd& e, double psi) const;
};

// two-component law for systems with an algebraically-constrained output block
struct DaeFc {
  DesignParams params;  // drives the differential block u_I
  FunnelFunction phi_II = FunnelFunction::constant_reciprocal(1.0);
  double k_hat = 1.0;
  int ell = 1;  // size of the differential output block
  int m = 1;

  void validate() const;

  struct Result {
    Eigen::VectorXd u_I, u_II;
  };
  // e_I stacks the feedback vector of the differential block (r*ell entries)
  Result control(double t, const Eigen::VectorXd& e_I, const Eigen::VectorXd& e_II) const;
};

}  // namespace fc
