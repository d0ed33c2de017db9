#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fc/errors.hpp"

namespace fc {

// Time-varying weight phi whose reciprocal 1/phi is the radius of the
// performance tube around the reference: the tracked error must satisfy
// phi(t)*||e(t)|| < 1. Families are named after the shape of the radius.
enum class FunnelFamily { ConstantReciprocal, ExpDecayReciprocal, LinearRamp, Custom };

// Asymptotics a caller must declare for a custom funnel so that class
// membership can be decided; the named families carry these intrinsically.
struct CustomFunnelTraits {
  bool bounded = false;          // sup_t phi(t) finite
  bool liminf_positive = false;  // liminf_{t->inf} phi(t) > 0
  bool zero_at_zero = false;     // phi(0) = 0, i.e. any initial error admissible
  int smoothness = 0;            // highest derivative order eval supports
};

class FunnelFunction {
 public:
  // radius 1/phi(t) = c
  static FunnelFunction constant_reciprocal(double c);
  // radius 1/phi(t) = a*exp(-b*t) + c
  static FunnelFunction exp_decay_reciprocal(double a, double b, double c);
  // phi(t) = min(t/T, 1)/eps; phi(0) = 0 so the initial radius is unbounded
  static FunnelFunction linear_ramp(double eps, double T);
  // user-supplied (t, order) -> d^order/dt^order phi(t); traits optional but
  // required by any class-membership query
  static FunnelFunction custom(std::function<double(double, int)> eval,
                               std::optional<CustomFunnelTraits> traits = std::nullopt);

  // order-th derivative of phi at t >= 0
  double phi(double t, int order = 0) const;
  // order-th derivative of the radius 1/phi (may be +inf where phi = 0)
  double psi(double t, int order = 0) const;

  // highest order phi() accepts; for piecewise families this includes orders
  // that only exist almost everywhere
  int max_derivative_order() const { return max_order_; }
  // highest k for which the function is C^k on all of [0, inf)
  int smoothness() const { return smoothness_; }
  bool zero_at_zero() const { return zero_at_zero_; }
  bool bounded() const { return bounded_; }
  bool liminf_positive() const { return liminf_positive_; }
  bool has_traits() const { return has_traits_; }

  // declared envelope of the radius, used by feasibility estimates
  double sup_psi() const;      // sup_t 1/phi(t), +inf when unbounded
  double sup_psi_dot() const;  // sup_t |d/dt 1/phi(t)|, +inf when unbounded

  // same funnel with phi multiplied by factor > 0 (radius divided by it);
  // named families stay in their family
  FunnelFunction scaled(double factor) const;

  FunnelFamily family() const { return family_; }
  const std::vector<double>& params() const { return params_; }

 private:
  FunnelFunction() = default;

  FunnelFamily family_ = FunnelFamily::Custom;
  std::vector<double> params_;
  std::function<double(double, int)> eval_;
  int max_order_ = 0;
  int smoothness_ = 0;
  bool zero_at_zero_ = false;
  bool bounded_ = false;
  bool liminf_positive_ = false;
  bool has_traits_ = false;
};

struct FunnelClassReport {
  bool in_phi = false;    // admissible weight: positive after 0, controlled slope,
                          // radius eventually bounded
  bool in_phi_r = false;  // additionally r-times differentiable with phi..phi^(r) bounded
  int r = 0;
  double min_phi_tail = 0.0;    // smallest phi on the trailing half of the grid
  double lipschitz_c = 0.0;     // smallest c with |phi'| <= c*(1+phi) on the grid
  double sup_derivative = 0.0;  // largest |phi^(i)|, i <= r, seen on the grid
  std::string detail;           // reason for the first failed check, empty if none
};

// Grid-based membership test over [0, horizon]. Custom funnels without
// declared traits raise class_undecidable.
FunnelClassReport check_class(const FunnelFunction& f, int r, double horizon,
                              int grid_points = 10000);

struct Phi2PairReport {
  bool ok = false;
  double delta = 0.0;  // grid infimum of 1/phi1(t) + d/dt (1/phi0)(t)
};

// Compatibility condition for proportional-derivative funnel pairs: the sum of
// the velocity radius and the slope of the position radius must stay above
// some delta > 0.
Phi2PairReport check_phi2_pair(const FunnelFunction& phi0, const FunnelFunction& phi1,
                               double horizon, int grid_points = 10000);

}  // namespace fc
