#include "fc/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// named smooth families are analytic; cap derivative queries at a depth that
// comfortably covers every controller in the library
constexpr int kSmoothOrderCap = 16;
constexpr int kConstantOrderCap = 64;

// derivatives of 1/f from derivatives of f via the reciprocal power series:
// with f_j = f^(j)/j!, the coefficients g of 1/f obey
//   g_0 = 1/f_0,  g_k = -(1/f_0) * sum_{j=1..k} f_j g_{k-j}
double reciprocal_derivative(const std::vector<double>& fd, int order) {
  std::vector<double> fc_(order + 1), g(order + 1);
  double fact = 1.0;
  for (int j = 0; j <= order; ++j) {
    if (j > 0) fact *= j;
    fc_[j] = fd[j] / fact;
  }
  g[0] = 1.0 / fc_[0];
  for (int k = 1; k <= order; ++k) {
    double s = 0.0;
    for (int j = 1; j <= k; ++j) s += fc_[j] * g[k - j];
    g[k] = -g[0] * s;
  }
  fact = 1.0;
  for (int j = 1; j <= order; ++j) fact *= j;
  return g[order] * fact;
}

}  // namespace

FunnelFunction FunnelFunction::constant_reciprocal(double c) {
  require(c > 0.0 && std::isfinite(c), Errc::invalid_argument,
          "constant_reciprocal: radius must be positive and finite");
  FunnelFunction f;
  f.family_ = FunnelFamily::ConstantReciprocal;
  f.params_ = {c};
  f.max_order_ = kConstantOrderCap;
  f.smoothness_ = kConstantOrderCap;
  f.bounded_ = true;
  f.liminf_positive_ = true;
  f.has_traits_ = true;
  return f;
}

FunnelFunction FunnelFunction::exp_decay_reciprocal(double a, double b, double c) {
  require(a >= 0.0 && b > 0.0 && c > 0.0 && std::isfinite(a + b + c), Errc::invalid_argument,
          "exp_decay_reciprocal: needs a >= 0, b > 0, c > 0");
  FunnelFunction f;
  f.family_ = FunnelFamily::ExpDecayReciprocal;
  f.params_ = {a, b, c};
  f.max_order_ = kSmoothOrderCap;
  f.smoothness_ = kSmoothOrderCap;
  f.bounded_ = true;          // phi <= 1/c
  f.liminf_positive_ = true;  // phi -> 1/c
  f.has_traits_ = true;
  return f;
}

FunnelFunction FunnelFunction::linear_ramp(double eps, double T) {
  require(eps > 0.0 && T > 0.0 && std::isfinite(eps + T), Errc::invalid_argument,
          "linear_ramp: needs eps > 0, T > 0");
  FunnelFunction f;
  f.family_ = FunnelFamily::LinearRamp;
  f.params_ = {eps, T};
  f.max_order_ = 1;   // slope exists except at the single kink
  f.smoothness_ = 0;  // not C^1 at t = T
  f.zero_at_zero_ = true;
  f.bounded_ = true;  // phi <= 1/eps
  f.liminf_positive_ = true;
  f.has_traits_ = true;
  return f;
}

FunnelFunction FunnelFunction::custom(std::function<double(double, int)> eval,
                                      std::optional<CustomFunnelTraits> traits) {
  require(static_cast<bool>(eval), Errc::invalid_argument, "custom funnel: empty callable");
  FunnelFunction f;
  f.family_ = FunnelFamily::Custom;
  f.eval_ = std::move(eval);
  if (traits) {
    f.max_order_ = traits->smoothness;
    f.smoothness_ = traits->smoothness;
    f.zero_at_zero_ = traits->zero_at_zero;
    f.bounded_ = traits->bounded;
    f.liminf_positive_ = traits->liminf_positive;
    f.has_traits_ = true;
  }
  return f;
}

double FunnelFunction::phi(double t, int order) const {
  require(t >= 0.0 && std::isfinite(t), Errc::invalid_argument, "funnel evaluated at t < 0");
  require(order >= 0, Errc::invalid_argument, "negative derivative order");
  if (order > max_order_) {
    std::ostringstream os;
    os << "funnel derivative of order " << order << " unavailable (family supports "
       << max_order_ << ")";
    fail(Errc::unsupported_derivative, os.str());
  }
  switch (family_) {
    case FunnelFamily::ConstantReciprocal:
      return order == 0 ? 1.0 / params_[0] : 0.0;
    case FunnelFamily::ExpDecayReciprocal: {
      const double a = params_[0], b = params_[1], c = params_[2];
      if (order == 0) return 1.0 / (a * std::exp(-b * t) + c);
      std::vector<double> psid(order + 1);
      const double e = a * std::exp(-b * t);
      psid[0] = e + c;
      double pw = 1.0;
      for (int k = 1; k <= order; ++k) {
        pw *= -b;
        psid[k] = pw * e;
      }
      return reciprocal_derivative(psid, order);
    }
    case FunnelFamily::LinearRamp: {
      const double eps = params_[0], T = params_[1];
      if (order == 0) return std::min(t / T, 1.0) / eps;
      return t < T ? 1.0 / (eps * T) : 0.0;
    }
    case FunnelFamily::Custom:
      return eval_(t, order);
  }
  fail(Errc::invalid_argument, "unreachable funnel family");
}

double FunnelFunction::psi(double t, int order) const {
  require(t >= 0.0 && std::isfinite(t), Errc::invalid_argument, "funnel evaluated at t < 0");
  require(order >= 0, Errc::invalid_argument, "negative derivative order");
  switch (family_) {
    case FunnelFamily::ConstantReciprocal:
      return order == 0 ? params_[0] : 0.0;
    case FunnelFamily::ExpDecayReciprocal: {
      const double a = params_[0], b = params_[1], c = params_[2];
      const double e = a * std::exp(-b * t);
      if (order == 0) return e + c;
      return std::pow(-b, order) * e;
    }
    case FunnelFamily::LinearRamp: {
      const double eps = params_[0], T = params_[1];
      if (order == 0) return t == 0.0 ? kInf : eps * std::max(T / t, 1.0);
      if (order == 1) {
        if (t == 0.0) return -kInf;
        return t < T ? -eps * T / (t * t) : 0.0;
      }
      fail(Errc::unsupported_derivative, "linear_ramp radius has one derivative");
    }
    case FunnelFamily::Custom: {
      if (order > max_order_)
        fail(Errc::unsupported_derivative, "custom funnel lacks the requested derivative");
      const double p0 = eval_(t, 0);
      if (order == 0) return p0 == 0.0 ? kInf : 1.0 / p0;
      require(p0 != 0.0, Errc::invalid_argument, "radius derivative undefined where phi = 0");
      std::vector<double> pd(order + 1);
      for (int k = 0; k <= order; ++k) pd[k] = eval_(t, k);
      return reciprocal_derivative(pd, order);
    }
  }
  fail(Errc::invalid_argument, "unreachable funnel family");
}

double FunnelFunction::sup_psi() const {
  switch (family_) {
    case FunnelFamily::ConstantReciprocal:
      return params_[0];
    case FunnelFamily::ExpDecayReciprocal:
      return params_[0] + params_[2];
    case FunnelFamily::LinearRamp:
    case FunnelFamily::Custom:
      return kInf;
  }
  return kInf;
}

double FunnelFunction::sup_psi_dot() const {
  switch (family_) {
    case FunnelFamily::ConstantReciprocal:
      return 0.0;
    case FunnelFamily::ExpDecayReciprocal:
      return params_[0] * params_[1];
    case FunnelFamily::LinearRamp:
    case FunnelFamily::Custom:
      return kInf;
  }
  return kInf;
}

FunnelFunction FunnelFunction::scaled(double factor) const {
  require(factor > 0.0 && std::isfinite(factor), Errc::invalid_argument,
          "funnel scale factor must be positive");
  switch (family_) {
    case FunnelFamily::ConstantReciprocal:
      return constant_reciprocal(params_[0] / factor);
    case FunnelFamily::ExpDecayReciprocal:
      return exp_decay_reciprocal(params_[0] / factor, params_[1], params_[2] / factor);
    case FunnelFamily::LinearRamp:
      return linear_ramp(params_[0] / factor, params_[1]);
    case FunnelFamily::Custom: {
      FunnelFunction f = *this;
      auto base = eval_;
      f.eval_ = [base, factor](double t, int order) { return factor * base(t, order); };
      return f;
    }
  }
  fail(Errc::invalid_argument, "unreachable funnel family");
}

FunnelClassReport check_class(const FunnelFunction& f, int r, double horizon, int grid_points) {
  require(r >= 0, Errc::invalid_argument, "check_class: r must be >= 0");
  require(horizon > 0.0 && std::isfinite(horizon), Errc::invalid_argument,
          "check_class: horizon must be positive");
  require(grid_points >= 2, Errc::invalid_argument, "check_class: need at least 2 grid points");
  require(f.has_traits(), Errc::class_undecidable,
          "custom funnel without declared asymptotics; class membership undecidable");

  FunnelClassReport rep;
  rep.r = r;

  bool positive = true;
  double min_tail = kInf;
  double lip = 0.0;
  const bool slope_available = f.max_derivative_order() >= 1;
  for (int i = 0; i < grid_points; ++i) {
    const double t = horizon * static_cast<double>(i) / (grid_points - 1);
    const double p = f.phi(t);
    if (!std::isfinite(p) || p < 0.0 || (t > 0.0 && p == 0.0)) {
      positive = false;
      if (rep.detail.empty()) rep.detail = "phi must be positive for t > 0";
    }
    if (t >= horizon / 2) min_tail = std::min(min_tail, p);
    if (slope_available) lip = std::max(lip, std::abs(f.phi(t, 1)) / (1.0 + p));
  }
  rep.min_phi_tail = min_tail;
  rep.lipschitz_c = lip;

  const bool liminf_ok = f.liminf_positive() && min_tail > 0.0;
  if (!liminf_ok && rep.detail.empty()) rep.detail = "phi must stay away from zero eventually";
  if (!slope_available && rep.detail.empty()) rep.detail = "slope of phi unavailable";
  rep.in_phi = positive && liminf_ok && slope_available;

  if (f.family() == FunnelFamily::Custom) {
    rep.in_phi_r = false;
    if (rep.detail.empty()) rep.detail = "custom funnels are not accepted for the smooth class";
    return rep;
  }
  if (f.smoothness() < r) {
    rep.in_phi_r = false;
    if (rep.detail.empty()) rep.detail = "family is not C^r";
    return rep;
  }
  double supd = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double t = horizon * static_cast<double>(i) / (grid_points - 1);
    for (int k = 0; k <= r; ++k) supd = std::max(supd, std::abs(f.phi(t, k)));
  }
  rep.sup_derivative = supd;
  rep.in_phi_r = positive && liminf_ok && f.bounded() && std::isfinite(supd);
  if (!rep.in_phi_r && rep.detail.empty()) rep.detail = "phi or a derivative is unbounded";
  return rep;
}

Phi2PairReport check_phi2_pair(const FunnelFunction& phi0, const FunnelFunction& phi1,
                               double horizon, int grid_points) {
  require(horizon > 0.0 && std::isfinite(horizon), Errc::invalid_argument,
          "check_phi2_pair: horizon must be positive");
  require(grid_points >= 2, Errc::invalid_argument, "check_phi2_pair: need >= 2 grid points");
  Phi2PairReport rep;
  double delta = kInf;
  for (int i = 0; i < grid_points; ++i) {
    const double t = horizon * static_cast<double>(i) / (grid_points - 1);
    delta = std::min(delta, phi1.psi(t, 0) + phi0.psi(t, 1));
  }
  rep.delta = delta;
  rep.ok = std::isfinite(delta) && delta > 0.0;
  return rep;
}

}  // namespace fc
