#include "fc/controllers.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <type_traits>
#include <utility>

namespace fc {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Forward-mode dual numbers. Nesting Dual<Dual<...>> yields higher derivatives
// of the filter recursion without hand-deriving its Jacobians.
// ---------------------------------------------------------------------------

template <class T>
struct Dual {
  T v{};
  T d{};
  Dual() = default;
  Dual(double x) : v(x), d(0.0) {}  // literals lift to constants
  Dual(T value, T deriv) : v(std::move(value)), d(std::move(deriv)) {}
};

template <class T>
struct DualDepth {
  static constexpr int value = 0;
};
template <class T>
struct DualDepth<Dual<T>> {
  static constexpr int value = 1 + DualDepth<T>::value;
};

// the filter recursion differentiates r-2 times, so this caps supported r
constexpr int kMaxDualDepth = 3;

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.v + b.v, a.d + b.d};
}
template <class T>
Dual<T> operator+(const Dual<T>& a, double b) {
  return {a.v + b, a.d};
}
template <class T>
Dual<T> operator+(double a, const Dual<T>& b) {
  return {a + b.v, b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.v - b.v, a.d - b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, double b) {
  return {a.v - b, a.d};
}
template <class T>
Dual<T> operator-(double a, const Dual<T>& b) {
  return {a - b.v, -b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a) {
  return {-a.v, -a.d};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.v * b.d + a.d * b.v};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, double b) {
  return {a.v * b, a.d * b};
}
template <class T>
Dual<T> operator*(double a, const Dual<T>& b) {
  return {a * b.v, a * b.d};
}
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}

template <class T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.v), cos(x.v) * x.d};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.v), -(sin(x.v) * x.d)};
}
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  T root = sqrt(x.v);
  return {root, x.d / (2.0 * root)};
}
template <class T>
Dual<T> pow(const Dual<T>& x, double c) {
  using std::pow;
  return {pow(x.v, c), c * pow(x.v, c - 1.0) * x.d};
}

template <class S>
using SVec = std::vector<S>;

template <class S>
S svec_norm2(const SVec<S>& x) {
  S acc(0.0);
  for (const auto& xi : x) acc = acc + xi * xi;
  return acc;
}

// ---------------------------------------------------------------------------
// Filter-controller recursion, evaluated generically so dual numbers can flow
// through it. The scalar configuration is shared across all nesting levels.
// ---------------------------------------------------------------------------

struct FilterCfg {
  SurjectionMap::Kind nkind;
  const SurjectionMap* nmap;
  AlphaMap::Kind akind;
  double beta;
  double mu;
};

template <class S>
S surjection_value(const FilterCfg& cfg, const S& s) {
  switch (cfg.nkind) {
    case SurjectionMap::Kind::NegIdentity:
      return -s;
    case SurjectionMap::Kind::PosIdentity:
      return s;
    case SurjectionMap::Kind::SSinS: {
      using std::sin;
      return s * sin(s);
    }
    case SurjectionMap::Kind::Custom:
      if constexpr (std::is_same_v<S, double>) {
        return cfg.nmap->fn(s);
      } else {
        fail(Errc::unsupported_derivative,
             "custom direction map cannot be differentiated by the filter recursion");
      }
  }
  fail(Errc::invalid_argument, "unknown direction map");
}

template <class S>
S surjection_slope(const FilterCfg& cfg, const S& s) {
  switch (cfg.nkind) {
    case SurjectionMap::Kind::NegIdentity:
      return S(-1.0);
    case SurjectionMap::Kind::PosIdentity:
      return S(1.0);
    case SurjectionMap::Kind::SSinS: {
      using std::cos;
      using std::sin;
      return sin(s) + s * cos(s);
    }
    case SurjectionMap::Kind::Custom:
      if constexpr (std::is_same_v<S, double>) {
        require(static_cast<bool>(cfg.nmap->dfn), Errc::unsupported_derivative,
                "custom direction map has no declared derivative");
        return cfg.nmap->dfn(s);
      } else {
        fail(Errc::unsupported_derivative,
             "custom direction map cannot be differentiated by the filter recursion");
      }
  }
  fail(Errc::invalid_argument, "unknown direction map");
}

template <class S>
S gain_rate_generic(const FilterCfg& cfg, const S& kappa) {
  if (cfg.akind == AlphaMap::Kind::Reciprocal) return kappa * kappa;
  using std::pow;
  return cfg.beta * pow(kappa, (cfg.beta + 1.0) / cfg.beta);
}

template <class S>
SVec<S> gamma_level(int level, const S& kappa, const SVec<S>& v,
                    const std::vector<SVec<S>>& xi, const FilterCfg& cfg);

// squared Frobenius norm of the Jacobian of gamma_level w.r.t. all of its
// scalar arguments (kappa, v, xi_1..xi_{level-1}), obtained by seeding one
// dual direction per argument
template <class S>
S djac_norm2(int level, const S& kappa, const SVec<S>& v, const std::vector<SVec<S>>& xi,
             const FilterCfg& cfg) {
  if (level == 1) {
    S np = surjection_slope(cfg, kappa);
    S n = surjection_value(cfg, kappa);
    return np * np * svec_norm2(v) + n * n;
  }
  if constexpr (DualDepth<S>::value >= kMaxDualDepth) {
    fail(Errc::invalid_argument, "filter controller depth exceeds the supported recursion");
  } else {
    using D = Dual<S>;
    D dk(kappa, S(0.0));
    SVec<D> dv;
    dv.reserve(v.size());
    for (const auto& c : v) dv.emplace_back(c, S(0.0));
    std::vector<SVec<D>> dxi;
    for (int b = 0; b + 1 < level; ++b) {
      SVec<D> blk;
      blk.reserve(xi[b].size());
      for (const auto& c : xi[b]) blk.emplace_back(c, S(0.0));
      dxi.push_back(std::move(blk));
    }
    S total(0.0);
    auto probe = [&](D& slot) {
      slot.d = S(1.0);
      SVec<D> out = gamma_level(level, dk, dv, dxi, cfg);
      slot.d = S(0.0);
      for (const auto& o : out) total = total + o.d * o.d;
    };
    probe(dk);
    for (auto& c : dv) probe(c);
    for (auto& blk : dxi)
      for (auto& c : blk) probe(c);
    return total;
  }
}

template <class S>
SVec<S> gamma_level(int level, const S& kappa, const SVec<S>& v,
                    const std::vector<SVec<S>>& xi, const FilterCfg& cfg) {
  if (level == 1) {
    S n = surjection_value(cfg, kappa);
    SVec<S> out;
    out.reserve(v.size());
    for (const auto& c : v) out.push_back(n * c);
    return out;
  }
  SVec<S> prev = gamma_level(level - 1, kappa, v, xi, cfg);
  S dn2 = djac_norm2(level - 1, kappa, v, xi, cfg);
  S stacked(0.0);
  for (int b = 0; b + 1 < level; ++b) stacked = stacked + svec_norm2(xi[b]);
  using std::sqrt;
  S amp = gain_rate_generic(cfg, kappa) * (1.0 + sqrt(stacked));
  S factor = amp * amp * dn2;
  double mu_pow = std::pow(cfg.mu, 2.0 - level);
  const SVec<S>& tap = xi[level - 2];
  SVec<S> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(prev[i] - factor * (mu_pow * tap[i] - prev[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Truncated Taylor arithmetic in the time variable, used to resolve the
// symbolic derivatives of the error-cascade and pre-compensator laws.
// ---------------------------------------------------------------------------

struct TScalar {
  std::vector<double> c;  // c[j] multiplies tau^j
};
struct TVector {
  std::vector<VectorXd> c;
};

double ts_at(const TScalar& a, int j) { return j < static_cast<int>(a.c.size()) ? a.c[j] : 0.0; }

TScalar ts_mul(const TScalar& a, const TScalar& b, int order) {
  TScalar out;
  out.c.assign(order + 1, 0.0);
  for (int i = 0; i <= order; ++i)
    for (int j = 0; i + j <= order; ++j) out.c[i + j] += ts_at(a, i) * ts_at(b, j);
  return out;
}

TScalar ts_inner(const TVector& a, const TVector& b, int order) {
  TScalar out;
  out.c.assign(order + 1, 0.0);
  int na = static_cast<int>(a.c.size()), nb = static_cast<int>(b.c.size());
  for (int i = 0; i <= order && i < na; ++i)
    for (int j = 0; i + j <= order; ++j)
      if (j < nb) out.c[i + j] += a.c[i].dot(b.c[j]);
  return out;
}

// series h with g*h = 1; g.c[0] must be nonzero (guarded by the funnel check)
TScalar ts_reciprocal(const TScalar& g, int order) {
  TScalar h;
  h.c.assign(order + 1, 0.0);
  h.c[0] = 1.0 / g.c[0];
  for (int j = 1; j <= order; ++j) {
    double acc = 0.0;
    for (int i = 1; i <= j; ++i) acc += ts_at(g, i) * h.c[j - i];
    h.c[j] = -acc * h.c[0];
  }
  return h;
}

TVector tv_derivative(const TVector& x) {
  TVector out;
  for (std::size_t j = 1; j < x.c.size(); ++j) out.c.push_back(static_cast<double>(j) * x.c[j]);
  return out;
}

TVector tv_scale(const TScalar& s, const TVector& x, int order) {
  TVector out;
  if (x.c.empty()) return out;
  int dim = static_cast<int>(x.c[0].size());
  out.c.assign(order + 1, VectorXd::Zero(dim));
  int nx = static_cast<int>(x.c.size());
  for (int i = 0; i <= order; ++i)
    for (int j = 0; i + j <= order; ++j)
      if (j < nx) out.c[i + j] += ts_at(s, i) * x.c[j];
  return out;
}

TScalar ts_funnel(const FunnelFunction& f, double t, int order) {
  TScalar out;
  out.c.resize(order + 1);
  double fact = 1.0;
  for (int j = 0; j <= order; ++j) {
    out.c[j] = f.phi(t, j) / fact;
    fact *= static_cast<double>(j + 1);
  }
  return out;
}

std::string breach_message(const char* what, double weight, double norm) {
  std::ostringstream os;
  os << what << ": phi*||e|| = " << weight * norm << " is not strictly below 1";
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// design parameter maps
// ---------------------------------------------------------------------------

AlphaMap AlphaMap::reciprocal() { return {}; }

AlphaMap AlphaMap::power_reciprocal(double beta) {
  require(beta > 0.0, Errc::invalid_argument, "power exponent must be positive");
  AlphaMap a;
  a.kind = Kind::PowerReciprocal;
  a.beta = beta;
  return a;
}

double AlphaMap::operator()(double s) const {
  require(s >= 0.0 && s < 1.0, Errc::domain_violation, "gain map argument must lie in [0, 1)");
  if (kind == Kind::Reciprocal) return 1.0 / (1.0 - s);
  return std::pow(1.0 - s, -beta);
}

double AlphaMap::gain_rate(double kappa) const {
  require(kappa >= 1.0 - 1e-9, Errc::invalid_argument, "gain map values are at least 1");
  if (kind == Kind::Reciprocal) return kappa * kappa;
  return beta * std::pow(kappa, (beta + 1.0) / beta);
}

SurjectionMap SurjectionMap::neg_identity() {
  SurjectionMap n;
  n.kind = Kind::NegIdentity;
  return n;
}
SurjectionMap SurjectionMap::pos_identity() {
  SurjectionMap n;
  n.kind = Kind::PosIdentity;
  return n;
}
SurjectionMap SurjectionMap::s_sin_s() {
  SurjectionMap n;
  n.kind = Kind::SSinS;
  return n;
}
SurjectionMap SurjectionMap::custom(std::function<double(double)> fn,
                                    std::function<double(double)> dfn) {
  require(static_cast<bool>(fn), Errc::invalid_argument, "custom direction map needs a callable");
  SurjectionMap n;
  n.kind = Kind::Custom;
  n.fn = std::move(fn);
  n.dfn = std::move(dfn);
  return n;
}

double SurjectionMap::operator()(double s) const {
  switch (kind) {
    case Kind::NegIdentity:
      return -s;
    case Kind::PosIdentity:
      return s;
    case Kind::SSinS:
      return s * std::sin(s);
    case Kind::Custom:
      return fn(s);
  }
  fail(Errc::invalid_argument, "unknown direction map");
}

double SurjectionMap::derivative(double s) const {
  switch (kind) {
    case Kind::NegIdentity:
      return -1.0;
    case Kind::PosIdentity:
      return 1.0;
    case Kind::SSinS:
      return std::sin(s) + s * std::cos(s);
    case Kind::Custom:
      require(static_cast<bool>(dfn), Errc::unsupported_derivative,
              "custom direction map has no declared derivative");
      return dfn(s);
  }
  fail(Errc::invalid_argument, "unknown direction map");
}

bool SurjectionMap::differentiable() const {
  return kind != Kind::Custom || static_cast<bool>(dfn);
}

void DesignParams::validate() const {
  require(r >= 1, Errc::invalid_argument, "relative degree must be at least 1");
  require(r_hat >= 1 && r_hat <= r, Errc::invalid_argument,
          "derivative cutoff must lie in [1, r]");
  if (r_hat < r) {
    require(phi.bounded(), Errc::invalid_argument,
            "funnel weight must be bounded when output derivatives replace error derivatives");
  }
}

// ---------------------------------------------------------------------------
// static feedback maps
// ---------------------------------------------------------------------------

VectorXd gamma(const VectorXd& w, const AlphaMap& alpha) {
  double n = w.norm();
  require(n < kUnitGuard, Errc::domain_violation,
          "gain map argument must stay strictly inside the unit ball");
  return alpha(n * n) * w;
}

std::optional<VectorXd> rho_r(const VectorXd& eta, int r, int m, const AlphaMap& alpha) {
  require(r >= 1 && m >= 1, Errc::invalid_argument, "recursion needs r >= 1 and m >= 1");
  require(eta.size() == static_cast<Eigen::Index>(r) * m, Errc::invalid_argument,
          "stacked argument must have r*m entries");
  VectorXd w = eta.head(m);
  if (w.norm() >= kUnitGuard) return std::nullopt;
  for (int k = 1; k < r; ++k) {
    w = eta.segment(static_cast<Eigen::Index>(k) * m, m) + alpha(w.squaredNorm()) * w;
    if (w.norm() >= kUnitGuard) return std::nullopt;
  }
  return w;
}

VectorXd fc_output(const DesignParams& params, double t, const VectorXd& e_vec) {
  params.validate();
  require(e_vec.size() % params.r == 0, Errc::invalid_argument,
          "feedback vector must stack r blocks of equal size");
  int m = static_cast<int>(e_vec.size()) / params.r;
  double weight = params.phi.phi(t);
  auto w = rho_r(weight * e_vec, params.r, m, params.alpha);
  if (!w) fail(Errc::domain_violation, "scaled feedback vector left the admissible ball");
  return params.N(params.alpha(w->squaredNorm())) * (*w);
}

double classic_gain(double phi_t, double e) {
  require(phi_t >= 0.0, Errc::invalid_argument, "funnel weight must be nonnegative");
  double w = phi_t * std::abs(e);
  require(w < kUnitGuard, Errc::domain_violation,
          breach_message("funnel breached", phi_t, std::abs(e)));
  return phi_t / (1.0 - w * w);
}

double dist_lambda(double z, double lambda) {
  require(lambda > 0.0, Errc::invalid_argument, "tube radius must be positive");
  return std::max(std::abs(z) - lambda, 0.0);
}

GainStep high_gain_step(double k, const VectorXd& y) {
  GainStep g;
  g.u = -k * y;
  g.k_dot = y.squaredNorm();
  return g;
}

GainStep lambda_step(double k, const VectorXd& e, double lambda) {
  GainStep g;
  g.u = -k * e;
  double ne = e.norm();
  g.k_dot = ne * dist_lambda(ne, lambda);
  return g;
}

GainStep nussbaum_step(double k, const VectorXd& y) {
  GainStep g;
  g.u = nussbaum_N(k) * y;
  g.k_dot = y.squaredNorm();
  return g;
}

double nussbaum_N(double k) { return k * k * std::cos(k); }

double nussbaum_antiderivative(double k) {
  return k * k * std::sin(k) + 2.0 * k * std::cos(k) - 2.0 * std::sin(k);
}

// ---------------------------------------------------------------------------
// filter controller
// ---------------------------------------------------------------------------

void FilterFc::validate() const {
  params.validate();
  require(m >= 1, Errc::invalid_argument, "output dimension must be at least 1");
  require(mu > 0.0, Errc::invalid_argument, "filter time constant must be positive");
  require(params.r <= kMaxDualDepth + 2, Errc::invalid_argument,
          "filter controller depth exceeds the supported recursion");
  if (params.r >= 2)
    require(params.N.differentiable(), Errc::invalid_argument,
            "filter controller needs a differentiable direction map");
  if (params.r >= 3)
    require(params.N.kind != SurjectionMap::Kind::Custom, Errc::invalid_argument,
            "filter controller with r >= 3 supports only the built-in direction maps");
}

FilterFc::Result FilterFc::step(double t, const VectorXd& e, const VectorXd& xi) const {
  validate();
  require(e.size() == m, Errc::invalid_argument, "error dimension mismatch");
  require(xi.size() == static_cast<Eigen::Index>(params.r - 1) * m, Errc::invalid_argument,
          "filter state must have (r-1)*m entries");
  double weight = params.phi.phi(t);
  VectorXd w = weight * e;
  double wn = w.norm();
  require(wn < kUnitGuard, Errc::domain_violation,
          breach_message("filter controller funnel breached", weight, e.norm()));
  double kappa = params.alpha(wn * wn);

  FilterCfg cfg{params.N.kind, &params.N, params.alpha.kind, params.alpha.beta, mu};
  SVec<double> v(w.data(), w.data() + w.size());
  std::vector<SVec<double>> blocks;
  for (int b = 0; b < params.r - 1; ++b) {
    const double* base = xi.data() + static_cast<std::ptrdiff_t>(b) * m;
    blocks.emplace_back(base, base + m);
  }

  SVec<double> u = gamma_level(params.r, kappa, v, blocks, cfg);
  Result res;
  res.k = kappa;
  res.u = Eigen::Map<const VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
  res.xi_dot.resize(xi.size());
  for (int b = 0; b < params.r - 1; ++b) {
    VectorXd next = (b + 1 < params.r - 1)
                        ? VectorXd(xi.segment(static_cast<Eigen::Index>(b + 1) * m, m))
                        : res.u;
    res.xi_dot.segment(static_cast<Eigen::Index>(b) * m, m) =
        -mu * xi.segment(static_cast<Eigen::Index>(b) * m, m) + next;
  }
  return res;
}

// ---------------------------------------------------------------------------
// funnel pre-compensator
// ---------------------------------------------------------------------------

MatrixXd precomp_Q_matrix(const VectorXd& q) {
  int r = static_cast<int>(q.size());
  require(r >= 1, Errc::invalid_argument, "coefficient vector must be nonempty");
  MatrixXd Q = MatrixXd::Zero(r, r);
  Q.col(0) = -q;
  for (int i = 0; i + 1 < r; ++i) Q(i, i + 1) = 1.0;
  return Q;
}

VectorXd precomp_design(const VectorXd& q, const MatrixXd& R) {
  int r = static_cast<int>(q.size());
  require(r >= 1, Errc::invalid_argument, "coefficient vector must be nonempty");
  for (int i = 0; i < r; ++i)
    require(q(i) > 0.0, Errc::invalid_argument, "compensator coefficients must be positive");
  require(R.rows() == r && R.cols() == r, Errc::invalid_argument,
          "weight matrix dimension mismatch");
  require((R - R.transpose()).norm() <= 1e-12 * std::max(1.0, R.norm()), Errc::invalid_argument,
          "weight matrix must be symmetric");
  require(Eigen::LLT<MatrixXd>(R).info() == Eigen::Success, Errc::invalid_argument,
          "weight matrix must be positive definite");

  MatrixXd Q = precomp_Q_matrix(q);
  Eigen::EigenSolver<MatrixXd> es(Q);
  require(es.eigenvalues().real().maxCoeff() < 0.0, Errc::invalid_argument,
          "coefficients must place all compensator poles in the open left half-plane");

  // Q^T P + P Q = -R via the Kronecker system (I (x) Q^T + Q^T (x) I) vec(P) = -vec(R)
  int n = r * r;
  MatrixXd K = MatrixXd::Zero(n, n);
  for (int blk = 0; blk < r; ++blk) K.block(blk * r, blk * r, r, r) += Q.transpose();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) K.block(i * r, j * r, r, r).diagonal().array() += Q(j, i);
  VectorXd vecR(n);
  for (int j = 0; j < r; ++j) vecR.segment(static_cast<Eigen::Index>(j) * r, r) = R.col(j);
  VectorXd vecP = K.partialPivLu().solve(-vecR);
  MatrixXd P(r, r);
  for (int j = 0; j < r; ++j) P.col(j) = vecP.segment(static_cast<Eigen::Index>(j) * r, r);
  P = 0.5 * (P + P.transpose()).eval();

  double resid = (Q.transpose() * P + P * Q + R).norm();
  require(resid <= 1e-10 * std::max(1.0, R.norm()), Errc::numerical_rank,
          "Lyapunov solve residual exceeds tolerance");
  require(Eigen::LLT<MatrixXd>(P).info() == Eigen::Success, Errc::numerical_rank,
          "Lyapunov solution is not positive definite");

  VectorXd p(r);
  p(0) = 1.0;
  if (r > 1) {
    MatrixXd P4 = P.block(1, 1, r - 1, r - 1);
    VectorXd P2t = P.block(0, 1, 1, r - 1).transpose();
    p.tail(r - 1) = -P4.llt().solve(P2t);
  }
  return p;
}

double precomp_mismatch_bound(int r, double rho) {
  require(r >= 3, Errc::invalid_argument, "the mismatch bound applies to chains of length >= 3");
  require(rho > 1.0, Errc::invalid_argument, "funnel scale ratio must exceed 1");
  double linear = (rho - 1.0) / static_cast<double>(r - 2);
  double geometric = rho / (4.0 * rho * rho * std::pow(rho + 1.0, r - 2) - 1.0);
  return std::min(linear, geometric);
}

void PrecompStage::validate() const {
  require(r >= 1 && m >= 1, Errc::invalid_argument, "stage needs r >= 1 and m >= 1");
  require(p.size() == r && q.size() == r, Errc::invalid_argument,
          "coupling vectors must have r entries");
  for (int i = 0; i < r; ++i)
    require(p(i) > 0.0 && q(i) > 0.0, Errc::invalid_argument,
            "coupling coefficients must be positive");
  require(Gamma_tilde.rows() == m && Gamma_tilde.cols() == m, Errc::invalid_argument,
          "input gain must be m x m");
  require(Eigen::FullPivLU<MatrixXd>(Gamma_tilde).isInvertible(), Errc::invalid_argument,
          "input gain must be invertible");
}

PrecompStage::Deriv PrecompStage::step(double t, const VectorXd& y_prev, const VectorXd& xi,
                                       const VectorXd& u) const {
  validate();
  require(y_prev.size() == m, Errc::invalid_argument, "stage input dimension mismatch");
  require(xi.size() == static_cast<Eigen::Index>(r) * m, Errc::invalid_argument,
          "stage state must have r*m entries");
  require(u.size() == m, Errc::invalid_argument, "control dimension mismatch");

  double weight = phi.phi(t);
  VectorXd err = y_prev - xi.head(m);
  double margin = weight * err.norm();
  require(margin < kUnitGuard, Errc::domain_violation,
          breach_message("pre-compensator funnel breached", weight, err.norm()));

  Deriv d;
  d.k = 1.0 / (1.0 - margin * margin);
  d.xi_dot.resize(xi.size());
  for (int i = 0; i < r; ++i) {
    VectorXd blk = (q(i) + p(i) * d.k) * err;
    if (i + 1 < r)
      blk += xi.segment(static_cast<Eigen::Index>(i + 1) * m, m);
    else
      blk += Gamma_tilde * u;
    d.xi_dot.segment(static_cast<Eigen::Index>(i) * m, m) = blk;
  }
  return d;
}

void PrecompCascade::validate() const {
  require(r >= 2 && m >= 1, Errc::invalid_argument, "cascade needs r >= 2 and m >= 1");
  require(static_cast<int>(stages.size()) == r - 1, Errc::invalid_argument,
          "cascade needs r-1 stages");
  for (const auto& st : stages) {
    require(st.r == r && st.m == m, Errc::invalid_argument,
            "all stages must share the cascade dimensions");
    st.validate();
  }
}

PrecompCascade::Flow PrecompCascade::flow(double t, const VectorXd& y, const VectorXd& u,
                                          const VectorXd& state) const {
  validate();
  require(y.size() == m, Errc::invalid_argument, "measurement dimension mismatch");
  require(state.size() == state_dim(), Errc::invalid_argument, "cascade state size mismatch");
  Flow f;
  f.state_dot.resize(state.size());
  VectorXd input = y;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    Eigen::Index off = static_cast<Eigen::Index>(s) * r * m;
    VectorXd xiv = state.segment(off, static_cast<Eigen::Index>(r) * m);
    auto d = stages[s].step(t, input, xiv, u);
    f.state_dot.segment(off, static_cast<Eigen::Index>(r) * m) = d.xi_dot;
    f.gains.push_back(d.k);
    input = xiv.head(m);
  }
  return f;
}

std::vector<VectorXd> PrecompCascade::surrogates(double t, const VectorXd& y,
                                                 const VectorXd& state) const {
  validate();
  require(y.size() == m, Errc::invalid_argument, "measurement dimension mismatch");
  require(state.size() == state_dim(), Errc::invalid_argument, "cascade state size mismatch");

  // Propagate truncated Taylor series stage by stage. Stage s only needs its
  // input to order s, so the chain terminates at the plain measurement value;
  // the control term cannot reach the coefficients read off at the end, which
  // is what makes z and its first r-1 derivatives computable from knowns.
  TVector input;
  input.c = {y};
  TVector output;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const PrecompStage& st = stages[s];
    int maxord = static_cast<int>(s) + 1;
    Eigen::Index off = static_cast<Eigen::Index>(s) * r * m;
    VectorXd xiv = state.segment(off, static_cast<Eigen::Index>(r) * m);

    TScalar weight = ts_funnel(st.phi, t, maxord - 1);
    double margin = weight.c[0] * (input.c[0] - xiv.head(m)).norm();
    require(margin < kUnitGuard, Errc::domain_violation,
            breach_message("pre-compensator funnel breached", weight.c[0],
                           (input.c[0] - xiv.head(m)).norm()));

    TVector X;
    X.c.assign(maxord + 1, VectorXd());
    X.c[0] = xiv;
    for (int j = 0; j < maxord; ++j) {
      TVector err;
      err.c.resize(j + 1);
      for (int a = 0; a <= j; ++a) {
        VectorXd ia = a < static_cast<int>(input.c.size()) ? input.c[a]
                                                           : VectorXd(VectorXd::Zero(m));
        err.c[a] = ia - X.c[a].head(m);
      }
      TScalar w2 = ts_mul(weight, weight, j);
      TScalar g = ts_mul(w2, ts_inner(err, err, j), j);
      for (auto& coef : g.c) coef = -coef;
      g.c[0] += 1.0;
      TScalar gain = ts_reciprocal(g, j);

      VectorXd rhs(static_cast<Eigen::Index>(r) * m);
      for (int row = 0; row < r; ++row) {
        VectorXd acc = VectorXd::Zero(m);
        for (int a = 0; a <= j; ++a) {
          double coef = st.p(row) * gain.c[a] + (a == 0 ? st.q(row) : 0.0);
          acc += coef * err.c[j - a];
        }
        if (row + 1 < r) acc += X.c[j].segment(static_cast<Eigen::Index>(row + 1) * m, m);
        rhs.segment(static_cast<Eigen::Index>(row) * m, m) = acc;
      }
      X.c[j + 1] = rhs / static_cast<double>(j + 1);
    }

    TVector next;
    next.c.resize(maxord + 1);
    for (int a = 0; a <= maxord; ++a) next.c[a] = X.c[a].head(m);
    input = next;
    if (s + 1 == stages.size()) output = next;
  }

  std::vector<VectorXd> z(r);
  double fact = 1.0;
  for (int i = 0; i < r; ++i) {
    z[i] = output.c[i] * fact;
    fact *= static_cast<double>(i + 1);
  }
  return z;
}

// ---------------------------------------------------------------------------
// error-cascade controller (derivative feedback, no filter, no compensator)
// ---------------------------------------------------------------------------

void NonBackstepFc::validate() const {
  require(r >= 1 && m >= 1, Errc::invalid_argument, "controller needs r >= 1 and m >= 1");
  require(static_cast<int>(phis.size()) == r, Errc::invalid_argument,
          "one funnel per cascade stage is required");
  for (int i = 0; i < r; ++i) {
    std::ostringstream os;
    os << "stage " << i << " funnel must be C^" << (r - i);
    require(phis[i].smoothness() >= r - i, Errc::invalid_argument, os.str());
  }
}

NonBackstepFc::Stages NonBackstepFc::stages(double t,
                                            const std::vector<VectorXd>& e_derivs) const {
  validate();
  require(static_cast<int>(e_derivs.size()) == r, Errc::invalid_argument,
          "needs e and its first r-1 derivatives");
  for (const auto& d : e_derivs)
    require(d.size() == m, Errc::invalid_argument, "error derivative dimension mismatch");

  TVector E;
  E.c.resize(r);
  double fact = 1.0;
  for (int j = 0; j < r; ++j) {
    E.c[j] = e_derivs[j] / fact;
    fact *= static_cast<double>(j + 1);
  }

  Stages out;
  for (int i = 0; i < r; ++i) {
    int ord = r - 1 - i;
    TScalar weight = ts_funnel(phis[i], t, ord);
    double norm0 = E.c[0].norm();
    if (weight.c[0] * norm0 >= kUnitGuard) {
      std::ostringstream os;
      os << "cascade stage " << i << ": " << breach_message("funnel breached", weight.c[0], norm0);
      fail(Errc::domain_violation, os.str());
    }
    TScalar g = ts_mul(ts_mul(weight, weight, ord), ts_inner(E, E, ord), ord);
    for (auto& coef : g.c) coef = -coef;
    g.c[0] += 1.0;
    TScalar gain = ts_reciprocal(g, ord);
    out.e.push_back(E.c[0]);
    out.k.push_back(gain.c[0]);
    if (i == r - 1) {
      out.u = -gain.c[0] * E.c[0];
      break;
    }
    TVector Ed = tv_derivative(E);
    TVector scaled = tv_scale(gain, E, ord - 1);
    TVector next;
    next.c.resize(ord);
    for (int j = 0; j < ord; ++j) next.c[j] = Ed.c[j] + scaled.c[j];
    E = next;
  }
  return out;
}

VectorXd NonBackstepFc::control(double t, const std::vector<VectorXd>& e_derivs) const {
  return stages(t, e_derivs).u;
}

// ---------------------------------------------------------------------------
// proportional-derivative, prescribed-performance, and saturated laws
// ---------------------------------------------------------------------------

double PdFunnel::control(double t, double e, double e_dot) const {
  double w0 = phi0.phi(t);
  double w1 = phi1.phi(t);
  require(w0 * std::abs(e) < kUnitGuard, Errc::domain_violation,
          breach_message("position funnel breached", w0, std::abs(e)));
  require(w1 * std::abs(e_dot) < kUnitGuard, Errc::domain_violation,
          breach_message("velocity funnel breached", w1, std::abs(e_dot)));
  double k0 = w0 / (1.0 - w0 * std::abs(e));
  double k1 = w1 / (1.0 - w1 * std::abs(e_dot));
  if (modified) return -k0 * k0 * e - k0 * k1 * e_dot;
  return -k0 * k0 * e - k1 * e_dot;
}

double tf_log_ratio(double s) {
  require(std::abs(s) < 1.0, Errc::domain_violation, "log-ratio map needs |s| < 1");
  return std::log((1.0 + s) / (1.0 - s));
}

void Ppc::validate() const {
  require(r >= 1 && m >= 1, Errc::invalid_argument, "controller needs r >= 1 and m >= 1");
  require(static_cast<int>(k.size()) == r && static_cast<int>(phi.size()) == r,
          Errc::invalid_argument, "one gain and one funnel per stage are required");
  for (double ki : k)
    require(ki > 0.0, Errc::invalid_argument, "stage gains must be positive");
}

VectorXd Ppc::control(double t, const std::vector<VectorXd>& x, const VectorXd& y_ref) const {
  validate();
  require(static_cast<int>(x.size()) == r, Errc::invalid_argument,
          "needs all r chain states");
  require(y_ref.size() == m, Errc::invalid_argument, "reference dimension mismatch");
  VectorXd target = y_ref;
  VectorXd a = VectorXd::Zero(m);
  for (int i = 0; i < r; ++i) {
    require(x[i].size() == m, Errc::invalid_argument, "chain state dimension mismatch");
    double weight = phi[i].phi(t);
    VectorXd s = weight * (x[i] - target);
    for (int j = 0; j < m; ++j) {
      if (std::abs(s(j)) >= kUnitGuard) {
        std::ostringstream os;
        os << "performance funnel breached at stage " << (i + 1) << ", component " << j;
        fail(Errc::domain_violation, os.str());
      }
      a(j) = -k[i] * tf_log_ratio(s(j));
    }
    target = a;
  }
  return a;
}

VectorXd saturate(const VectorXd& v, double u_hat) {
  require(u_hat > 0.0, Errc::invalid_argument, "saturation level must be positive");
  double n = v.norm();
  if (n <= u_hat) return v;
  VectorXd out = (u_hat / n) * v;
  // the rescale can round a hair past the level; nudge down so the clipped
  // norm never exceeds it
  for (double nn = out.norm(); nn > u_hat; nn = out.norm())
    out *= (u_hat / nn) * (1.0 - 4.0 * std::numeric_limits<double>::epsilon());
  return out;
}

VectorXd saturated_fc(const FunnelFunction& phi, double u_hat, double t, const VectorXd& e) {
  double weight = phi.phi(t);
  double margin = weight * e.norm();
  require(margin < kUnitGuard, Errc::domain_violation,
          breach_message("funnel breached", weight, e.norm()));
  double k = weight / (1.0 - margin * margin);
  return -saturate(k * e, u_hat);
}

FeasibilityReport feasibility_check(double a, double cb, double u_hat, double sup_psi,
                                    double sup_psi_dot, double sup_yref, double sup_yref_dot) {
  require(cb > 0.0 && u_hat > 0.0, Errc::invalid_argument,
          "control authority and saturation level must be positive");
  require(sup_psi >= 0.0 && sup_psi_dot >= 0.0 && sup_yref >= 0.0 && sup_yref_dot >= 0.0,
          Errc::invalid_argument, "declared bounds must be nonnegative");
  FeasibilityReport rep;
  rep.lhs = cb * u_hat;
  rep.rhs = std::abs(a) * (sup_psi + sup_yref) + sup_yref_dot + sup_psi_dot;
  rep.feasible = rep.lhs >= rep.rhs;
  return rep;
}

void Icfc::validate() const {
  require(u_hat > 0.0 && alpha_d > 0.0 && beta_d > 0.0, Errc::invalid_argument,
          "saturation level and boundary dynamics parameters must be positive");
  require(psi0 > beta_d / alpha_d, Errc::invalid_argument,
          "initial boundary must exceed beta/alpha");
}

Icfc::Result Icfc::step(double t, const VectorXd& e, double psi) const {
  (void)t;  // the law is autonomous; the boundary state carries the history
  validate();
  require(psi > 0.0, Errc::invalid_argument, "boundary must be positive");
  double ne = e.norm();
  require(ne < psi * kUnitGuard, Errc::domain_violation,
          "error reached the adaptive boundary");
  double ratio = ne / psi;
  Result res;
  res.k = 1.0 / (1.0 - ratio * ratio);
  VectorXd v = -res.k * e;
  res.u = saturate(v, u_hat);
  res.kappa = (v - res.u).norm();
  if (ne < 1e-12) res.kappa = 0.0;  // saturation cannot be active with finite gain here
  res.psi_dot = -alpha_d * psi + beta_d;
  if (res.kappa > 0.0) res.psi_dot += psi * res.kappa / ne;
  return res;
}

// ---------------------------------------------------------------------------
// two-block controller for constrained outputs
// ---------------------------------------------------------------------------

void DaeFc::validate() const {
  params.validate();
  require(k_hat > 0.0, Errc::invalid_argument, "algebraic-block gain must be positive");
  require(m >= 1 && ell >= 0 && ell <= m, Errc::invalid_argument,
          "block sizes must satisfy 0 <= ell <= m");
  require(phi_II.bounded(), Errc::invalid_argument,
          "algebraic-block funnel must have a bounded weight");
}

DaeFc::Result DaeFc::control(double t, const VectorXd& e_I, const VectorXd& e_II) const {
  validate();
  require(e_I.size() == static_cast<Eigen::Index>(params.r) * ell, Errc::invalid_argument,
          "differential block must stack r blocks of size ell");
  require(e_II.size() == m - ell, Errc::invalid_argument, "algebraic block dimension mismatch");

  Result res;
  if (ell == 0) {
    res.u_I = VectorXd(0);
  } else {
    double weight = params.phi.phi(t);
    auto w = rho_r(weight * e_I, params.r, ell, params.alpha);
    if (!w)
      fail(Errc::domain_violation,
           "differential block I: scaled feedback left the admissible ball");
    res.u_I = params.N(params.alpha(w->squaredNorm())) * (*w);
  }
  if (ell == m) {
    res.u_II = VectorXd(0);
  } else {
    VectorXd v = phi_II.phi(t) * e_II;
    double vn = v.norm();
    require(vn < kUnitGuard, Errc::domain_violation,
            breach_message("algebraic block II funnel breached", phi_II.phi(t), e_II.norm()));
    res.u_II = -k_hat * params.alpha(vn * vn) * v;
  }
  return res;
}

}  // namespace fc
