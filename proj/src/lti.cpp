#include "fc/lti.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fc {

namespace {

constexpr double kRankRel = 1e-10;  // singular values below this (relative) count as zero
constexpr double kCondMax = 1e12;   // beyond this an inversion is refused

bool effectively_zero(const Eigen::MatrixXd& M, double scale) {
  if (M.size() == 0) return true;
  const double smax = M.jacobiSvd().singularValues()(0);
  return smax <= kRankRel * std::max(1.0, scale);
}

// rank decision on the relative 1e-10 threshold; gray zone up to cond 1e12 is
// refused rather than guessed
bool invertible(const Eigen::MatrixXd& M, const char* what, bool throw_on_gray) {
  if (M.rows() != M.cols() || M.size() == 0) return false;
  const Eigen::VectorXd sv = M.jacobiSvd().singularValues();
  const double smax = sv(0), smin = sv(sv.size() - 1);
  if (smin >= kRankRel * smax && smax > 0.0) return true;
  if (smax > 0.0 && smin * kCondMax > smax && throw_on_gray) {
    std::ostringstream os;
    os << what << ": condition number near " << smax / smin
       << " makes the rank decision unreliable";
    fail(Errc::numerical_rank, os.str());
  }
  return false;
}

Eigen::MatrixXd safe_inverse(const Eigen::MatrixXd& M, const char* what) {
  if (M.size() == 0) return M;
  const Eigen::VectorXd sv = M.jacobiSvd().singularValues();
  const double smax = sv(0), smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || smax / smin > kCondMax) {
    std::ostringstream os;
    os << what << ": matrix is numerically singular";
    fail(Errc::numerical_rank, os.str());
  }
  return M.inverse();
}

}  // namespace

void LtiSystem::validate() const {
  require(A.rows() == A.cols() && A.rows() > 0, Errc::invalid_argument, "A must be square");
  require(B.rows() == A.rows() && B.cols() > 0, Errc::invalid_argument,
          "B must have as many rows as A");
  require(C.cols() == A.rows() && C.rows() == B.cols(), Errc::invalid_argument,
          "C must be m x n with m matching B");
  require(A.allFinite() && B.allFinite() && C.allFinite(), Errc::invalid_argument,
          "system matrices must be finite");
}

std::optional<RelativeDegreeResult> relative_degree(const LtiSystem& sys) {
  sys.validate();
  const int n = sys.n();
  const double scale_cb = sys.C.norm() * sys.B.norm();
  Eigen::MatrixXd Ak = Eigen::MatrixXd::Identity(n, n);
  for (int r = 1; r <= n; ++r) {
    const Eigen::MatrixXd markov = sys.C * Ak * sys.B;  // C A^{r-1} B
    const double scale = scale_cb * std::pow(std::max(1.0, sys.A.norm()), r - 1);
    if (!effectively_zero(markov, scale)) {
      if (invertible(markov, "relative_degree: leading Markov parameter", true))
        return RelativeDegreeResult{r, markov};
      return std::nullopt;  // first nonzero block is rank-deficient
    }
    Ak = Ak * sys.A;
  }
  return std::nullopt;
}

ByrnesIsidoriForm byrnes_isidori(const LtiSystem& sys) {
  sys.validate();
  const auto rd = relative_degree(sys);
  require(rd.has_value(), Errc::invalid_argument,
          "byrnes_isidori: system has no well-defined relative degree");
  const int r = rd->r, m = sys.m(), n = sys.n();

  Eigen::MatrixXd Br(n, m * r), Cr(m * r, n);
  Eigen::MatrixXd AkB = sys.B;
  Eigen::MatrixXd CAk = sys.C;
  for (int k = 0; k < r; ++k) {
    Br.middleCols(k * m, m) = AkB;
    Cr.middleRows(k * m, m) = CAk;
    AkB = sys.A * AkB;
    CAk = CAk * sys.A;
  }
  // CAk now holds C A^r
  const Eigen::MatrixXd CrBr_inv = safe_inverse(Cr * Br, "byrnes_isidori: C_r B_r");

  // W: orthonormal basis of ker C_r (dimension n - r m)
  const int nz = n - r * m;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Cr, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > kRankRel * std::max(1.0, sv(0))) ++rank;
  require(rank == r * m, Errc::numerical_rank, "byrnes_isidori: C_r is rank-deficient");
  const Eigen::MatrixXd W = svd.matrixV().rightCols(nz);

  ByrnesIsidoriForm bi;
  bi.r = r;
  bi.m = m;
  bi.n = n;
  bi.Gamma = rd->Gamma;

  const Eigen::MatrixXd V =
      safe_inverse(W.transpose() * W, "byrnes_isidori: W^T W") * W.transpose() *
      (Eigen::MatrixXd::Identity(n, n) - Br * CrBr_inv * Cr);

  // after the loop AkB = A^r B and CAk = C A^r
  bi.P = V * AkB * safe_inverse(bi.Gamma, "byrnes_isidori: Gamma");
  bi.Q = V * sys.A * W;
  bi.S = CAk * W;

  const Eigen::MatrixXd Rall = CAk * Br * CrBr_inv;  // [R_1, ..., R_r]
  bi.R.resize(r);
  for (int k = 0; k < r; ++k) bi.R[k] = Rall.middleCols(k * m, m);

  bi.U.resize(n, n);
  bi.U.topRows(r * m) = Cr;
  bi.U.bottomRows(nz) = V;
  bi.U_inv.resize(n, n);
  bi.U_inv.leftCols(r * m) = Br * CrBr_inv;
  bi.U_inv.rightCols(nz) = W;
  return bi;
}

Eigen::MatrixXcd transfer_eval(const LtiSystem& sys, std::complex<double> s) {
  sys.validate();
  const int n = sys.n();
  Eigen::MatrixXcd sIA = s * Eigen::MatrixXcd::Identity(n, n) - sys.A.cast<std::complex<double>>();
  return sys.C.cast<std::complex<double>>() * sIA.partialPivLu().solve(sys.B.cast<std::complex<double>>());
}

Eigen::MatrixXcd transfer_eval(const ByrnesIsidoriForm& bi, std::complex<double> s) {
  const int m = bi.m;
  using CMat = Eigen::MatrixXcd;
  CMat acc = CMat::Zero(m, m);
  std::complex<double> sp = 1.0;
  for (int i = 0; i < bi.r; ++i) {
    acc += bi.R[static_cast<size_t>(i)].cast<std::complex<double>>() * sp;
    sp *= s;
  }
  acc -= sp * CMat::Identity(m, m);  // sp = s^r
  const int nz = bi.n - bi.r * bi.m;
  if (nz > 0) {
    CMat sIQ = s * CMat::Identity(nz, nz) - bi.Q.cast<std::complex<double>>();
    acc += bi.S.cast<std::complex<double>>() *
           sIQ.partialPivLu().solve(bi.P.cast<std::complex<double>>());
  }
  return -acc.partialPivLu().solve(bi.Gamma.cast<std::complex<double>>());
}

ZeroDynamicsReport zero_dynamics(const LtiSystem& sys) {
  const auto bi = byrnes_isidori(sys);
  ZeroDynamicsReport rep;
  const int nz = bi.n - bi.r * bi.m;
  if (nz > 0) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(bi.Q);
    rep.internal_spectrum = es.eigenvalues();
    rep.spectral_abscissa = rep.internal_spectrum.real().maxCoeff();
    rep.asymptotically_stable = rep.spectral_abscissa < 0.0;
  } else {
    rep.internal_spectrum.resize(0);
    rep.spectral_abscissa = -std::numeric_limits<double>::infinity();
    rep.asymptotically_stable = true;  // nothing left over
  }

  // finite generalized eigenvalues of the system pencil [A - sI, B; C, 0]
  const int n = sys.n(), m = sys.m();
  Eigen::MatrixXd M0(n + m, n + m), M1(n + m, n + m);
  M0.setZero();
  M1.setZero();
  M0.topLeftCorner(n, n) = sys.A;
  M0.topRightCorner(n, m) = sys.B;
  M0.bottomLeftCorner(m, n) = sys.C;
  M1.topLeftCorner(n, n).setIdentity();
  Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges(M0, M1);
  std::vector<std::complex<double>> finite;
  for (int i = 0; i < ges.alphas().size(); ++i) {
    const double beta = ges.betas()(i);
    const std::complex<double> alpha = ges.alphas()(i);
    if (std::abs(beta) > 1e-9 * std::max(1.0, std::abs(alpha))) finite.push_back(alpha / beta);
  }
  rep.invariant_zeros.resize(static_cast<Eigen::Index>(finite.size()));
  for (size_t i = 0; i < finite.size(); ++i)
    rep.invariant_zeros(static_cast<Eigen::Index>(i)) = finite[i];
  return rep;
}

SignDefiniteness sign_definite(const Eigen::MatrixXd& Gamma) {
  require(Gamma.rows() == Gamma.cols() && Gamma.size() > 0, Errc::invalid_argument,
          "sign_definite: square matrix required");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((Gamma + Gamma.transpose()) / 2.0);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  const double tol = kRankRel * std::max(1.0, scale);
  SignDefiniteness sd;
  if (ev.minCoeff() > tol) {
    sd.definite = true;
    sd.sign = 1;
  } else if (ev.maxCoeff() < -tol) {
    sd.definite = true;
    sd.sign = -1;
  }
  return sd;
}

std::optional<double> high_gain_threshold(const LtiSystem& sys, double k_max) {
  sys.validate();
  require(k_max > 0.0 && std::isfinite(k_max), Errc::invalid_argument,
          "high_gain_threshold: k_max must be positive");
  const auto rd = relative_degree(sys);
  require(rd.has_value() && rd->r == 1, Errc::invalid_argument,
          "high_gain_threshold: relative degree one required");
  Eigen::EigenSolver<Eigen::MatrixXd> cbs(rd->Gamma);
  require(cbs.eigenvalues().real().minCoeff() > 0.0, Errc::invalid_argument,
          "high_gain_threshold: spec(CB) must lie in the open right half plane");
  require(zero_dynamics(sys).asymptotically_stable, Errc::invalid_argument,
          "high_gain_threshold: zero dynamics must be asymptotically stable");

  const auto stable = [&](double k) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A - k * sys.B * sys.C);
    return es.eigenvalues().real().maxCoeff() < 0.0;
  };
  if (!stable(k_max)) return std::nullopt;

  // log-spaced sweep (plus k = 0) to bracket the boundary of the stable tail
  constexpr int kSamples = 512;
  std::vector<double> grid{0.0};
  const double lo_exp = std::log10(std::max(1e-9, k_max * 1e-12));
  const double hi_exp = std::log10(k_max);
  for (int i = 0; i < kSamples; ++i)
    grid.push_back(std::pow(10.0, lo_exp + (hi_exp - lo_exp) * i / (kSamples - 1)));
  double lo = 0.0, hi = k_max;
  bool all_stable = true;
  for (size_t i = 0; i < grid.size(); ++i) {
    if (!stable(grid[i])) {
      all_stable = false;
      lo = grid[i];
      hi = (i + 1 < grid.size()) ? grid[i + 1] : k_max;
    }
  }
  if (all_stable) return 0.0;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    (stable(mid) ? hi : lo) = mid;
  }
  return hi;
}

LmrReport is_in_Lmr(const LtiSystem& sys) {
  LmrReport rep;
  const auto rd = relative_degree(sys);
  if (!rd) {
    rep.detail = "no well-defined relative degree";
    return rep;
  }
  rep.r = rd->r;
  rep.gamma_sign_definite = sign_definite(rd->Gamma).definite;
  rep.zd_stable = zero_dynamics(sys).asymptotically_stable;
  rep.member = rep.gamma_sign_definite && rep.zd_stable;
  if (!rep.gamma_sign_definite)
    rep.detail = "leading gain is not sign-definite";
  else if (!rep.zd_stable)
    rep.detail = "zero dynamics are not asymptotically stable";
  return rep;
}

}  // namespace fc
