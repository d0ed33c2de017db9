#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "fc/errors.hpp"

namespace fc {

struct LtiSystem {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd C;  // m x n

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  void validate() const;
};

struct RelativeDegreeResult {
  int r = 0;
  Eigen::MatrixXd Gamma;  // C A^{r-1} B, invertible
};

// Smallest r <= n with C A^k B = 0 for k < r-1 and C A^{r-1} B invertible.
// Returns nullopt when the Markov parameters never produce an invertible
// block (in particular when the first nonzero one is rank-deficient).
std::optional<RelativeDegreeResult> relative_degree(const LtiSystem& sys);

// Coordinates (xi_1..xi_r, eta) = U x in which the output drives a chain of
// m-dimensional integrators fed back through the blocks R, S and the internal
// dynamics (Q, P).
struct ByrnesIsidoriForm {
  int r = 0;
  int m = 0;
  int n = 0;
  std::vector<Eigen::MatrixXd> R;  // r blocks, m x m
  Eigen::MatrixXd Gamma;           // m x m, invertible
  Eigen::MatrixXd S;               // m x (n - r m)
  Eigen::MatrixXd P;               // (n - r m) x m
  Eigen::MatrixXd Q;               // (n - r m) x (n - r m)
  Eigen::MatrixXd U;               // n x n change of coordinates
  Eigen::MatrixXd U_inv;
};

ByrnesIsidoriForm byrnes_isidori(const LtiSystem& sys);

// C (sI - A)^{-1} B
Eigen::MatrixXcd transfer_eval(const LtiSystem& sys, std::complex<double> s);
// the same transfer expressed through the structured blocks:
//   G(s) = -(sum_i R_i s^{i-1} - s^r I + S (sI - Q)^{-1} P)^{-1} Gamma
Eigen::MatrixXcd transfer_eval(const ByrnesIsidoriForm& bi, std::complex<double> s);

struct ZeroDynamicsReport {
  Eigen::VectorXcd internal_spectrum;  // eigenvalues of Q
  Eigen::VectorXcd invariant_zeros;    // finite roots of det [A - sI, B; C, 0]
  bool asymptotically_stable = false;  // internal spectrum in the open left half plane
  double spectral_abscissa = 0.0;      // max real part of the internal spectrum
};

ZeroDynamicsReport zero_dynamics(const LtiSystem& sys);

struct SignDefiniteness {
  bool definite = false;
  int sign = 0;  // +1 / -1 when definite
};

// whether v^T Gamma v vanishes only at v = 0, i.e. Gamma + Gamma^T is
// definite of either sign
SignDefiniteness sign_definite(const Eigen::MatrixXd& Gamma);

// Smallest k* in [0, k_max] (located to 1e-6) such that A - k B C is Hurwitz
// for every sampled k >= k*. Requires relative degree one, spec(CB) in the
// open right half plane and stable zero dynamics; nullopt when even k_max
// fails to stabilize.
std::optional<double> high_gain_threshold(const LtiSystem& sys, double k_max);

struct LmrReport {
  bool member = false;
  std::optional<int> r;
  bool zd_stable = false;
  bool gamma_sign_definite = false;
  std::string detail;
};

// membership in the class of systems the funnel designs in this library accept:
// well-defined relative degree, stable zero dynamics, sign-definite gain
LmrReport is_in_Lmr(const LtiSystem& sys);

}  // namespace fc
