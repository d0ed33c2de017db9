#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "fc/controllers.hpp"
#include "fc/sim.hpp"

namespace fc {

// Linear differential-algebraic system in normal form: ell output channels
// driven through an order-r derivative chain, m - ell channels pinned by an
// algebraic row, and an internal block x3 fed by the full output.
//
//   y_I^(r)  = sum_k R1[k] y_I^(k-1) + P1 y_II + S1 x3 + Gamma_hat u_I
//   0        = sum_k R2[k] y_I^(k-1) + P2 y_II + S2 x3 + Gamma_tilde u_I + u_II
//   x3'      = Q x3 + A31 (y_I, y_II)
struct DaeNormalForm {
  int r = 1;
  int ell = 1;
  int m = 1;
  std::vector<Eigen::MatrixXd> R1;  // ell x ell, one block per chain derivative
  std::vector<Eigen::MatrixXd> R2;  // (m-ell) x ell, same indexing
  Eigen::MatrixXd P1, P2;           // algebraic-channel couplings into both rows
  Eigen::MatrixXd S1, S2;           // internal-block couplings
  Eigen::MatrixXd Q;                // internal dynamics
  Eigen::MatrixXd A31;              // output drive into the internal block, n3 x m
  Eigen::MatrixXd Gamma_hat;        // chain-row input gain, ell x ell invertible
  Eigen::MatrixXd Gamma_tilde;      // input leakage into the algebraic row
  Eigen::VectorXd chain0;           // stacked y_I(0) .. y_I^(r-1)(0), r*ell entries
  Eigen::VectorXd x30;
  std::optional<Eigen::VectorXd> yII0;  // declared algebraic start, checked not trusted

  int n3() const { return static_cast<int>(Q.rows()); }
  void validate() const;
};

// C (sE - A)^{-1} B for a regular matrix pencil
Eigen::MatrixXd dae_example_transfer(const Eigen::MatrixXd& E, const Eigen::MatrixXd& A,
                                     const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                                     double s);

// Rational matrix as coefficient data: a matrix polynomial plus a strictly
// proper tail -W (sI - Q)^{-1} V (zero-size matrices when absent). This is the
// shape the inverse transfer function takes in the normal-form coordinates.
struct RationalMatrix {
  std::vector<Eigen::MatrixXd> poly;  // poly[k] multiplies s^k
  Eigen::MatrixXd W, Q, V;

  int rows() const;
  int cols() const;
  Eigen::MatrixXd eval(double s) const;
};

// Column-degree bookkeeping of the inverse transfer function: degrees sorted
// descending, the limit matrix of the positive-degree columns, and whether
// they share one degree with full column rank (the strict pattern).
struct TruncatedRelDegree {
  std::vector<int> degrees;
  std::vector<int> order;     // column permutation that produced the sorting
  int ell = 0;                // number of positive degrees
  Eigen::MatrixXd Gamma_ell;  // lim s^{-r_i} h_i for the first ell columns
  bool truncated_vrd = false; // rank Gamma_ell == ell
  std::optional<std::pair<int, int>> strict;  // (r, ell) when the pattern is strict
};

TruncatedRelDegree truncated_reldeg_from_H(const RationalMatrix& H);

// residual norm of the algebraic row at explicit values, controller included
double dae_consistency_residual(const DaeNormalForm& nf, const DaeFc& law,
                                const Signal& reference, double t,
                                const Eigen::VectorXd& chain, const Eigen::VectorXd& x3,
                                const Eigen::VectorXd& yII);

// the y_II that zeroes the algebraic row at (t, chain, x3); throws
// integration_failure when no root exists inside the algebraic-channel funnel
Eigen::VectorXd dae_consistent_yII(const DaeNormalForm& nf, const DaeFc& law,
                                   const Signal& reference, double t,
                                   const Eigen::VectorXd& chain, const Eigen::VectorXd& x3);

// Closed loop over the differential states (y_I chain and x3); y_II is
// resolved from the algebraic row at every evaluation and reported as part of
// the output. Refuses gains at or below the spectral norm of P2 and declared
// initial data whose residual exceeds 1e-8.
ClosedLoopProblem assemble_dae_closed_loop(const DaeNormalForm& nf, const DaeFc& law,
                                           const Signal& reference, double t0, double t_end);

}  // namespace fc
