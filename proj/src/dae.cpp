#include "fc/dae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fc/errors.hpp"

namespace fc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// widest scaled error the algebraic solver will consider; slightly inside the
// law's own guard so a root found here is always admissible to the controller
constexpr double kSolveBallRadius = 1.0 - 1e-9;

void require_shape(const MatrixXd& M, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what) {
  require(M.rows() == rows && M.cols() == cols, Errc::invalid_argument,
          what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
              std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
  require(M.allFinite(), Errc::invalid_argument, what + ": entries must be finite");
}

// feedback stack of the differential block: error derivatives up to r_hat,
// raw chain derivatives past it
VectorXd chain_errors(const DaeNormalForm& nf, const DaeFc& law, const Signal& reference,
                      double t, const VectorXd& chain) {
  VectorXd e_I(chain.size());
  for (int i = 0; i < nf.r; ++i) {
    VectorXd block = chain.segment(i * nf.ell, nf.ell);
    if (i < law.params.r_hat) block -= reference.eval(t, i).head(nf.ell);
    e_I.segment(i * nf.ell, nf.ell) = block;
  }
  return e_I;
}

// everything the algebraic row needs besides y_II itself
struct RowContext {
  VectorXd c;      // sum_k R2[k] y_I^(k-1) + S2 x3 + Gamma_tilde u_I
  VectorXd ref_II;
  double phi = 0.0;
};

RowContext row_context(const DaeNormalForm& nf, const DaeFc& law, const Signal& reference,
                       double t, const VectorXd& chain, const VectorXd& x3) {
  RowContext ctx;
  const int malg = nf.m - nf.ell;
  VectorXd u_I(0);
  if (nf.ell > 0) {
    // the center of the algebraic funnel is always admissible, so it serves
    // as the placeholder while u_I is computed
    VectorXd e_I = chain_errors(nf, law, reference, t, chain);
    u_I = law.control(t, e_I, VectorXd::Zero(malg)).u_I;
  }
  ctx.c = VectorXd::Zero(malg);
  for (int k = 0; k < nf.r; ++k) ctx.c += nf.R2[k] * chain.segment(k * nf.ell, nf.ell);
  ctx.c += nf.S2 * x3 + nf.Gamma_tilde * u_I;
  ctx.ref_II = reference.eval(t, 0).tail(malg);
  ctx.phi = law.phi_II.phi(t);
  return ctx;
}

// the constrained channels' feedback term at a candidate output value
VectorXd row_feedback(const RowContext& ctx, const DaeFc& law, const VectorXd& y_II) {
  VectorXd v = ctx.phi * (y_II - ctx.ref_II);
  return -law.k_hat * law.params.alpha(v.squaredNorm()) * v;
}

VectorXd row_value(const RowContext& ctx, const DaeNormalForm& nf, const DaeFc& law,
                   const VectorXd& y_II) {
  return ctx.c + nf.P2 * y_II + row_feedback(ctx, law, y_II);
}

// The scalar row is solved by bisection over the whole funnel interval; the
// feedback sweeps to +/- infinity at the interval ends, so a sign change there
// is the rule and its absence means no admissible output exists. Bisection to
// the last representable midpoint keeps the result independent of any warm
// start, which in turn keeps repeated runs byte-identical.
double solve_scalar_row(const RowContext& ctx, const DaeNormalForm& nf, const DaeFc& law) {
  const double c = ctx.c(0);
  const double p = nf.P2(0, 0);
  const double ref = ctx.ref_II(0);
  if (ctx.phi <= 0.0) {
    // vanishing weight (possible only at the start of a zero-at-zero funnel):
    // the feedback drops out and the row must be solvable on its own
    require(p != 0.0, Errc::integration_failure,
            "algebraic row is unsolvable where the funnel weight vanishes");
    return -c / p;
  }
  auto g = [&](double v) {
    return c + p * (ref + v / ctx.phi) - law.k_hat * law.params.alpha(v * v) * v;
  };
  double lo = -kSolveBallRadius;
  double hi = kSolveBallRadius;
  double g_lo = g(lo);
  double g_hi = g(hi);
  if (g_lo == 0.0) return ref + lo / ctx.phi;
  if (g_hi == 0.0) return ref + hi / ctx.phi;
  require((g_lo > 0.0) != (g_hi > 0.0), Errc::domain_violation,
          "algebraic row has no root inside the output funnel");
  const bool lo_positive = g_lo > 0.0;
  while (true) {
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    double g_mid = g(mid);
    if (g_mid == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((g_mid > 0.0) == lo_positive)
      lo = mid;
    else
      hi = mid;
  }
  return ref + 0.5 * (lo + hi) / ctx.phi;
}

// Damped Newton for coupled constrained channels, started at the funnel
// center so repeated evaluations at the same state agree bit for bit.
VectorXd solve_vector_row(const RowContext& ctx, const DaeNormalForm& nf, const DaeFc& law) {
  const int malg = nf.m - nf.ell;
  VectorXd y = ctx.ref_II;
  double residual = row_value(ctx, nf, law, y).norm();
  const double target = 1e-12 * (1.0 + ctx.c.norm() + law.k_hat);
  for (int iter = 0; iter < 100; ++iter) {
    if (residual <= target) return y;
    VectorXd v = ctx.phi * (y - ctx.ref_II);
    double s = v.squaredNorm();
    double a = law.params.alpha(s);
    double a_prime = law.params.alpha.gain_rate(a);
    MatrixXd J = nf.P2 -
                 law.k_hat * ctx.phi *
                     (a * MatrixXd::Identity(malg, malg) + 2.0 * a_prime * v * v.transpose());
    VectorXd delta = J.fullPivLu().solve(-row_value(ctx, nf, law, y));
    double step = 1.0;
    bool advanced = false;
    for (int bt = 0; bt < 60; ++bt) {
      VectorXd cand = y + step * delta;
      if (ctx.phi * (cand - ctx.ref_II).norm() < kSolveBallRadius) {
        double cand_residual = row_value(ctx, nf, law, cand).norm();
        if (cand_residual < residual) {
          y = cand;
          residual = cand_residual;
          advanced = true;
          break;
        }
      }
      step *= 0.5;
    }
    require(advanced, Errc::integration_failure,
            "algebraic row solve stalled on the coupled constrained channels");
  }
  require(residual <= target, Errc::integration_failure,
          "algebraic row solve did not converge");
  return y;
}

VectorXd solve_row(const RowContext& ctx, const DaeNormalForm& nf, const DaeFc& law) {
  if (nf.m - nf.ell == 1) return VectorXd::Constant(1, solve_scalar_row(ctx, nf, law));
  return solve_vector_row(ctx, nf, law);
}

// funnel-margin channels of the differential block: norms of the feedback
// stack the law builds internally
std::vector<double> stack_margins_I(const DaeFc& law, double t, const VectorXd& e_I) {
  std::vector<double> out;
  if (law.ell == 0) return out;
  const double phi = law.params.phi.phi(t);
  VectorXd rho = phi * e_I.head(law.ell);
  out.push_back(rho.norm());
  for (int i = 1; i < law.params.r; ++i) {
    rho = phi * e_I.segment(i * law.ell, law.ell) + gamma(rho, law.params.alpha);
    out.push_back(rho.norm());
  }
  return out;
}

}  // namespace

void DaeNormalForm::validate() const {
  require(m >= 1, Errc::invalid_argument, "output dimension must be positive");
  require(r >= 1, Errc::invalid_argument, "chain order must be positive");
  require(ell >= 0 && ell <= m, Errc::invalid_argument,
          "differential block size must lie between 0 and the output dimension");
  const Eigen::Index malg = m - ell;
  require(Q.rows() == Q.cols(), Errc::invalid_argument, "internal dynamics matrix must be square");
  const Eigen::Index n3v = Q.rows();
  require(static_cast<int>(R1.size()) == r && static_cast<int>(R2.size()) == r,
          Errc::invalid_argument, "one coefficient block per chain derivative is required");
  for (int k = 0; k < r; ++k) {
    require_shape(R1[k], ell, ell, "chain-row coefficient R1[" + std::to_string(k) + "]");
    require_shape(R2[k], malg, ell, "algebraic-row coefficient R2[" + std::to_string(k) + "]");
  }
  require_shape(P1, ell, malg, "chain-row output coupling P1");
  require_shape(P2, malg, malg, "algebraic-row output coupling P2");
  require_shape(S1, ell, n3v, "chain-row internal coupling S1");
  require_shape(S2, malg, n3v, "algebraic-row internal coupling S2");
  require_shape(Q, n3v, n3v, "internal dynamics Q");
  require_shape(A31, n3v, m, "internal output drive A31");
  require_shape(Gamma_hat, ell, ell, "chain-row input gain");
  require_shape(Gamma_tilde, malg, ell, "algebraic-row input leakage");
  require(chain0.size() == static_cast<Eigen::Index>(r) * ell && chain0.allFinite(),
          Errc::invalid_argument, "initial chain must stack r blocks of size ell");
  require(x30.size() == n3v && x30.allFinite(), Errc::invalid_argument,
          "initial internal state dimension mismatch");
  if (yII0)
    require(yII0->size() == malg && yII0->allFinite(), Errc::invalid_argument,
            "declared algebraic start dimension mismatch");
  if (ell > 0)
    require(Gamma_hat.fullPivLu().isInvertible(), Errc::invalid_argument,
            "chain-row input gain must be invertible");
}

MatrixXd dae_example_transfer(const MatrixXd& E, const MatrixXd& A, const MatrixXd& B,
                              const MatrixXd& C, double s) {
  require(E.rows() == E.cols() && A.rows() == A.cols() && E.rows() == A.rows(),
          Errc::invalid_argument, "pencil matrices must be square and of equal size");
  const Eigen::Index n = E.rows();
  require(B.rows() == n && C.cols() == n, Errc::invalid_argument,
          "input and output maps must match the pencil dimension");
  require(std::isfinite(s), Errc::invalid_argument, "evaluation point must be finite");
  Eigen::FullPivLU<MatrixXd> lu(s * E - A);
  if (lu.isInvertible()) return C * lu.solve(B);
  // det(sE - A) is a polynomial of degree at most n, so n + 1 distinct sample
  // points decide whether the pencil is singular everywhere or only at s
  for (Eigen::Index j = 0; j <= n; ++j) {
    double probe = -2.13 + 1.37 * static_cast<double>(j);
    if (MatrixXd(probe * E - A).fullPivLu().isInvertible())
      fail(Errc::invalid_argument, "evaluation point lies in the spectrum of the pencil");
  }
  fail(Errc::numerical_rank, "matrix pencil is singular: the transfer function is undefined");
}

int RationalMatrix::rows() const {
  if (!poly.empty()) return static_cast<int>(poly.front().rows());
  return static_cast<int>(W.rows());
}

int RationalMatrix::cols() const {
  if (!poly.empty()) return static_cast<int>(poly.front().cols());
  return static_cast<int>(V.cols());
}

MatrixXd RationalMatrix::eval(double s) const {
  require(rows() > 0 && cols() > 0, Errc::invalid_argument, "rational matrix has no shape");
  MatrixXd out = MatrixXd::Zero(rows(), cols());
  double power = 1.0;
  for (const auto& coeff : poly) {
    require_shape(coeff, rows(), cols(), "polynomial coefficient");
    out += power * coeff;
    power *= s;
  }
  if (W.size() > 0 || V.size() > 0) {
    require(Q.rows() == Q.cols() && W.rows() == rows() && W.cols() == Q.rows() &&
                V.rows() == Q.rows() && V.cols() == cols(),
            Errc::invalid_argument, "strictly proper tail dimensions are inconsistent");
    Eigen::FullPivLU<MatrixXd> lu(s * MatrixXd::Identity(Q.rows(), Q.cols()) - Q);
    require(lu.isInvertible(), Errc::invalid_argument,
            "evaluation point lies in the spectrum of the tail");
    out -= W * lu.solve(V);
  }
  return out;
}

TruncatedRelDegree truncated_reldeg_from_H(const RationalMatrix& H) {
  const int m = H.cols();
  require(m >= 1 && H.rows() == m, Errc::invalid_argument,
          "inverse transfer function must be square");
  double scale = 0.0;
  for (const auto& coeff : H.poly) {
    require_shape(coeff, m, m, "polynomial coefficient");
    scale = std::max(scale, coeff.cwiseAbs().maxCoeff());
  }
  const double tol = 1e-12 * std::max(1.0, scale);

  std::vector<int> column_degree(m, 0);
  MatrixXd hhat = MatrixXd::Zero(m, m);  // ĥ_j = lim s^{-r_j} h_j(s), column-wise
  for (int j = 0; j < m; ++j) {
    int top = -1;
    for (int k = static_cast<int>(H.poly.size()) - 1; k >= 0; --k) {
      if (H.poly[k].col(j).lpNorm<Eigen::Infinity>() > tol) {
        top = k;
        break;
      }
    }
    column_degree[j] = std::max(top, 0);
    if (top >= 0) hhat.col(j) = H.poly[top].col(j);
    // strictly proper columns keep the zero limit set above
  }

  TruncatedRelDegree out;
  out.order.resize(m);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return column_degree[a] > column_degree[b]; });
  out.degrees.resize(m);
  for (int i = 0; i < m; ++i) out.degrees[i] = column_degree[out.order[i]];
  out.ell = static_cast<int>(
      std::count_if(out.degrees.begin(), out.degrees.end(), [](int d) { return d > 0; }));
  out.Gamma_ell.resize(m, out.ell);
  for (int i = 0; i < out.ell; ++i) out.Gamma_ell.col(i) = hhat.col(out.order[i]);
  if (out.ell == 0) {
    out.truncated_vrd = true;
  } else {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(out.Gamma_ell);
    out.truncated_vrd = qr.rank() == out.ell;
  }
  if (out.truncated_vrd && out.ell >= 1 &&
      std::all_of(out.degrees.begin(), out.degrees.begin() + out.ell,
                  [&](int d) { return d == out.degrees.front(); }))
    out.strict = std::make_pair(out.degrees.front(), out.ell);
  return out;
}

double dae_consistency_residual(const DaeNormalForm& nf, const DaeFc& law,
                                const Signal& reference, double t, const VectorXd& chain,
                                const VectorXd& x3, const VectorXd& yII) {
  nf.validate();
  law.validate();
  require(yII.size() == nf.m - nf.ell, Errc::invalid_argument,
          "algebraic output dimension mismatch");
  RowContext ctx = row_context(nf, law, reference, t, chain, x3);
  if (ctx.phi * (yII - ctx.ref_II).norm() >= 1.0)
    return std::numeric_limits<double>::infinity();  // no admissible feedback reaches this value
  return row_value(ctx, nf, law, yII).norm();
}

VectorXd dae_consistent_yII(const DaeNormalForm& nf, const DaeFc& law, const Signal& reference,
                            double t, const VectorXd& chain, const VectorXd& x3) {
  nf.validate();
  law.validate();
  require(nf.ell < nf.m, Errc::invalid_argument, "the normal form has no algebraic channels");
  RowContext ctx = row_context(nf, law, reference, t, chain, x3);
  return solve_row(ctx, nf, law);
}

ClosedLoopProblem assemble_dae_closed_loop(const DaeNormalForm& nf, const DaeFc& law,
                                           const Signal& reference, double t0, double t_end) {
  nf.validate();
  law.validate();
  require(law.ell == nf.ell && law.m == nf.m, Errc::invalid_argument,
          "law block sizes must match the normal form");
  require(law.params.r == nf.r, Errc::invalid_argument,
          "law chain order must match the normal form");
  require(reference.dim == nf.m, Errc::invalid_argument,
          "reference dimension must match the full output");
  require(std::isfinite(t0) && std::isfinite(t_end) && t_end > t0, Errc::invalid_argument,
          "time span must be finite and increasing");

  const int ell = nf.ell;
  const int malg = nf.m - ell;
  const int nchain = nf.r * ell;
  const int n3v = nf.n3();

  if (malg > 0) {
    Eigen::JacobiSVD<MatrixXd> svd(nf.P2);
    double p2_norm = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    require(law.k_hat > p2_norm, Errc::invalid_argument,
            "algebraic-channel gain must exceed the spectral norm of the output coupling");
    // check the declared start against the constraint row; infeasible funnel
    // membership at t0 is the integrator's verdict, not a reason to refuse
    // assembly, so guard faults are deferred
    if (nf.yII0) {
      try {
        double res =
            dae_consistency_residual(nf, law, reference, t0, nf.chain0, nf.x30, *nf.yII0);
        require(res <= 1e-8, Errc::inconsistent_initial,
                "declared algebraic output violates the constraint row at the start time");
      } catch (const Error& err) {
        if (err.code() != Errc::domain_violation) throw;
      }
    }
  }

  ClosedLoopProblem problem;
  problem.name = "dae_normal_form";
  problem.state_dim = nchain + n3v;
  problem.m = nf.m;
  problem.t0 = t0;
  problem.t_end = t_end;
  problem.x0 = VectorXd(problem.state_dim);
  problem.x0.head(nchain) = nf.chain0;
  problem.x0.tail(n3v) = nf.x30;
  problem.layout = {nchain, n3v, 0};

  // shared by rhs, observe, and the residual recomputation: resolve the
  // constrained output, then evaluate the law at the true errors
  auto resolve = [nf, law, reference](double t, const VectorXd& x, VectorXd& chain, VectorXd& x3,
                                      VectorXd& y_II, DaeFc::Result& u) {
    const int nc = nf.r * nf.ell;
    chain = x.head(nc);
    x3 = x.segment(nc, nf.n3());
    VectorXd e_I = nf.ell > 0 ? chain_errors(nf, law, reference, t, chain)
                              : VectorXd(0);
    VectorXd e_II(0);
    if (nf.ell < nf.m) {
      RowContext ctx = row_context(nf, law, reference, t, chain, x3);
      y_II = solve_row(ctx, nf, law);
      e_II = y_II - ctx.ref_II;
    } else {
      y_II = VectorXd(0);
    }
    u = law.control(t, e_I, e_II);
  };

  problem.rhs = [nf, resolve](double t, const VectorXd& x, const History*, double) {
    VectorXd chain, x3, y_II;
    DaeFc::Result u;
    resolve(t, x, chain, x3, y_II, u);
    const int nc = nf.r * nf.ell;
    VectorXd dx(nc + nf.n3());
    if (nf.ell > 0) {
      for (int i = 0; i + 1 < nf.r; ++i)
        dx.segment(i * nf.ell, nf.ell) = chain.segment((i + 1) * nf.ell, nf.ell);
      VectorXd top = nf.P1 * y_II + nf.S1 * x3 + nf.Gamma_hat * u.u_I;
      for (int k = 0; k < nf.r; ++k) top += nf.R1[k] * chain.segment(k * nf.ell, nf.ell);
      dx.segment((nf.r - 1) * nf.ell, nf.ell) = top;
    }
    VectorXd y_full(nf.m);
    y_full.head(nf.ell) = chain.head(nf.ell);
    y_full.tail(nf.m - nf.ell) = y_II;
    dx.tail(nf.n3()) = nf.Q * x3 + nf.A31 * y_full;
    return dx;
  };

  problem.observe = [nf, law, reference, resolve](double t, const VectorXd& x, const History*,
                                                  double) {
    VectorXd chain, x3, y_II;
    DaeFc::Result u;
    resolve(t, x, chain, x3, y_II, u);
    Sample s;
    s.t = t;
    s.y = VectorXd(nf.m);
    s.y.head(nf.ell) = chain.head(nf.ell);
    s.y.tail(nf.m - nf.ell) = y_II;
    s.u = VectorXd(nf.m);
    s.u.head(nf.ell) = u.u_I;
    s.u.tail(nf.m - nf.ell) = u.u_II;
    s.e = s.y - reference.eval(t, 0);
    if (nf.ell > 0) {
      VectorXd e_I = chain_errors(nf, law, reference, t, chain);
      s.margins = stack_margins_I(law, t, e_I);
      double top = s.margins.back();
      s.gains.push_back(law.params.alpha(top * top));
      s.psi.push_back(1.0 / law.params.phi.phi(t));
    }
    if (nf.ell < nf.m) {
      double vn = law.phi_II.phi(t) * (y_II - reference.eval(t, 0).tail(nf.m - nf.ell)).norm();
      s.margins.push_back(vn);
      s.gains.push_back(law.k_hat * law.params.alpha(vn * vn));
      s.psi.push_back(1.0 / law.phi_II.phi(t));
    }
    return s;
  };

  if (malg > 0) {
    problem.algebraic_residual = [nf, law, reference](double t, const VectorXd& x, const History*,
                                                      double) {
      VectorXd chain = x.head(nf.r * nf.ell);
      VectorXd x3 = x.segment(nf.r * nf.ell, nf.n3());
      RowContext ctx = row_context(nf, law, reference, t, chain, x3);
      return row_value(ctx, nf, law, solve_row(ctx, nf, law)).norm();
    };
  }
  return problem;
}

}  // namespace fc
