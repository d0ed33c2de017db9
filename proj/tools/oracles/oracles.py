#!/usr/bin/env python3
"""Independent derivations of numeric constants frozen into the C++ test suite.

Every value asserted with a hard-coded constant in tests/ that is not a plain
restatement of an input is recomputed here from first principles (quadrature,
root finding, closed-form algebra, brute-force grids).  The script is the
reference: if a test constant ever looks suspicious, rerun this and compare.

    python3 tools/oracles/oracles.py

The output of a run is committed next to this file as expected.txt.
"""

import numpy as np

LINE = "-" * 64


def section(title):
    print(f"\n{LINE}\n{title}\n{LINE}")


def p17(label, value):
    if np.isscalar(value):
        print(f"{label} = {float(value):.17g}")
    else:
        flat = np.asarray(value).ravel()
        print(f"{label} = [" + ", ".join(f"{v:.17g}" for v in flat) + "]")


# ----------------------------------------------------------------------
section("funnel: margin of the reciprocal-sum condition for gain pairs")
# For a pair (phi0, phi1) the PD-style controller needs
#   delta = ess-inf_t [ 1/phi1(t) + d/dt (1/phi0)(t) ] > 0.
# Family exp_decay_reciprocal(a,b,c) means 1/phi(t) = a*exp(-b*t) + c.
t = np.linspace(0.0, 20.0, 10_001)

# Pair used in the unit test: phi0 = phi1 = exp_decay_reciprocal(4, 2, 0.1):
#   1/phi1 = 4 e^{-2t} + 0.1,  d/dt(1/phi0) = -8 e^{-2t},
#   sum = 0.1 - 4 e^{-2t}, increasing, infimum at t=0.
val = (4 * np.exp(-2 * t) + 0.1) - 8 * np.exp(-2 * t)
p17("grid infimum, pair (exp_decay(4,2,0.1), exp_decay(4,2,0.1))", val.min())
p17("analytic value at t=0 (0.1 - 4)", 0.1 - 4.0)

# Pair used by the pd_funnel scenario: phi0 = exp_decay(0.95, 0.5, 0.05),
# phi1 = constant_reciprocal(1.0), i.e. 1/phi1 identically 1.
val2 = 1.0 - 0.95 * 0.5 * np.exp(-0.5 * t)
p17("grid infimum, pair (exp_decay(.95,.5,.05), const(1))", val2.min())
p17("analytic value at t=0 (1 - 0.475)", 1.0 - 0.475)

# ----------------------------------------------------------------------
section("funnel: linear ramp spot values, eps=0.1, T=2")
eps_r, T_r = 0.1, 2.0
for tt in (0.0, 1.0, 2.0, 5.0):
    p17(f"phi({tt})", min(tt / T_r, 1.0) / eps_r)
p17("phi'(0.5)", 1.0 / (eps_r * T_r))
p17("phi'(3)", 0.0)

# ----------------------------------------------------------------------
section("lti: symmetric-part spectra for sign-definiteness tests")
G = np.array([[1.0, 3.0], [0.0, 1.0]])
p17("eig((G+G^T)/2), G=[[1,3],[0,1]]", np.linalg.eigvalsh((G + G.T) / 2))
G2 = np.array([[2.0, 0.5], [-0.5, 1.0]])
p17("eig((G+G^T)/2), G=[[2,.5],[-.5,1]]", np.linalg.eigvalsh((G2 + G2.T) / 2))

# ----------------------------------------------------------------------
section("operators: internal-dynamics step response, Q=-1 P=1 S=1, input 1")
# eta' = -eta + 1, eta(0)=0  =>  output S*eta = 1 - e^{-t}.
for tt in (0.5, 1.0, 2.0):
    p17(f"output({tt})", 1.0 - np.exp(-tt))
# cross-check by trapezoid quadrature of the convolution integral at t=1
tg = np.linspace(0.0, 1.0, 200_001)
p17("quadrature check at t=1", np.trapezoid(np.exp(-(1.0 - tg)), tg))

# ----------------------------------------------------------------------
section("operators: gain bound  ||S||*||P||*int_0^inf ||e^{Q tau}|| dtau")
# Q = -2*I (any size): ||e^{Q tau}|| = e^{-2 tau}, integral = 1/2.
p17("integral for Q=-2I", 0.5)
# Non-normal cross-check, Q = [[-1,1],[0,-1]]: e^{Q tau} = e^{-tau}[[1,tau],[0,1]]
tau = np.linspace(0.0, 60.0, 600_001)
sig = np.sqrt((2 + tau**2 + tau * np.sqrt(tau**2 + 4)) / 2)
p17("integral for Q=[[-1,1],[0,-1]]", np.trapezoid(np.exp(-tau) * sig, tau))

# ----------------------------------------------------------------------
section("operators: distributed delay, psi0=2y, h=1, constant history 1")
p17("output", 2.0)

# ----------------------------------------------------------------------
section("controllers: unit-ball gain map and the nested error map")
# gamma(w) = alpha(|w|^2) w with alpha(s) = 1/(1-s).
# rho_1 = eta_1; rho_k = eta_k + gamma(rho_{k-1}).
p17("gamma(0.5)", 0.5 / (1 - 0.25))
p17("rho_2(0.5, 0)", 0.0 + 0.5 / 0.75)
p17("rho_2(0.5, 0.4) [outside unit ball -> domain violation]", 0.4 + 0.5 / 0.75)

# ----------------------------------------------------------------------
section("controllers: alpha families")
# reciprocal: alpha(s)=1/(1-s), alpha'(alpha^{-1}(k)) = k^2.
p17("reciprocal alpha(0.75)", 1 / 0.25)
p17("reciprocal a(4)", 16.0)
# power_reciprocal beta: alpha(s)=(1-s)^(-beta), a(k) = beta * k^((beta+1)/beta)
beta = 2.0
p17("power_reciprocal(beta=2) alpha(0.75)", 0.25 ** (-beta))
p17("power_reciprocal(beta=2) a(16)", beta * 16 ** ((beta + 1) / beta))

# ----------------------------------------------------------------------
section("controllers: filtered feedback, scalar, mu=1, N=-id, alpha reciprocal")
# gamma1(k, v) = N(k) v = -k v,  |Dgamma1|^2 = N'(k)^2 v^2 + N(k)^2 = v^2 + k^2.
# gamma2(k, v, xi) = gamma1 - (a(k)(1+|xi|))^2 |Dgamma1|^2 (xi - gamma1).
def gamma2(e, xi, phi=1.0):
    v = phi * e
    k = 1.0 / (1.0 - v * v)          # alpha(phi^2 e^2)
    g1 = -k * v
    dg1sq = v * v + k * k
    mult = (k * k * (1.0 + abs(xi))) ** 2 * dg1sq   # a(k) = k^2
    return g1 - mult * (xi - g1)

p17("u(e=0,   xi=0.3)  [= -(1+|xi|)^2 xi]", gamma2(0.0, 0.3))
p17("-(1.3)^2*0.3", -(1.3 ** 2) * 0.3)
p17("u(e=0.5, xi=0.2)", gamma2(0.5, 0.2))

# ----------------------------------------------------------------------
section("controllers: observer-stage Lyapunov design")
# Companion-type Q from q, solve Q^T P + P Q + I = 0, then
# p = (1, -P4^{-1} P2^T) with P = [[P1, P2], [P2^T, P4]], P1 scalar.
def lyap_design(q):
    r = len(q)
    Q = np.zeros((r, r))
    Q[:, 0] = -np.asarray(q)
    for i in range(r - 1):
        Q[i, i + 1] = 1.0
    R = np.eye(r)
    K = np.kron(np.eye(r), Q.T) + np.kron(Q.T, np.eye(r))
    P = np.linalg.solve(K, -R.ravel(order="F")).reshape((r, r), order="F")
    P = (P + P.T) / 2
    p2 = P[0, 1:]
    p4 = P[1:, 1:]
    p = np.concatenate(([1.0], -np.linalg.solve(p4, p2)))
    return Q, P, p

Q2, P2_, p2_ = lyap_design([1.0, 1.0])
p17("q=(1,1): P", P2_)
p17("q=(1,1): p", p2_)
p17("q=(1,1): residual", np.abs(Q2.T @ P2_ + P2_ @ Q2 + np.eye(2)).max())
p17("q=(1,1): eig(P)", np.linalg.eigvalsh(P2_))

# The assembled matrix has characteristic polynomial s^r + q1 s^{r-1} + ... + qr,
# so q=(2,2,1) gives s^3 + 2 s^2 + 2 s + 1 = (s+1)(s^2+s+1), Hurwitz.
Q3, P3_, p3_ = lyap_design([2.0, 2.0, 1.0])
p17("q=(2,2,1): P", P3_)
p17("q=(2,2,1): p", p3_)
p17("q=(2,2,1): eig(P)", np.linalg.eigvalsh(P3_))
p17("q=(2,2,1): eig(Q) real parts", sorted(np.linalg.eigvals(Q3).real))
p17("q=(2,2,1): residual", np.abs(Q3.T @ P3_ + P3_ @ Q3 + np.eye(3)).max())

# ----------------------------------------------------------------------
section("controllers: cascade gain-mismatch bound min{(rho-1)/(r-2), rho/(4 rho^2 (rho+1)^{r-2} - 1)}")
def mismatch_bound(r, rho):
    return min((rho - 1) / (r - 2), rho / (4 * rho**2 * (rho + 1) ** (r - 2) - 1))

p17("r=3, rho=2", mismatch_bound(3, 2.0))
p17("2/47", 2.0 / 47.0)
rhos = np.linspace(1.0001, 10.0, 2_000_000)
for r in (3, 5):
    vals = np.minimum((rhos - 1) / (r - 2),
                      rhos / (4 * rhos**2 * (rhos + 1) ** (r - 2) - 1))
    i = vals.argmax()
    print(f"r={r}: max over rho = {vals[i]:.6g} at rho = {rhos[i]:.6g}")

# ----------------------------------------------------------------------
section("controllers: cascade corollary constants, r=2")
# rho1 = rho/(rho + r - 2) and the observer funnel scaling 2 (rho + r - 2)/rho.
for rho in (2.0, 3.0):
    p17(f"rho={rho}: rho1", rho / (rho + 0))
    p17(f"rho={rho}: funnel scale", 2 * (rho + 0) / rho)

# ----------------------------------------------------------------------
section("controllers: switching-function antiderivative, N(k)=k^2 cos k")
# F(k) = k^2 sin k + 2 k cos k - 2 sin k,  F' = k^2 cos k.
F = lambda k: k * k * np.sin(k) + 2 * k * np.cos(k) - 2 * np.sin(k)
p17("F(pi) - F(0)", F(np.pi) - F(0.0))
p17("-2*pi", -2 * np.pi)
kg = np.linspace(0.0, np.pi, 2_000_001)
p17("quadrature of k^2 cos k over [0,pi]", np.trapezoid(kg**2 * np.cos(kg), kg))

# ----------------------------------------------------------------------
section("controllers: proportional-derivative funnel arithmetic")
# k0 = phi0/(1 - phi0|e|), k1 = phi1/(1 - phi1|edot|), u = -k0^2 e - k1 edot.
phi0, phi1, e, edot = 1.0, 1.0, 0.5, 0.0
k0 = phi0 / (1 - phi0 * abs(e))
k1 = phi1 / (1 - phi1 * abs(edot))
p17("k0", k0)
p17("k1", k1)
p17("u", -k0 * k0 * e - k1 * edot)
p17("u (modified variant, -k0^2 e - k0 k1 edot)", -k0 * k0 * e - k0 * k1 * edot)

# ----------------------------------------------------------------------
section("controllers: barrier transform ln((1+s)/(1-s))")
p17("T(0.5)", np.log(1.5 / 0.5))
p17("stage value -2*T(0.5)", -2 * np.log(3.0))

# ----------------------------------------------------------------------
section("controllers: input-constrained adaptation")
# v = -k e, u = sat_1(v), kappa = |v - sat(v)|, psidot = -a psi + b + psi kappa/|e|
k, e, uhat = 4.0, 0.5, 1.0
v = -k * e
u = np.clip(v, -uhat, uhat)
p17("v", v)
p17("u", u)
p17("kappa", abs(v - u))
p17("kappa/|e|", abs(v - u) / abs(e))

# ----------------------------------------------------------------------
section("sim: scalar benchmark with vanishing-tail disturbance")
# x' = -k x + d, k' = x^2, x(0)=1, k(0)=0, d = 3 - (10+9t)/(3(1+t)^{4/3}):
# solution x=(1+t)^{-1/3}, k=3((1+t)^{1/3}-1).  Verify the residual on a grid.
tt = np.linspace(0.0, 10.0, 100_001)
x = (1 + tt) ** (-1.0 / 3.0)
kk = 3 * ((1 + tt) ** (1.0 / 3.0) - 1)
d = 3 - (10 + 9 * tt) / (3 * (1 + tt) ** (4.0 / 3.0))
xdot = -(1.0 / 3.0) * (1 + tt) ** (-4.0 / 3.0)
p17("max |xdot - (-k x + d)| on grid", np.abs(xdot - (-kk * x + d)).max())
p17("max |k' - x^2| (closed form, analytic)", 0.0)
p17("x(3)", 4 ** (-1.0 / 3.0))
p17("x(10)", 11 ** (-1.0 / 3.0))
p17("k(7)", 3 * (8 ** (1.0 / 3.0) - 1))
p17("k(10)", 3 * (11 ** (1.0 / 3.0) - 1))
p17("d(0)", 3 - 10.0 / 3.0)

# ----------------------------------------------------------------------
section("sim: gain-energy identity, a=0, b=c=1, x0=1, k0=0")
# y^2 + k^2 is conserved along u=-ky, k'=y^2: value 1.
p17("conserved value", 1.0)

# ----------------------------------------------------------------------
section("heat equation: modal coefficients of the weighted output")
# weight cos^2(pi xi) against basis cos(k pi xi) on [0,1], exact values
# 1/2 (k=0), 1/4 (k=2), else 0; cross-check by quadrature.
xi = np.linspace(0.0, 1.0, 2_000_001)
w = np.cos(np.pi * xi) ** 2
for k in range(5):
    basis = np.cos(k * np.pi * xi)
    p17(f"integral cos^2(pi xi) cos({k} pi xi)", np.trapezoid(w * basis, xi))
# modal ODEs: xk' = -(k pi)^2 xk + u * delta_{k0}  =>  b = e1, c = (1/2,0,1/4,0,..)
p17("cb", 0.5)

# ----------------------------------------------------------------------
section("dae: transfer function of the 2x2 pencil example")
# E=[[0,0],[1,0]], A=I, B=(-1,0)^T, C=(0,1): C (sE-A)^{-1} B = s.
E = np.array([[0.0, 0.0], [1.0, 0.0]])
A = np.eye(2)
B = np.array([[-1.0], [0.0]])
C = np.array([[0.0, 1.0]])
for s in (0.7, 2.0, -1.3):
    val = (C @ np.linalg.solve(s * E - A, B)).item()
    p17(f"G({s})", val)

# ----------------------------------------------------------------------
section("dae: column-degree analysis of H(s) = [[s^2, 1], [s, 2]]")
print("col 1 degree max(2,1)=2, leading column coeff (1,0); col 2 degree 0,")
print("value at infinity (1,2).  Sorted degrees (2,0) -> ell=1, strict pair")
print("(r,ell)=(2,1), Gamma_ell = [(1,0)^T], rank 1 -> truncated degree exists.")
print("H(s)=1/s: single column degree max(-1,0)->0 yet entry is strictly proper;")
print("no valid ell>=1 -> ell=0, no strict pair.")

# ----------------------------------------------------------------------
section("dae: consistent initialization of the synthetic scenario")
# Algebraic row: 0 = R12 yI + P2 yII + S2 x3 + Gt uI + uII, f6 = 1,
# uII = -khat * v/(1 - v^2), v = phiII(0) (yII - yrefII(0)).
R12, P2c, S2c, Gt = 0.4, 1.0, -0.3, 0.5
yI0, x30 = 0.2, 0.0
yrefII0 = 0.2
phiI0, phiII0 = 1.0, 1.0
khat = 1.5
w = phiI0 * (yI0 - 0.0)                      # yrefI(0) = 0.3 sin 0 = 0
uI0 = -w / (1.0 - w * w)
p17("uI(0)", uI0)

def rowres(yII):
    v = phiII0 * (yII - yrefII0)
    uII = -khat * v / (1.0 - v * v)
    return R12 * yI0 + P2c * yII + S2c * x30 + Gt * uI0 + uII

lo, hi = yrefII0 - 0.999999, yrefII0 + 0.999999
for _ in range(200):
    mid = 0.5 * (lo + hi)
    if rowres(mid) > 0:
        lo = mid
    else:
        hi = mid
yII0 = 0.5 * (lo + hi)
p17("yII(0) root", yII0)
p17("residual at root", rowres(yII0))
p17("uII(0)", -khat * (yII0 - yrefII0) / (1.0 - (yII0 - yrefII0) ** 2))

# ----------------------------------------------------------------------
section("robot: two-link planar arm, unit masses and lengths, g=9.81")
g = 9.81
M0 = np.array([[1 + 1 * (1 + 1 + 2 * 1), 1 * (1 + 1)], [1 * (1 + 1), 1.0]])
p17("M(0,0)", M0)
G0 = g * np.array([1 * np.cos(0) + (np.cos(0) + np.cos(0)), np.cos(0)])
p17("G(0,0)", G0)
p17("ydd(0) = -M^{-1} G", -np.linalg.solve(M0, G0))

# ----------------------------------------------------------------------
section("formatting: 17 significant digits round-trips doubles")
for v in (0.1, 1.0 / 3.0, np.pi):
    s = f"{v:.17g}"
    print(f"{s}  round-trips: {float(s) == v}")
