"""Tension of the hanging string from the two-point problem

    -tau'' + q tau = h  on (0, 1),   tau(0) = 0,   tau'(1) = a,

with ``q = |x''|^2 >= 0``.  The primary path builds the Green's function from
the fundamental pair (phi shot from the free end, psi shot from the fixed
end) and assembles tau and tau' from it.  A plain finite-difference solve is
kept as an independent check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded

from hangsim.certificates import Certificate, worst_of
from hangsim.mesh import Mesh, fornberg_weights

log = logging.getLogger(__name__)

DRIFT_WARN = 1e-2
# forcing of the phi-dot equation is -2 (xdot''.x'') phi; the Gronwall
# argument carries the 2 into the constant
DTPHI_CONSTANT = 2.0


class TensionError(ArithmeticError):
    """The discrete problem is inconsistent (non-finite data, singular system)."""


@dataclass(frozen=True, eq=False)
class FundamentalPair:
    mesh: Mesh
    phi: np.ndarray
    dphi: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray

    @property
    def wronskian(self) -> float:
        """Nominal (constant) Wronskian, ``-phi'(1)``."""
        return -float(self.dphi[-1])

    def wronskian_profile(self) -> np.ndarray:
        return self.phi * self.dpsi - self.dphi * self.psi


@dataclass(eq=False)
class TensionSolve:
    mesh: Mesh
    tau: np.ndarray
    dtau: np.ndarray
    a: float
    h: np.ndarray
    q: np.ndarray
    pair: FundamentalPair | None
    certificates: list = field(default_factory=list)
    q_clipped: float = 0.0

    def residual(self, trim: int = 2) -> float:
        """Discrete L2 norm of ``-tau'' + q tau - h`` away from the ends."""
        mesh = self.mesh
        r = -mesh.derivative(self.tau, 2) + self.q * self.tau - self.h
        s = mesh.nodes
        inner = slice(trim, len(s) - trim)
        return float(np.sqrt(trapezoid(r[inner] ** 2, s[inner])))

    def failed(self) -> list:
        return [c for c in self.certificates if not c.satisfied]


def _clip_potential(q) -> tuple[np.ndarray, float]:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise TensionError("potential |x''|^2 has non-finite entries")
    clipped = float(np.max(-q, initial=0.0))
    if clipped > 0.0:
        log.debug("clipped negative potential, worst %.3e", clipped)
    return np.maximum(q, 0.0), clipped


# 2x2 matrices are carried as stacked entries (m00, m01, m10, m11), each an
# array over mesh intervals; numpy's batched matmul is slow at this size.

def _mul(a, b):
    a00, a01, a10, a11 = a
    b00, b01, b10, b11 = b
    return (a00 * b00 + a01 * b10, a00 * b01 + a01 * b11,
            a10 * b00 + a11 * b10, a10 * b01 + a11 * b11)


def _prefix_products(m):
    """``out[i] = m[i] @ m[i-1] @ ... @ m[0]`` by log-depth doubling."""
    out = [e.copy() for e in m]
    d = 1
    n = len(out[0])
    while d < n:
        upd = _mul([e[d:] for e in out], [e[:-d] for e in out])
        for e, u in zip(out, upd):
            e[d:] = u
        d *= 2
    return out


def _rk4_propagators(q0, qm, q1, h):
    """RK4 step matrices for ``y' = [[0, 1], [q, 0]] y`` over steps ``h``.

    ``q0`` is the potential at the start of each step, ``qm`` at its
    midpoint and ``q1`` at its end; ``h`` may be negative.
    """
    def a_times(q, m):
        m00, m01, m10, m11 = m
        return (m10, m11, q * m00, q * m01)

    def eye_plus(c, k):
        return (1.0 + c * k[0], c * k[1], c * k[2], 1.0 + c * k[3])

    one = np.ones_like(h)
    zero = np.zeros_like(h)
    k1 = (zero, one, q0, zero)
    k2 = a_times(qm, eye_plus(0.5 * h, k1))
    k3 = a_times(qm, eye_plus(0.5 * h, k2))
    k4 = a_times(q1, eye_plus(h, k3))
    total = tuple(a + 2.0 * b + 2.0 * c + d for a, b, c, d in zip(k1, k2, k3, k4))
    return eye_plus(h / 6.0, total)


def solve_fundamental(mesh: Mesh, q) -> FundamentalPair:
    """Shoot phi (phi(0)=0, phi'(0)=1) rightward and psi (psi(1)=1, psi'(1)=0)
    leftward through ``-u'' + q u = 0`` with classical RK4 on the mesh."""
    q, _ = _clip_potential(mesh._check(q))
    qm = np.maximum(mesh.midpoints(q), 0.0)
    h = mesh.spacing
    n = len(q)

    fwd = _prefix_products(_rk4_propagators(q[:-1], qm, q[1:], h))
    phi = np.empty(n)
    dphi = np.empty(n)
    phi[0], dphi[0] = 0.0, 1.0
    phi[1:] = fwd[1]
    dphi[1:] = fwd[3]

    back = _rk4_propagators(q[1:], qm, q[:-1], -h)
    back = _prefix_products([e[::-1] for e in back])
    psi = np.empty(n)
    dpsi = np.empty(n)
    psi[-1], dpsi[-1] = 1.0, 0.0
    psi[:-1] = back[0][::-1]
    dpsi[:-1] = back[2][::-1]
    return FundamentalPair(mesh, phi, dphi, psi, dpsi)


def greens_function(pair: FundamentalPair, s, r):
    """G(s, r) built from the fundamental pair; vectorized over ``s`` and ``r``."""
    nodes = pair.mesh.nodes
    phi = CubicHermiteSpline(nodes, pair.phi, pair.dphi)
    psi = CubicHermiteSpline(nodes, pair.psi, pair.dpsi)
    s, r = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(r, dtype=float))
    lo = np.minimum(s, r)
    hi = np.maximum(s, r)
    return phi(lo) * psi(hi) / pair.dphi[-1]


def _moment(mesh: Mesh, f) -> float:
    return float(mesh.interval_integrals(f, 4).sum())


def _potential_moment(mesh: Mesh, q, power: float = 0.0) -> float:
    """``int s^power q`` by the Simpson rule the shooting integrator sees.

    RK4 samples the potential at both ends and the midpoint of each step,
    so the fundamental pair solves the equation for exactly this integral
    of q.  Bounds built from it are then sharp for the computed pair even
    when q is rough (it is a squared second difference).
    """
    s = mesh.nodes
    q = np.maximum(np.asarray(q, dtype=float), 0.0)
    qm = np.maximum(mesh.midpoints(q), 0.0)
    sm = 0.5 * (s[:-1] + s[1:])
    w = s**power
    return float(np.sum(mesh.spacing / 6.0 * (w[:-1] * q[:-1] + 4.0 * sm**power * qm
                                              + w[1:] * q[1:])))


def solve_bvp(mesh: Mesh, q, h, a: float, *, pair: FundamentalPair | None = None,
              certify: bool = True) -> TensionSolve:
    """Tension and its slope from the Green's-function representation.

    tau' comes from differentiating the representation analytically, not
    from differencing tau.
    """
    q, clipped = _clip_potential(mesh._check(q))
    h = np.asarray(mesh._check(h), dtype=float)
    a = float(a)
    if not (np.all(np.isfinite(h)) and np.isfinite(a)):
        raise TensionError("right-hand side or slope datum is not finite")
    if pair is None:
        pair = solve_fundamental(mesh, q)
    d1 = pair.dphi[-1]
    if abs(d1) < 1e-14:
        raise TensionError(f"phi'(1) = {d1:.3e}; the potential cannot be nonnegative")
    left = mesh.cumulative(pair.phi * h, 4)
    right = mesh.cumulative_from_right(pair.psi * h, 4)
    tau = (a * pair.phi + pair.psi * left + pair.phi * right) / d1
    dtau = (a * pair.dphi + pair.dpsi * left + pair.dphi * right) / d1
    out = TensionSolve(mesh, tau, dtau, a, h, q, pair, q_clipped=clipped)
    if certify:
        out.certificates = certify_solve(out)
    return out


def solve_bvp_oracle(mesh: Mesh, q, h, a: float) -> TensionSolve:
    """Second-order finite differences with a tridiagonal solve.

    Dirichlet row at s=0; at s=1 a one-sided second-order slope row, folded
    into tridiagonal form with the neighbouring interior row.
    """
    q, clipped = _clip_potential(mesh._check(q))
    h = np.asarray(mesh._check(h), dtype=float)
    s = mesh.nodes
    n = len(s)
    dx = np.diff(s)
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    rhs = h.copy()

    diag[0] = 1.0
    rhs[0] = 0.0
    hl, hr = dx[:-1], dx[1:]
    c = 2.0 / (hl + hr)
    sub[1:-1] = -c / hl
    sup[1:-1] = -c / hr
    diag[1:-1] = c / hl + c / hr + q[1:-1]

    w = fornberg_weights(s[-1], s[-3:], 1)[:, 1]
    # eliminate tau_{n-3} from the slope row using interior row n-2
    f = w[0] / sub[-2]
    sub[-1] = w[1] - f * diag[-2]
    diag[-1] = w[2] - f * sup[-2]
    rhs[-1] = a - f * rhs[-2]

    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1] = diag
    ab[2, :-1] = sub[1:]
    try:
        tau = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise TensionError(f"finite-difference system is singular: {exc}") from exc
    if not np.all(np.isfinite(tau)):
        raise TensionError("finite-difference system is singular")
    dtau = fornberg_derivative(s, tau)
    return TensionSolve(mesh, tau, dtau, float(a), h, q, None, q_clipped=clipped)


def fornberg_derivative(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Three-point first derivative, one-sided at both ends."""
    n = len(s)
    out = np.empty(n)
    for i in range(n):
        lo = min(max(i - 1, 0), n - 3)
        out[i] = fornberg_weights(s[i], s[lo:lo + 3], 1)[:, 1] @ f[lo:lo + 3]
    return out


def certify_fundamental(pair: FundamentalPair, q) -> list:
    """Wronskian constancy and the explicit bounds on phi and psi."""
    mesh = pair.mesh
    s = mesh.nodes
    q = np.maximum(np.asarray(q, dtype=float), 0.0)
    log_e = _potential_moment(mesh, q, 1.0)
    big_e = np.exp(log_e)
    w = pair.wronskian_profile()
    d1 = pair.dphi[-1]
    certs = [
        Certificate(
            "Wronskian",
            float(np.max(np.abs(w + d1)) / abs(d1)),
            1e-6,
            bool(np.max(np.abs(w + d1)) / abs(d1) <= 1e-6),
            "max |W(s) + phi'(1)| / phi'(1)",
        ),
        worst_of(
            "EstPhi",
            [
                (1.0, pair.dphi),
                (pair.dphi, big_e),
                (s, pair.phi),
                (pair.phi, s * big_e),
            ],
            detail="1 <= phi' <= E, s <= phi <= s E",
        ),
    ]
    psi_pairs = [(1.0, pair.psi), (pair.psi, big_e), (pair.dpsi, 0.0)]
    for alpha in (0.0, 1.0):
        bound = _potential_moment(mesh, q, alpha) * big_e
        psi_pairs.append((-bound, s**alpha * pair.dpsi))
    certs.append(worst_of("EstPsi", psi_pairs, detail="1 <= psi <= E, -C_a <= s^a psi' <= 0"))
    return certs


def certify_solve(sol: TensionSolve) -> list:
    """Certificates for every explicit estimate on phi, psi, tau and tau'.

    With ``E = exp(int s q)`` the constants are those obtained by carrying
    the bounds on phi and psi through the Green's representation:

    * sign case (h >= 0): ``s (a + |s h|_1 / E) / E <= tau <= s (a + |h|_1)``
      and ``a - (a + |h|_1) log E <= tau' <= a + |h|_1``;
    * any sign, alpha in [0, 1]: ``|tau| <= |a| s + E^2 |s^alpha h|_1 s^(1-alpha)``
      and ``s^alpha |tau'| <= |a| s^alpha + (E + E^2 log E) |s^alpha h|_1``;
    * L^p, alpha + 1/p <= 1: ``|s^alpha tau'|_p <= |a| (alpha p + 1)^(-1/p)
      + (E^2 log E + E (alpha + 1/p)^(-1/p)) |s^(alpha + 1/p) h|_1``.
    """
    mesh = sol.mesh
    s = mesh.nodes
    q, h, a = sol.q, sol.h, sol.a
    tau, dtau = sol.tau, sol.dtau
    log_e = _potential_moment(mesh, q, 1.0)
    big_e = np.exp(log_e)
    certs = certify_fundamental(sol.pair, q) if sol.pair is not None else []

    h_l1 = _moment(mesh, np.abs(h))
    sh_l1 = _moment(mesh, s * np.abs(h))
    if np.all(h >= 0) and a + sh_l1 / big_e >= 0:
        certs.append(worst_of(
            "EstSolBVP1",
            [
                (s * (a + sh_l1 / big_e) / big_e, tau),
                (tau, s * (a + h_l1)),
                (a - (a + h_l1) * log_e, dtau),
                (dtau, a + h_l1),
            ],
            detail="sign case",
        ))

    pairs = []
    for alpha in (0.0, 0.5, 1.0):
        k = _moment(mesh, s**alpha * np.abs(h))
        pairs.append((np.abs(tau), abs(a) * s + big_e**2 * k * s ** (1.0 - alpha)))
        pairs.append((s**alpha * np.abs(dtau),
                      abs(a) * s**alpha + (big_e + big_e**2 * log_e) * k))
    certs.append(worst_of("EstSolBVP2", pairs, detail="alpha in {0, 1/2, 1}"))

    pairs = []
    for p, alphas in ((1.0, (0.0,)), (2.0, (0.0, 0.5)), (np.inf, (0.0, 0.5, 1.0))):
        inv_p = 0.0 if np.isinf(p) else 1.0 / p
        for alpha in alphas:
            k = _moment(mesh, s ** (alpha + inv_p) * np.abs(h))
            if np.isinf(p):
                lhs = np.max(s**alpha * np.abs(dtau))
                c_a, c_h = 1.0, 1.0
            else:
                lhs = _moment(mesh, (s**alpha * np.abs(dtau)) ** p) ** inv_p
                c_a = (alpha * p + 1.0) ** -inv_p
                c_h = (alpha + inv_p) ** -inv_p
            pairs.append((lhs, abs(a) * c_a + (big_e**2 * log_e + big_e * c_h) * k))
    certs.append(worst_of("EstSolBVP3", pairs, detail="p in {1, 2, inf}"))
    return certs


def sc1_lower_bound(mesh: Mesh, q, h, a: float) -> float:
    """Explicit lower bound for min tau/s when h >= 0.

    ``(a + |s h|_1 / E) / E`` with ``E = exp(int s q)``; the second factor of
    1/E is the constant hidden in the usual ``tau/s >~ a + |s h|_1 / E``.
    """
    s = mesh.nodes
    big_e = np.exp(_potential_moment(mesh, q, 1.0))
    return float((a + _moment(mesh, s * h) / big_e) / big_e)


def state_data(mesh: Mesh, x, xdot, g):
    """Potential, right-hand side and slope datum of the tension problem."""
    x = mesh._check(x)
    xdot = mesh._check(xdot)
    dx = mesh.derivative(x, 1)
    ddx = mesh.derivative(x, 2)
    dv = mesh.derivative(xdot, 1)
    q = np.einsum("ij,ij->i", ddx, ddx)
    h = np.einsum("ij,ij->i", dv, dv)
    a = -float(np.dot(np.asarray(g, dtype=float), dx[-1]))
    return q, h, a, dx, ddx


def tension_from_state(mesh: Mesh, x, xdot, g, *, certify: bool = True) -> TensionSolve:
    """Solve for the tension of configuration ``x`` moving with velocity ``xdot``."""
    q, h, a, dx, _ = state_data(mesh, x, xdot, g)
    drift = float(np.max(np.abs(np.linalg.norm(dx, axis=1) - 1.0)))
    if drift > DRIFT_WARN:
        log.warning("tangent length drift %.3e exceeds %.0e", drift, DRIFT_WARN)
    sol = solve_bvp(mesh, q, h, a, certify=certify)
    if certify:
        lower = sc1_lower_bound(mesh, q, h, a)
        s = mesh.nodes
        ratio = float(np.min(sol.tau[1:] / s[1:]))
        if np.all(h >= 0) and lower >= 0:
            sol.certificates.append(Certificate(
                "SC1", lower, ratio, bool(ratio >= lower * (1 - 1e-6) - 1e-12),
                "min tau/s against the explicit lower bound",
            ))
    return sol


def dtphi_certificate(mesh: Mesh, x_before, x_after, span: float, x, xdot,
                      tol: float = 1e-8) -> Certificate:
    """Time-derivative bound on phi from a centred difference.

    ``x_before`` and ``x_after`` are configurations ``span`` apart in time,
    centred on ``(x, xdot)``.  The bound is
    ``2 |s^(1/2) xdot''| |s^(1/2) x''| exp(2 |s^(1/2) x''|^2)`` on phi-dot'
    (times s on phi-dot).  The factor 2 comes from ``d/dt |x''|^2 =
    2 x''.xdot''``; without it the bound fails on smooth curves (see
    DTPHI_CONSTANT).
    """
    if span <= 0:
        raise ValueError("need two distinct stored states")
    s = mesh.nodes

    def curvature(y):
        d2 = mesh.derivative(y, 2)
        return np.einsum("ij,ij->i", d2, d2)

    phi_b = solve_fundamental(mesh, curvature(x_before))
    phi_a = solve_fundamental(mesh, curvature(x_after))
    dt_phi = (phi_a.phi - phi_b.phi) / span
    dt_dphi = (phi_a.dphi - phi_b.dphi) / span
    d2x = mesh.derivative(x, 2)
    d2v = mesh.derivative(xdot, 2)
    wx = np.sqrt(_potential_moment(mesh, np.einsum("ij,ij->i", d2x, d2x), 1.0))
    wv = np.sqrt(_moment(mesh, s * np.einsum("ij,ij->i", d2v, d2v)))
    bound = DTPHI_CONSTANT * wv * wx * np.exp(2.0 * wx**2)
    return worst_of(
        "EstDtPhi",
        [(np.abs(dt_dphi), bound), (np.abs(dt_phi), s * bound)],
        tol=tol,
        detail="centred time difference of phi",
    )
