"""Runtime monitors: constraint drift, stability margin, the tension operator.

Everything here is a pure function of stored samples.  None of it feeds
back into the time stepping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hangsim.certificates import Certificate
from hangsim.mesh import Mesh
from hangsim.tension import sc1_lower_bound, state_data
from hangsim.wnorms import averaging

IDENTITY_TOL = 1e-6
SC1_REL = 1e-6


@dataclass(frozen=True)
class DriftReport:
    t: float
    drift_max: float
    drift_energy: float
    lam: float


@dataclass(frozen=True)
class StabilityReport:
    t: float
    min_ratio: float
    sc1_lower: float
    satisfied: bool
    sc1_applies: bool

    def sc1_holds(self) -> bool:
        """The lower bound, checked only where its hypotheses hold."""
        if not self.sc1_applies:
            return True
        return self.min_ratio >= self.sc1_lower * (1 - SC1_REL) - 1e-12


@dataclass(frozen=True)
class ApeReport:
    t: float
    triple_m: float
    min_tau_over_s: float
    max_tau_over_s: float
    max_dtau_over_s: float


def drift_lambda(tau, dtau) -> float:
    """Weight of the zeroth-order drift term, fixed once per run.

    Large enough that the boundary term ``2 tau tau' h^2`` at s=1 cannot
    make the energy negative for the initial tension.
    """
    return 8.0 * (1.0 + abs(float(tau[-1]) * float(dtau[-1])))


def drift_energy(mesh: Mesh, x, xdot, tau, dtau, lam: float, t: float = 0.0) -> DriftReport:
    s = mesh.nodes
    dx = mesh.derivative(x, 1)
    dv = mesh.derivative(xdot, 1)
    h = np.einsum("ij,ij->i", dx, dx) - 1.0
    hdot = 2.0 * np.einsum("ij,ij->i", dx, dv)
    dh = mesh.derivative(h, 1)
    density = lam * s * h**2 + tau * hdot**2 + tau**2 * dh**2
    energy = float(mesh.integrate(density)) + 2.0 * tau[-1] * dtau[-1] * h[-1] ** 2
    drift = float(np.max(np.abs(np.sqrt(h + 1.0) - 1.0)))
    return DriftReport(t, drift, float(energy), lam)


def stability_margin(mesh: Mesh, tau, x, xdot, g, c0: float, t: float = 0.0) -> StabilityReport:
    """min tau/s over s > 0 against c0 and the explicit lower bound.

    The bound needs the slope datum plus the weighted kinetic term to be
    nonnegative; otherwise it is reported but not asserted.
    """
    s = mesh.nodes
    q, h, a, _, _ = state_data(mesh, x, xdot, g)
    ratio = float(np.min(np.asarray(tau)[1:] / s[1:]))
    lower = sc1_lower_bound(mesh, q, h, a)
    return StabilityReport(t, ratio, lower, ratio >= c0, bool(lower >= 0))


def kinetic(mesh: Mesh, xdot) -> float:
    v = np.asarray(xdot)
    return float(mesh.integrate(np.einsum("ij,ij->i", v, v)))


def operator_Atau(mesh: Mesh, tau, dtau, u, tol: float = IDENTITY_TOL):
    """``A u = -(tau u')'`` and the identity with the averaged slope.

    With ``mu = M tau'`` (so ``tau = s mu``) the operator splits as
    ``mu A2 u + (mu - tau') u'`` where ``A2 u = -(s u')'``.  Returns the
    field, the identity certificate (relative nodal mismatch over interior
    nodes) and the ratio ``|A u| / (|s u''| + |u'|)``.
    """
    tau = np.asarray(tau, dtype=float)
    if abs(tau[0]) > 1e-12:
        raise ValueError(f"tension must vanish at the free end, got tau(0) = {tau[0]:.3e}")
    s = mesh.nodes
    u = np.asarray(getattr(u, "values", u), dtype=float)
    du = mesh.derivative(u, 1)
    d2u = mesh.derivative(u, 2)
    vec = u.ndim > 1
    col = (lambda f: f[:, None]) if vec else (lambda f: f)
    lhs = -(col(tau) * d2u + col(dtau) * du)
    mu = averaging(mesh, dtau)
    a2 = -(col(s) * d2u + du)
    rhs = col(mu) * a2 + col(mu - dtau) * du
    inner = slice(1, len(s) - 1)
    scale = max(float(np.max(np.abs(lhs[inner]))), float(np.max(np.abs(rhs[inner]))), 1.0)
    mismatch = float(np.max(np.abs(lhs[inner] - rhs[inner]))) / scale
    cert = Certificate("IdAtau", mismatch, tol, mismatch <= tol,
                       "relative nodal mismatch, interior nodes")

    def l2(f):
        f2 = f**2 if not vec else np.einsum("ij,ij->i", f, f)
        return float(np.sqrt(mesh.integrate(f2)))

    denom = l2(col(s) * d2u) + l2(du)
    ratio = l2(lhs) / denom if denom > 0 else float("nan")
    return lhs, cert, ratio


def expx_residual(mesh: Mesh, tau, dtau, dx, acc, g, trim: float = 0.1) -> float:
    """Nodal mismatch of ``x' = (M acc - g) / mu`` on ``s >= trim``."""
    s = mesh.nodes
    mu = averaging(mesh, dtau)
    mean_acc = averaging(mesh, acc)
    keep = s >= trim
    pred = (mean_acc[keep] - np.asarray(g, dtype=float)) / mu[keep, None]
    return float(np.max(np.abs(pred - np.asarray(dx)[keep])))


def ape_track(samples) -> list[ApeReport]:
    """Per-sample tension envelope and the stored fourth triple-bar norm.

    ``samples`` need attributes ``t``, ``tau``, ``mesh`` and ``triplebar4``.
    The tension's time derivative comes from centred differences across
    neighbouring samples (one-sided at the ends of the track).
    """
    if len(samples) < 2:
        raise ValueError("time differencing needs at least two samples")
    t = np.array([smp.t for smp in samples])
    taus = np.array([smp.tau for smp in samples])
    dtau_dt = np.gradient(taus, t, axis=0)
    s = samples[0].mesh.nodes
    out = []
    for k, smp in enumerate(samples):
        ratio = taus[k, 1:] / s[1:]
        out.append(ApeReport(
            float(t[k]), float(smp.triplebar4), float(ratio.min()), float(ratio.max()),
            float(np.max(np.abs(dtau_dt[k, 1:]) / s[1:])),
        ))
    return out
