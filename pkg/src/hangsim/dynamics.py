"""Time stepping for the hanging string.

The unknowns are the position ``x(s, t)`` and velocity; the tension is not
evolved but re-solved from ``(x, xdot)`` whenever the acceleration

    xddot = (tau x')' + g = tau x'' + tau' x' + g

is needed.  The fixed end s=1 is pinned by overwriting its node.  Nothing
is imposed at the free end s=0, where the tension vanishes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import j0, j1, jn_zeros

from hangsim import diagnostics
from hangsim.mesh import Mesh, build_mesh, mesh_from_nodes
from hangsim.tension import TensionError, TensionSolve, solve_bvp, tension_from_state
from hangsim.wnorms import triple_bar

log = logging.getLogger(__name__)

CFL_SAFETY = 0.5
DT_MAX = 0.01
EXACT_TOL = 1e-10
# constraint check for data known only through nodal samples: the tangent
# then comes from the mesh stencil and carries its truncation error
SAMPLED_TOL = 1e-3
STABILITY_GRACE = 10
NEGATIVE_TOL = 1e-10


class CFLError(ValueError):
    pass


class DataError(ValueError):
    """Initial data violate the constraints or the boundary condition."""


class NumericalAbort(ArithmeticError):
    pass


@dataclass(frozen=True)
class SimConfig:
    N: int = 200
    gamma: float = 2.0
    order: int = 2
    g: tuple = (0.0, 0.0, -1.0)
    dt: float | str = "auto"
    T_end: float = 1.0
    c0: float = 0.0
    renormalize: bool = False
    sample_every: int = 10
    initial: str = "stationary"

    def __post_init__(self):
        g = tuple(float(c) for c in self.g)
        if len(g) != 3:
            raise ValueError("g needs three components")
        norm = math.sqrt(sum(c * c for c in g))
        if not (norm == 0.0 or abs(norm - 1.0) <= 1e-12):
            raise ValueError(f"|g| must be 0 or 1, got {norm:.6g}")
        object.__setattr__(self, "g", g)
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ValueError(f"dt must be positive or 'auto', got {self.dt!r}")
        if not self.T_end > 0:
            raise ValueError(f"T_end must be positive, got {self.T_end}")
        if not self.c0 >= 0:
            raise ValueError(f"c0 must be nonnegative, got {self.c0}")
        if int(self.sample_every) < 1:
            raise ValueError("sample_every must be a positive step count")

    def mesh(self) -> Mesh:
        return build_mesh(int(self.N), self.gamma, int(self.order))


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial position and velocity.

    ``tangent`` and ``dvelocity`` are the exact s-derivatives when the data
    come from a formula; the constraints are then checked to 1e-10.  Sampled
    data (CSV) are checked through the mesh stencil to a looser tolerance.
    """

    mesh: Mesh
    x0: np.ndarray
    x1: np.ndarray
    name: str = "custom"
    tangent: np.ndarray | None = None
    dvelocity: np.ndarray | None = None

    def validate(self) -> None:
        exact = self.tangent is not None and self.dvelocity is not None
        dx = self.tangent if exact else self.mesh.derivative(self.x0, 1)
        dv = self.dvelocity if exact else self.mesh.derivative(self.x1, 1)
        tol = EXACT_TOL if exact else SAMPLED_TOL
        unit = float(np.max(np.abs(np.linalg.norm(dx, axis=1) - 1.0)))
        ortho = float(np.max(np.abs(np.einsum("ij,ij->i", dx, dv))))
        if unit > tol:
            raise DataError(f"|x0'| deviates from 1 by {unit:.3e} (tolerance {tol:.0e})")
        if ortho > tol:
            raise DataError(f"x0'.x1' = {ortho:.3e} exceeds tolerance {tol:.0e}")
        if np.any(self.x0[-1] != 0.0) or np.any(self.x1[-1] != 0.0):
            raise DataError("x0 and x1 must vanish at the fixed end s=1")


@dataclass(eq=False)
class SimState:
    t: float
    x: np.ndarray
    xdot: np.ndarray
    tension: TensionSolve
    monitors: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.tension.mesh

    @property
    def tau(self) -> np.ndarray:
        return self.tension.tau

    @property
    def triplebar4(self) -> float:
        return self.monitors.get("triplebar4", float("nan"))


# -- initial data ----------------------------------------------------------

def _unit(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    n = np.linalg.norm(g)
    return g / n if n > 0 else np.array([0.0, 0.0, -1.0])


def _perpendicular(e: np.ndarray) -> np.ndarray:
    trial = np.eye(3)[int(np.argmin(np.abs(e)))]
    p = trial - np.dot(trial, e) * e
    return p / np.linalg.norm(p)


def stationary(mesh: Mesh, g) -> InitialData:
    """Straight string along g at rest.  With g=0 it hangs along -e3."""
    e = _unit(g)
    s = mesh.nodes
    x0 = np.outer(1.0 - s, e)
    zeros = np.zeros_like(x0)
    return InitialData(mesh, x0, zeros, "stationary", np.tile(-e, (len(s), 1)), zeros)


def rotating(mesh: Mesh, omega: float = 1.0) -> InitialData:
    """Straight string along e1 rotating rigidly about the fixed end (g=0)."""
    s = mesh.nodes
    n = len(s)
    x0 = np.zeros((n, 3))
    x1 = np.zeros((n, 3))
    x0[:, 0] = 1.0 - s
    x1[:, 1] = omega * (1.0 - s)
    dx = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    dx[:, 0] = -1.0
    dv[:, 1] = -omega
    return InitialData(mesh, x0, x1, f"rotating({omega:g})", dx, dv)


def _gauss_cumulative_right(s: np.ndarray, f, n_points: int = 6) -> np.ndarray:
    """``int_s^1 f`` at the nodes, by Gauss-Legendre on each interval."""
    xg, wg = np.polynomial.legendre.leggauss(n_points)
    lo, hi = s[:-1], s[1:]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo))[:, None] + half[:, None] * xg[None, :]
    vals = f(pts)
    parts = np.einsum("ik...,k->i...", vals, wg) * half.reshape((-1,) + (1,) * (vals.ndim - 2))
    out = np.zeros((len(s),) + parts.shape[1:])
    np.cumsum(parts[::-1], axis=0, out=out[-2::-1])
    return out


def mode_shape(mode: int = 1):
    """Transverse linear mode ``y(s) = J0(j sqrt s)`` and its slope."""
    j = float(jn_zeros(0, mode)[-1])

    def y(s):
        return j0(j * np.sqrt(s))

    def dy(s):
        r = np.sqrt(np.maximum(s, 1e-300))
        return np.where(s > 0, -0.5 * j * j1(j * r) / r, -0.25 * j * j)

    return j, y, dy


def pendulum(mesh: Mesh, g, amp: float = 1e-3, mode: int = 1) -> InitialData:
    """Hanging string bent into the shape of a linear normal mode, at rest.

    The tangent turns by ``sin(theta) = amp * y'(s)`` towards a direction
    perpendicular to g, so it is exactly of unit length and the position
    comes from integrating it down from the fixed end.
    """
    if np.linalg.norm(np.asarray(g, dtype=float)) == 0:
        raise DataError("the pendulum family needs gravity")
    if mode < 1:
        raise DataError(f"mode must be >= 1, got {mode}")
    e = _unit(g)
    perp = _perpendicular(e)
    _, _, dy = mode_shape(mode)
    slope_max = float(np.max(np.abs(dy(np.linspace(0.0, 1.0, 2001)))))
    if abs(amp) * slope_max >= 1.0:
        raise DataError(f"amplitude {amp} too large for mode {mode}")

    def tangent(s):
        sin_t = amp * dy(s)
        cos_t = np.sqrt(1.0 - sin_t**2)
        return -cos_t[..., None] * e + sin_t[..., None] * perp

    s = mesh.nodes
    x0 = -_gauss_cumulative_right(s, tangent)
    x0[-1] = 0.0
    zeros = np.zeros_like(x0)
    return InitialData(mesh, x0, zeros, f"pendulum({amp:g},{mode})", tangent(s), zeros)


def read_csv_data(path: str | Path, order: int = 2) -> InitialData:
    """Initial data from a CSV with header ``s,x1,x2,x3,v1,v2,v3``."""
    path = Path(path)
    table = np.genfromtxt(path, delimiter=",", names=True)
    need = ("s", "x1", "x2", "x3", "v1", "v2", "v3")
    missing = [c for c in need if c not in (table.dtype.names or ())]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    mesh = mesh_from_nodes(table["s"], order)
    x0 = np.column_stack([table[c] for c in need[1:4]])
    x1 = np.column_stack([table[c] for c in need[4:]])
    return InitialData(mesh, x0, x1, f"csv:{path}")


def parse_initial(spec: str, mesh: Mesh, g, order: int = 2) -> InitialData:
    """Builtin family by name: stationary, rotating(w), pendulum(amp,mode), csv:PATH."""
    spec = spec.strip()
    if spec.startswith("csv:"):
        return read_csv_data(spec[4:], order)
    name, _, rest = spec.partition("(")
    args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()] if rest else []
    if name == "stationary" and not args:
        return stationary(mesh, g)
    if name == "rotating" and len(args) <= 1:
        if np.linalg.norm(np.asarray(g, dtype=float)) != 0:
            raise DataError("the rotating string is an exact solution only for g=0")
        return rotating(mesh, *args)
    if name == "pendulum" and len(args) <= 2:
        if len(args) == 2:
            if args[1] != int(args[1]):
                raise DataError(f"mode must be an integer, got {args[1]}")
            args[1] = int(args[1])
        return pendulum(mesh, g, *args)
    raise DataError(f"unknown initial data {spec!r}")


# -- dynamics ---------------------------------------------------------------

def flux_points(mesh: Mesh) -> np.ndarray:
    """Interfaces of the dual cells, one inside each interval.

    On a graded mesh they are the images of the half-integer points of the
    uniform parameter grid, which centres each dual cell on its node up to
    ``s''(xi) dxi^2 / 8``; the interval midpoints would leave twice that
    offset.  Meshes without a grading map fall back to the midpoints.
    """
    s = mesh.nodes
    if np.isfinite(mesh.grading):
        return ((np.arange(mesh.n) + 0.5) / mesh.n) ** mesh.grading
    return 0.5 * (s[:-1] + s[1:])


def tension_flux(mesh: Mesh, tau, dtau, y) -> np.ndarray:
    """``(tau y')'`` in conservative form on the dual cells.

    The tension at the cell interfaces comes from the cubic Hermite
    interpolant of the solver's ``tau`` and ``tau'``.  The flux at s=0 is
    ``tau(0) y'(0) = 0``, so the free end needs no boundary row.  The
    operator is symmetric for the inner product weighted by the dual cell
    lengths, which keeps its spectrum real on graded meshes; the pointwise
    product rule ``tau y'' + tau' y'`` does not, and its complex modes grow
    at the free end.  The row of the pinned node is left at zero.
    """
    s = mesh.nodes
    h = np.diff(s)
    tau = np.asarray(tau, dtype=float)
    dtau = np.asarray(dtau, dtype=float)
    a = flux_points(mesh)
    th = (a - s[:-1]) / h
    tau_half = ((1 + 2 * th) * (1 - th) ** 2 * tau[:-1] + th**2 * (3 - 2 * th) * tau[1:]
                + h * th * (1 - th) * ((1 - th) * dtau[:-1] - th * dtau[1:]))
    flux = tau_half[:, None] * np.diff(y, axis=0) / h[:, None]
    out = np.zeros_like(np.asarray(y, dtype=float))
    out[0] = flux[0] / a[0]
    out[1:-1] = (flux[1:] - flux[:-1]) / np.diff(a)[:, None]
    return out


def product_rule(mesh: Mesh, tau, dtau, y) -> np.ndarray:
    """``tau y'' + tau' y'`` with the mesh stencils (pointwise form)."""
    return (np.asarray(tau)[:, None] * mesh.derivative(y, 2)
            + np.asarray(dtau)[:, None] * mesh.derivative(y, 1))


def acceleration(mesh: Mesh, x, xdot, g, tension: TensionSolve | None = None,
                 certify: bool = False, form: str = "flux"):
    """Acceleration of the string and the tension it was computed from.

    ``form="flux"`` (the default, used by the time stepper) is the
    conservative discretization; ``form="product"`` the pointwise product
    rule, kept for comparison.
    """
    if tension is None:
        tension = tension_from_state(mesh, x, xdot, g, certify=certify)
    op = tension_flux if form == "flux" else product_rule
    acc = op(mesh, tension.tau, tension.dtau, x) + np.asarray(g, dtype=float)
    acc[-1] = 0.0
    return acc, tension


def cfl_dt(mesh: Mesh, tau, cap: float = DT_MAX) -> float:
    """Largest stable step for wave speed sqrt(tau) on the local spacing.

    The tension at the first interior node floors the speed, since it
    vanishes at the free end where nothing propagates.  The result is capped
    at ``cap``; pass ``cap=inf`` for the bare bound (inf when tau vanishes).
    """
    tau = np.asarray(tau, dtype=float)
    h = mesh.spacing
    local = np.minimum(np.r_[h, np.inf], np.r_[np.inf, h])
    floor = tau[1]
    speed2 = np.maximum(np.maximum(tau, floor), 0.0)
    with np.errstate(divide="ignore"):
        dt = CFL_SAFETY * np.min(local / np.sqrt(speed2))
    return float(min(dt, cap)) if not np.isnan(dt) else float(cap)


def renormalize(mesh: Mesh, x) -> np.ndarray:
    """Rescale the tangent to unit length and integrate back from s=1."""
    dx = mesh.derivative(x, 1)
    dx /= np.linalg.norm(dx, axis=1)[:, None]
    return -mesh.cumulative_from_right(dx, 4)


def step(state: SimState, dt: float, g, *, renorm: bool = False,
         force: bool = False) -> SimState:
    """One classical fourth-order Runge-Kutta step; one tension solve per stage."""
    if dt == 0:
        return state
    mesh = state.mesh
    if not force:
        limit = cfl_dt(mesh, state.tension.tau, cap=np.inf)
        if dt > limit * (1 + 1e-9):
            raise CFLError(f"dt = {dt:.3e} exceeds the CFL bound {limit:.3e}")
    x, v = state.x, state.xdot
    a1, _ = acceleration(mesh, x, v, g, state.tension)
    x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * a1
    a2, _ = acceleration(mesh, x2, v2, g)
    x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * a2
    a3, _ = acceleration(mesh, x3, v3, g)
    x4, v4 = x + dt * v3, v + dt * a3
    a4, _ = acceleration(mesh, x4, v4, g)
    xn = x + dt / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
    vn = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    xn[-1] = 0.0
    vn[-1] = 0.0
    if renorm:
        xn = renormalize(mesh, xn)
    if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(vn))):
        raise NumericalAbort(f"non-finite state after step to t={state.t + dt:.6g}")
    tension = tension_from_state(mesh, xn, vn, g, certify=False)
    return SimState(state.t + dt, xn, vn, tension)


def _flux_derivative(mesh: Mesh, f, df, y):
    """``(f y')'`` given ``f``, ``f'`` and the vector field ``y``."""
    return product_rule(mesh, f, df, y)


def time_jets(mesh: Mesh, x, xdot, g, upto: int = 3):
    """Time derivatives ``[x, x_t, x_tt, ...]`` up to order ``upto`` (<= 4).

    Each derivative of the equation of motion brings in the corresponding
    time derivative of the tension, which solves the same two-point problem
    with right-hand side ``d_t^j |xdot'|^2 - [d_t^j, |x''|^2] tau`` and slope
    ``-g . d_t^j x'(1)``.  Returns the jets and the tension derivatives used.
    """
    if not 2 <= upto <= 4:
        raise ValueError(f"jets implemented for orders 2..4, got {upto}")
    g = np.asarray(g, dtype=float)

    def dot(a, b):
        return np.einsum("ij,ij->i", a, b)

    def pin(y):
        y[-1] = 0.0
        return y

    tau0 = tension_from_state(mesh, x, xdot, g, certify=False)
    q = tau0.q
    jets = [np.asarray(x, dtype=float), np.asarray(xdot, dtype=float)]
    jets.append(pin(_flux_derivative(mesh, tau0.tau, tau0.dtau, x) + g))
    taus = [tau0]
    if upto == 2:
        return jets, taus
    d = [[mesh.derivative(j, k) for k in (1, 2)] for j in jets]
    qdot = 2.0 * dot(d[0][1], d[1][1])
    h1 = 2.0 * dot(d[1][0], d[2][0]) - qdot * tau0.tau
    tau1 = solve_bvp(mesh, q, h1, -float(g @ d[1][0][-1]), pair=tau0.pair, certify=False)
    taus.append(tau1)
    jets.append(pin(_flux_derivative(mesh, tau1.tau, tau1.dtau, x)
                    + _flux_derivative(mesh, tau0.tau, tau0.dtau, xdot)))
    if upto == 3:
        return jets, taus
    d3 = mesh.derivative(jets[3], 1)
    qddot = 2.0 * (dot(d[1][1], d[1][1]) + dot(d[0][1], d[2][1]))
    h2 = (2.0 * (dot(d[2][0], d[2][0]) + dot(d[1][0], d3))
          - qddot * tau0.tau - 2.0 * qdot * tau1.tau)
    tau2 = solve_bvp(mesh, q, h2, -float(g @ d[2][0][-1]), pair=tau0.pair, certify=False)
    taus.append(tau2)
    jets.append(pin(_flux_derivative(mesh, tau2.tau, tau2.dtau, x)
                    + 2.0 * _flux_derivative(mesh, tau1.tau, tau1.dtau, xdot)
                    + _flux_derivative(mesh, tau0.tau, tau0.dtau, jets[2])))
    return jets, taus


def initial_jets(data: InitialData, g) -> list[np.ndarray]:
    """Second and third time derivatives of x at t=0."""
    data.validate()
    jets, _ = time_jets(data.mesh, data.x0, data.x1, g, upto=3)
    return jets[2:4]


# -- runs -------------------------------------------------------------------

@dataclass
class RunResult:
    config: SimConfig
    data_name: str
    mesh: Mesh
    samples: list
    status: str
    lam: float
    c0: float
    message: str = ""
    certificate_failures: list = field(default_factory=list)

    def monitor_rows(self) -> list[dict]:
        return [dict(t=smp.t, **smp.monitors) for smp in self.samples]


MONITOR_KEYS = ("drift_max", "drift_energy", "min_tau_over_s", "sc1_lower", "kinetic",
                "triplebar4")


def sample_monitors(state: SimState, g, lam: float, c0: float,
                    norm_mesh: Mesh | None = None) -> dict:
    """Every per-sample monitor; certifies the tension at this state."""
    mesh = state.mesh
    sol = tension_from_state(mesh, state.x, state.xdot, g, certify=True)
    state.tension = sol
    drift = diagnostics.drift_energy(mesh, state.x, state.xdot, sol.tau, sol.dtau, lam, state.t)
    stab = diagnostics.stability_margin(mesh, sol.tau, state.x, state.xdot, g, c0, state.t)
    jets, _ = time_jets(mesh, state.x, state.xdot, g, upto=4)
    tb = triple_bar(norm_mesh or mesh, jets, 4)
    return {
        "drift_max": drift.drift_max,
        "drift_energy": drift.drift_energy,
        "min_tau_over_s": stab.min_ratio,
        "sc1_lower": stab.sc1_lower,
        "kinetic": diagnostics.kinetic(mesh, state.xdot),
        "triplebar4": tb.full,
        "stability": stab,
    }


def run(config: SimConfig, data: InitialData, *, force: bool = False,
        progress=None) -> RunResult:
    """Integrate to ``T_end``, sampling every ``sample_every`` steps.

    A run stops with status ``nan_abort`` on a non-finite state (or a
    tension solve that breaks down on one), and with ``stability_lost`` once
    min tau/s has gone negative and stayed so for ten more samples.  The
    samples up to the stop are kept either way.
    """
    data.validate()
    mesh = data.mesh
    g = np.asarray(config.g, dtype=float)
    norm_mesh = mesh if mesh.stencil_order == 4 else replace_order(mesh, 4)
    tension = tension_from_state(mesh, data.x0, data.x1, g, certify=True)
    state = SimState(0.0, data.x0.copy(), data.x1.copy(), tension)
    lam = diagnostics.drift_lambda(tension.tau, tension.dtau)
    state.monitors = sample_monitors(state, g, lam, config.c0, norm_mesh)
    samples = [state]
    failures = [c.to_dict() | {"t": 0.0} for c in state.tension.failed()]
    status, message = "completed", ""
    lost_since = None
    n_steps = 0
    # blow-up is caught by the finiteness checks, so numpy's warnings are noise
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while state.t < config.T_end * (1 - 1e-12):
            dt = cfl_dt(mesh, state.tension.tau) if config.dt == "auto" else float(config.dt)
            dt = min(dt, config.T_end - state.t)
            try:
                state = step(state, dt, g, renorm=config.renormalize, force=force)
            except (NumericalAbort, TensionError) as exc:
                status, message = "nan_abort", f"t={state.t:.6g}: {exc}"
                break
            n_steps += 1
            last = state.t >= config.T_end * (1 - 1e-12)
            if n_steps % int(config.sample_every) and not last:
                continue
            state.monitors = sample_monitors(state, g, lam, config.c0, norm_mesh)
            samples.append(state)
            failures += [c.to_dict() | {"t": state.t} for c in state.tension.failed()]
            if progress is not None:
                progress(state)
            if state.monitors["min_tau_over_s"] < -NEGATIVE_TOL:
                lost_since = len(samples) if lost_since is None else lost_since
                if len(samples) - lost_since >= STABILITY_GRACE:
                    status = "stability_lost"
                    message = f"min tau/s negative since t={samples[lost_since - 1].t:.6g}"
                    break
            else:
                lost_since = None
    return RunResult(config, data.name, mesh, samples, status, lam, config.c0, message, failures)


def replace_order(mesh: Mesh, order: int) -> Mesh:
    """Same nodes, different stencil order."""
    return Mesh(mesh.nodes, mesh.grading, order)
