"""Weighted Sobolev norms on (0, 1) and the averaging operator.

Every norm here weights the highest derivatives by powers of ``s`` to match
the degeneracy of the tension at the free end.  Norms of vector fields are
the Euclidean combination of the component norms.  All integrals use the
mesh quadrature, whose weights are positive, so the termwise comparisons
between the X and Y families hold exactly in floating point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.special import roots_jacobi

from hangsim.certificates import Certificate, worst_of
from hangsim.mesh import Mesh

MAX_X = 4
MAX_Y = 3
DEFAULT_EPS = 0.25


def _terms_x(m: int) -> list[tuple[int, float]]:
    """(derivative order, weight exponent) pairs whose squares make up X^m."""
    k, odd = divmod(m, 2)
    terms = [(j, 0.0) for j in range(k + 1)]
    if odd:
        terms += [(k + j, j - 0.5) for j in range(1, k + 2)]
    else:
        terms += [(k + j, float(j)) for j in range(1, k + 1)]
    return terms


def _terms_y(m: int) -> list[tuple[int, float]]:
    if m == 0:
        return [(0, 0.5)]
    k, odd = divmod(m - 1, 2)
    terms = [(j, 0.0) for j in range(k + 1)]
    if odd:
        terms += [(k + j, j - 0.5) for j in range(1, k + 3)]
    else:
        terms += [(k + j, float(j)) for j in range(1, k + 2)]
    return terms


def _sq(values: np.ndarray) -> np.ndarray:
    return values**2 if values.ndim == 1 else np.einsum("ij,ij->i", values, values)


def _weighted_sq(mesh: Mesh, u, terms) -> float:
    s = mesh.nodes
    total = 0.0
    for order, power in terms:
        d = mesh.derivative(u, order)
        total += float(mesh.integrate(s ** (2 * power) * _sq(d)))
    return total


def norm_X(mesh: Mesh, u, m: int) -> float:
    if not 0 <= m <= MAX_X:
        raise ValueError(f"X^m implemented for m <= {MAX_X}, got {m}")
    return float(np.sqrt(_weighted_sq(mesh, u, _terms_x(m))))


def norm_Y(mesh: Mesh, u, m: int) -> float:
    if not 0 <= m <= MAX_Y:
        raise ValueError(f"Y^m implemented for m <= {MAX_Y}, got {m}")
    return float(np.sqrt(_weighted_sq(mesh, u, _terms_y(m))))


def _sup(values) -> float:
    return float(np.max(np.sqrt(_sq(np.asarray(values)))))


def norm_Xeps(mesh: Mesh, u, k: int, eps: float = DEFAULT_EPS) -> float:
    """The mildly weighted norms used for the tension slope at the critical index."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if k not in (1, 2, 3):
        raise ValueError(f"X_eps^k defined for k = 1, 2, 3, got {k}")
    s = mesh.nodes
    u = np.asarray(getattr(u, "values", u), dtype=float)
    d = [u] + [mesh.derivative(u, j) for j in (1, 2, 3)]

    def l2(j, w):
        return float(mesh.integrate(s ** (2 * w) * _sq(d[j])))

    if k == 1:
        sq = _sup(_scale(s**eps, d[0])) ** 2 + l2(1, 0.5 + eps)
    elif k == 2:
        sq = _sup(d[0]) ** 2 + l2(1, eps) + l2(2, 1 + eps)
    else:
        sq = (_sup(d[0]) ** 2 + _sup(_scale(s**eps, d[1])) ** 2
              + l2(2, 0.5 + eps) + l2(3, 1.5 + eps))
    return float(np.sqrt(sq))


def _scale(w, values):
    return w * values if values.ndim == 1 else w[:, None] * values


def lp_norm(mesh: Mesh, f, p: float, power: float = 0.0) -> float:
    """``|s^power f|_{L^p}``; ``p = inf`` is the node maximum."""
    s = mesh.nodes
    f = np.abs(np.asarray(getattr(f, "values", f), dtype=float))
    if f.ndim > 1:
        f = np.sqrt(_sq(f))
    if power < 0:
        raise ValueError("negative weights are singular at the node s=0")
    g = s**power * f
    if np.isinf(p):
        return float(np.max(g))
    return float(mesh.integrate(g**p) ** (1.0 / p))


def averaging(mesh: Mesh, u) -> np.ndarray:
    """Mean value over [0, s]; at s=0 the limit u(0)."""
    s = mesh.nodes
    u = np.asarray(getattr(u, "values", u), dtype=float)
    cum = mesh.cumulative(u, 4)
    out = np.empty_like(cum)
    out[1:] = _scale(1.0 / s[1:], cum[1:])
    out[0] = u[0]
    return out


def weighted_average(mesh: Mesh, u, alpha: float) -> np.ndarray:
    """``s^-(alpha+1) int_0^s sigma^alpha u`` with u linear between nodes.

    The power weight is integrated exactly against the piecewise-linear
    interpolant, so the rule stays accurate for fractional ``alpha``.
    """
    if not alpha > -1:
        raise ValueError(f"need alpha > -1, got {alpha}")
    s = mesh.nodes
    u = np.asarray(getattr(u, "values", u), dtype=float)
    lo, hi = s[:-1], s[1:]
    m0 = (hi ** (alpha + 1) - lo ** (alpha + 1)) / (alpha + 1)
    m1 = (hi ** (alpha + 2) - lo ** (alpha + 2)) / (alpha + 2)
    width = hi - lo
    parts = (u[:-1] * (hi * m0 - m1) + u[1:] * (m1 - lo * m0)) / width
    out = np.empty(len(s))
    out[0] = u[0] / (alpha + 1)
    out[1:] = np.cumsum(parts) / s[1:] ** (alpha + 1)
    return out


def _power_integral(s: np.ndarray, func, w: float, n: int = 12) -> float:
    """``int_0^1 sigma^w F(sigma)`` for F given piecewise by ``func(i, sigma)``.

    The first interval takes the weight into a Gauss-Jacobi rule, so the
    power singularity at s=0 costs nothing; the others use Gauss-Legendre,
    accurate to roundoff since their distance from 0 is at least
    comparable to their length.
    """
    xj, wj = roots_jacobi(n, 0.0, w)
    half0 = 0.5 * s[1]
    total = float(np.sum(wj * half0 ** (w + 1) * func(np.zeros(n, dtype=int), half0 * (1 + xj))))
    if len(s) > 2:
        xg, wg = np.polynomial.legendre.leggauss(n)
        lo, hi = s[1:-1], s[2:]
        half = 0.5 * (hi - lo)
        pts = (0.5 * (lo + hi))[:, None] + half[:, None] * xg
        idx = np.broadcast_to(np.arange(1, len(s) - 1)[:, None], pts.shape)
        total += float(np.sum(half[:, None] * wg * pts**w * func(idx, pts)))
    return total


def _linear_pieces(s, u):
    """The piecewise-linear interpolant of ``u`` and its exact tail integral."""
    slope = np.diff(u) / np.diff(s)
    tail = np.zeros_like(u)
    tail[:-1] = np.cumsum((0.5 * (u[:-1] + u[1:]) * np.diff(s))[::-1])[::-1]

    def value(i, x):
        return u[i] + slope[i] * (x - s[i])

    def tail_value(i, x):
        right = s[i + 1]
        return (tail[i + 1] + u[i] * (right - x)
                + 0.5 * slope[i] * ((right - s[i]) ** 2 - (x - s[i]) ** 2))

    return value, tail_value, tail


def check_inequalities(mesh: Mesh, u, p: float, alpha: float, beta: float = 0.0,
                       m: int = 1, tol: float = 1e-8) -> list[Certificate]:
    """Explicit-constant inequalities for tail integrals and averages of ``u``.

    * tail: ``|s^alpha int_s^1 u|_p <= (alpha + 1/p)^(-1/p) |s^(alpha+1/p) u|_1``
      (needs alpha + 1/p > 0);
    * average: ``|s^beta U_alpha|_p <= |s^beta u|_p / (alpha - beta + 1 - 1/p)``
      (needs alpha + 1 > beta + 1/p);
    * ``|M u|_{X^m} <= 2 |u|_{X^m}``.

    Each inequality is checked only when its parameter hypothesis holds; it
    is an error if neither the tail nor the average inequality applies.
    The tail inequality is an identity when p=1 and u has one sign, so both
    of its sides are evaluated exactly for the piecewise-linear interpolant
    of ``u`` rather than by nodal quadrature.
    """
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    tail_ok = alpha + inv_p > 0
    average_ok = alpha + 1 > beta + inv_p
    if not (tail_ok or average_ok):
        raise ValueError("neither alpha + 1/p > 0 (tail) nor alpha + 1 > beta + 1/p "
                         "(average) holds")
    s = mesh.nodes
    u = np.asarray(getattr(u, "values", mesh._check(u)), dtype=float)
    certs = []
    if tail_ok:
        value, tail_value, tail = _linear_pieces(s, u)
        if np.isinf(p):
            lhs = float(np.max(s**alpha * np.abs(tail)))
        else:
            lhs = _power_integral(s, lambda i, x: np.abs(tail_value(i, x)) ** p,
                                  alpha * p) ** inv_p
        rhs = (alpha + inv_p) ** -inv_p * _power_integral(
            s, lambda i, x: np.abs(value(i, x)), alpha + inv_p)
        certs.append(worst_of("CalIneq", [(lhs, rhs)], tol))

    if average_ok:
        avg = weighted_average(mesh, u, alpha)
        lhs = lp_norm(mesh, avg, p, beta)
        rhs = lp_norm(mesh, u, p, beta) / (alpha - beta + 1 - inv_p)
        certs.append(worst_of("EstM", [(lhs, rhs)], tol))
    lhs = norm_X(mesh, averaging(mesh, u), m)
    rhs = 2.0 * norm_X(mesh, u, m)
    certs.append(worst_of("WEM1", [(lhs, rhs)], tol))
    return certs


@dataclass
class NormReport:
    """All implemented norms of one field at one instant."""

    field: str
    t: float
    values: dict = field(default_factory=dict)
    eps: float = DEFAULT_EPS

    KEYS = tuple(f"X{m}" for m in range(MAX_X + 1)) + tuple(
        f"Y{m}" for m in range(MAX_Y + 1)) + ("Xeps1", "Xeps2", "Xeps3", "L2", "Linf")

    def to_json(self) -> str:
        return json.dumps({k: self.values[k] for k in self.KEYS if k in self.values})


def norm_report(mesh: Mesh, u, name: str = "u", t: float = 0.0,
                eps: float = DEFAULT_EPS) -> NormReport:
    vals = {f"X{m}": norm_X(mesh, u, m) for m in range(MAX_X + 1)}
    vals.update({f"Y{m}": norm_Y(mesh, u, m) for m in range(MAX_Y + 1)})
    vals.update({f"Xeps{k}": norm_Xeps(mesh, u, k, eps) for k in (1, 2, 3)})
    vals["L2"] = lp_norm(mesh, u, 2.0)
    vals["Linf"] = lp_norm(mesh, u, np.inf)
    return NormReport(name, t, vals, eps)


@dataclass(frozen=True)
class TripleBarReport:
    m: int
    full: float
    star: float
    star_eps: float | None


def triple_bar(mesh: Mesh, jets, m: int, eps: float = DEFAULT_EPS) -> TripleBarReport:
    """Norms summed over time derivatives; ``jets[j]`` is the j-th time derivative.

    ``full`` uses jets 0..m, ``star`` jets 0..m-1, and ``star_eps`` (only when
    m = 3 and three jets are given) the X_eps^3, X_eps^2, X_eps^1 combination.
    """
    if len(jets) < m:
        raise ValueError(f"need at least {m} time derivatives")
    sq = [norm_X(mesh, jets[j], m - j) ** 2 for j in range(min(m + 1, len(jets)))]
    star = float(np.sqrt(sum(sq[:m])))
    full = float(np.sqrt(sum(sq))) if len(jets) > m else float("nan")
    star_eps = None
    if m == 3 and len(jets) >= 3:
        star_eps = float(np.sqrt(sum(
            norm_Xeps(mesh, jets[j], 3 - j, eps) ** 2 for j in range(3))))
    return TripleBarReport(m, full, star, star_eps)


def disc_lift_norm(k: int, m: int, n_radial: int = 24, n_angular: int = 48) -> float:
    """``|u#|_{H^m}`` for ``u(s) = s^k`` lifted radially to the disc of radius 2.

    The lift ``u#(y) = u(|y|^2 / 4)`` turns ``(s u')'`` into the Laplacian
    exactly, and with the area measure normalized to total mass 1 it is an
    isometry from L^2(0, 1) (``s = |y|^2/4`` is then uniformly distributed).
    Substituting ``y = 2x`` moves the integrals to the unit disc, where
    ``(x1^2 + x2^2)^k`` is a polynomial and each partial derivative of order
    ``j`` carries a factor ``4^-j`` in the squared norm.  The
    derivatives are taken exactly on the coefficient array and integrated
    with a polar Gauss rule.
    """
    coef = np.zeros((2 * k + 1, 2 * k + 1))
    for i in range(k + 1):
        coef[2 * i, 2 * (k - i)] = comb(k, i)
    r, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr
    theta = 2 * np.pi * np.arange(n_angular) / n_angular
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    xx, yy = rr * np.cos(tt), rr * np.sin(tt)
    w = (wr * r)[:, None] * (2.0 / n_angular)  # normalized: total mass 1
    P = np.polynomial.polynomial
    total = 0.0
    for order in range(m + 1):
        for ax in range(order + 1):
            c = coef
            if ax:
                c = P.polyder(c, ax, axis=0)
            if order - ax:
                c = P.polyder(c, order - ax, axis=1)
            vals = P.polyval2d(xx, yy, c)
            total += 4.0 ** -order * float(np.sum(w * vals**2))
    return float(np.sqrt(total))
