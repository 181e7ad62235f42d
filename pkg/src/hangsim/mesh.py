"""Discretization of the arc-length interval [0, 1].

Nodes are graded toward the free end s=0 by ``s_i = (i/N)**gamma``.  All
derivative, interpolation and quadrature operators are assembled once as
sparse matrices from finite-difference weights on the (possibly
non-uniform) node set, so applying them is a single mat-vec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

MIN_NODES = 16
MAX_DERIVATIVE = 4

# 3-point Gauss-Legendre rule on [0, 1]; exact for the quintics we integrate.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class MeshError(ValueError):
    pass


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at ``z`` on nodes ``x``.

    Returns an array ``c`` of shape (len(x), m+1) with ``c[:, k]`` the weights
    of the k-th derivative.  Fornberg's recursion, exact on polynomials of
    degree < len(x).
    """
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def _window(i: int, size: int, n_nodes: int) -> np.ndarray:
    start = min(max(i - size // 2, 0), n_nodes - size)
    return np.arange(start, start + size)


def _derivative_matrix(s: np.ndarray, k: int, order: int) -> sp.csr_matrix:
    n_nodes = len(s)
    # centred stencils on a uniform grid reach `order` with this many points;
    # one-sided windows near the ends need k + order points for the same order
    centred = 2 * ((k + 1) // 2) - 1 + order
    one_sided = k + order
    rows, cols, vals = [], [], []
    for i in range(n_nodes):
        half = centred // 2
        if half <= i < n_nodes - half:
            idx = np.arange(i - half, i + half + 1)
        else:
            idx = _window(i, one_sided, n_nodes)
        w = fornberg_weights(s[i], s[idx], k)[:, k]
        rows.extend([i] * len(idx))
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


def _interval_matrices(s: np.ndarray, order: int):
    """Per-interval integration weights and midpoint interpolation weights.

    Row i of the first matrix integrates the local interpolant over
    [s_i, s_{i+1}]; row i of the second evaluates it at the interval midpoint.
    Order 2 uses the linear interpolant (trapezoid), order 4 the cubic one
    through the four nearest nodes.  On strongly graded meshes the cubics of
    the first few intervals can make a nodal weight negative; those intervals
    fall back to the linear interpolant, which costs nothing measurable since
    they are the shortest ones.
    """
    n_nodes = len(s)
    n_int = n_nodes - 1
    linear = np.full(n_int, order == 2)
    while True:
        q, mid = _assemble_intervals(s, linear)
        w = np.asarray(q.sum(axis=0)).ravel()
        bad = np.flatnonzero(w <= 0)
        if len(bad) == 0:
            return q, mid
        for j in bad:
            linear[max(j - 3, 0):j + 3] = True


def _stencil(i: int, n_nodes: int, linear: bool) -> np.ndarray:
    if linear:
        return np.arange(i, i + 2)
    if i == 0:
        return np.arange(0, 3)
    # a cubic reaching back to s=0 puts a negative weight there on graded
    # meshes, so interval 1 looks right instead
    start = min(max(i - 1, 1), n_nodes - 4)
    return np.arange(start, start + 4)


def _assemble_intervals(s: np.ndarray, linear: np.ndarray):
    n_nodes = len(s)
    qr, qc, qv = [], [], []
    mr, mc, mv = [], [], []
    for i in range(n_nodes - 1):
        idx = _stencil(i, n_nodes, linear[i])
        h = s[i + 1] - s[i]
        w = np.zeros(len(idx))
        for xg, wg in zip(_GL_X, _GL_W):
            w += wg * h * fornberg_weights(s[i] + xg * h, s[idx], 0)[:, 0]
        mid = fornberg_weights(0.5 * (s[i] + s[i + 1]), s[idx], 0)[:, 0]
        qr.extend([i] * len(idx))
        qc.extend(idx)
        qv.extend(w)
        mr.extend([i] * len(idx))
        mc.extend(idx)
        mv.extend(mid)
    shape = (n_nodes - 1, n_nodes)
    return (
        sp.csr_matrix((qv, (qr, qc)), shape=shape),
        sp.csr_matrix((mv, (mr, mc)), shape=shape),
    )


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable node set with its derivative and quadrature operators."""

    nodes: np.ndarray
    grading: float
    stencil_order: int
    weights: np.ndarray = field(init=False, repr=False)
    _dmats: tuple = field(init=False, repr=False)
    _intervals: dict = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.nodes, dtype=float)
        if s.ndim != 1 or len(s) < MIN_NODES + 1:
            raise MeshError(f"need at least {MIN_NODES} intervals, got {len(s) - 1}")
        if self.stencil_order not in (2, 4):
            raise MeshError(f"stencil order must be 2 or 4, got {self.stencil_order}")
        if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
            raise MeshError("nodes must increase strictly from 0 to 1")
        s.setflags(write=False)
        object.__setattr__(self, "nodes", s)
        dmats = tuple(
            _derivative_matrix(s, k, self.stencil_order)
            for k in range(1, MAX_DERIVATIVE + 1)
        )
        object.__setattr__(self, "_dmats", dmats)
        intervals = {p: _interval_matrices(s, p) for p in (2, 4)}
        object.__setattr__(self, "_intervals", intervals)
        w = np.asarray(intervals[self.stencil_order][0].sum(axis=0)).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        """Number of intervals."""
        return len(self.nodes) - 1

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    def derivative_matrix(self, k: int) -> sp.csr_matrix:
        if not 1 <= k <= MAX_DERIVATIVE:
            raise MeshError(f"derivative order must be in 1..{MAX_DERIVATIVE}, got {k}")
        return self._dmats[k - 1]

    def derivative(self, f, k: int = 1) -> np.ndarray:
        """k-th derivative of nodal samples (scalar or (n_nodes, 3) arrays)."""
        values = self._check(f)
        if k == 0:
            return values.copy()
        return self.derivative_matrix(k) @ values

    def integrate(self, f) -> float | np.ndarray:
        return self.weights @ self._check(f)

    def interval_integrals(self, f, order: int | None = None) -> np.ndarray:
        """Integrals of the local interpolant over each interval.

        ``order`` selects the linear (2) or cubic (4) interpolant and defaults
        to the mesh's stencil order.
        """
        return self._intervals[order or self.stencil_order][0] @ self._check(f)

    def cumulative(self, f, order: int | None = None) -> np.ndarray:
        """Running integral from 0 to each node."""
        parts = self.interval_integrals(f, order)
        out = np.zeros((len(self.nodes),) + parts.shape[1:])
        np.cumsum(parts, axis=0, out=out[1:])
        return out

    def cumulative_from_right(self, f, order: int | None = None) -> np.ndarray:
        """Running integral from each node to 1."""
        parts = self.interval_integrals(f, order)
        out = np.zeros((len(self.nodes),) + parts.shape[1:])
        np.cumsum(parts[::-1], axis=0, out=out[-2::-1])
        return out

    def midpoints(self, f) -> np.ndarray:
        """Cubic interpolation of nodal values to interval midpoints."""
        return self._intervals[4][1] @ self._check(f)

    def _check(self, f) -> np.ndarray:
        values = np.asarray(getattr(f, "values", f), dtype=float)
        if values.shape[0] != len(self.nodes):
            raise MeshError(
                f"field has {values.shape[0]} samples, mesh has {len(self.nodes)} nodes"
            )
        mesh = getattr(f, "mesh", None)
        if mesh is not None and mesh is not self:
            raise MeshError("field belongs to a different mesh")
        return values

    def summary(self) -> dict:
        return {
            "N": self.n,
            "gamma": self.grading,
            "order": self.stencil_order,
            "min_spacing": float(self.spacing.min()),
            "max_spacing": float(self.spacing.max()),
        }


def build_mesh(n: int, gamma: float = 2.0, order: int = 2) -> Mesh:
    """Graded mesh with ``n`` intervals and nodes ``(i/n)**gamma``."""
    if not isinstance(n, (int, np.integer)) or n < MIN_NODES:
        raise MeshError(f"N must be an integer >= {MIN_NODES}, got {n!r}")
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 1.0:
        raise MeshError(f"grading exponent must be finite and >= 1, got {gamma}")
    xi = np.arange(n + 1) / n
    s = xi**gamma
    s[0], s[-1] = 0.0, 1.0
    return Mesh(s, gamma, order)


def mesh_from_nodes(nodes, order: int = 2) -> Mesh:
    """Mesh on caller-supplied nodes (e.g. read from a CSV column)."""
    return Mesh(np.asarray(nodes, dtype=float), float("nan"), order)


@dataclass(frozen=True, eq=False)
class ScalarField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.mesh.nodes),):
            raise MeshError(f"scalar field shape {v.shape} does not match mesh")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class VecField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.mesh.nodes), 3):
            raise MeshError(f"vector field shape {v.shape} does not match mesh")
        object.__setattr__(self, "values", v)
