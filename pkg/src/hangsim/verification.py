"""Randomized certificate suite for the explicit-constant estimates.

Each trial draws a mesh, a nonnegative potential with a positive floor, a
right-hand side (of either sign, or nonnegative for the sign case), a slope
datum, a test function and a moving curve, then collects every certificate.
Trials are seeded by ``(seed, trial)`` so the outcome does not depend on
how they are scheduled across threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from hangsim.certificates import Certificate, worst_of
from hangsim.diagnostics import operator_Atau
from hangsim.mesh import Mesh, build_mesh
from hangsim.tension import dtphi_certificate, greens_function, solve_bvp
from hangsim.wnorms import check_inequalities

LEMMAS = ("EstPhi", "EstPsi", "EstDtPhi", "EstSolBVP1", "EstSolBVP2", "EstSolBVP3",
          "CalIneq", "EstM", "WEM1", "Wronskian", "IdAtau", "GreenSym")
SIZES = (256, 512, 1024)
GRADINGS = (1.0, 1.5, 2.0)
SYMMETRY_TOL = 1e-10


@lru_cache(maxsize=None)
def _mesh(n: int, gamma: float) -> Mesh:
    return build_mesh(n, gamma, 4)


def _trig(rng, s, terms=3, scale=1.0):
    out = np.zeros_like(s)
    for k in range(1, terms + 1):
        out += rng.normal(0.0, scale / k) * np.cos(k * np.pi * s + rng.uniform(0, 2 * np.pi))
    return out


def _potential(rng, s, bump: bool = True):
    """Positive floor plus cosines; with ``bump``, sometimes a narrow Gaussian."""
    q = rng.uniform(0.05, 1.0) + np.zeros_like(s)
    for k in range(1, 4):
        q += rng.uniform(0.0, 2.0 / k) * (1 + np.cos(k * np.pi * s + rng.uniform(0, 2 * np.pi)))
    if bump and rng.random() < 0.3:
        centre, width = rng.uniform(0.0, 0.5), rng.uniform(0.02, 0.2)
        q += rng.uniform(0.5, 4.0) * np.exp(-(((s - centre) / width) ** 2))
    return q


def _curve(rng):
    """A smooth space curve moving in time: ``t -> (x(., t), xdot(., t))``."""
    # amplitudes fall off like 1/k^2 so the curvature moment stays O(1)
    params = [(rng.normal(0.0, 0.7 / k**2, size=3), rng.uniform(0.5, 2.0),
               rng.uniform(0, 2 * np.pi), k) for k in range(1, 4)]

    def at(s, t):
        x = np.zeros((len(s), 3))
        v = np.zeros((len(s), 3))
        for amp, omega, phase, k in params:
            arg = k * s[:, None] + omega * t + phase
            x += amp * np.sin(arg)
            v += amp * omega * np.cos(arg)
        return x, v

    return at


def run_trial(seed: int, trial: int) -> list[Certificate]:
    rng = np.random.default_rng([seed, trial])
    mesh = _mesh(int(rng.choice(SIZES)), float(rng.choice(GRADINGS)))
    s = mesh.nodes
    q = _potential(rng, s)
    sign_case = rng.random() < 0.5
    if sign_case:
        h = _trig(rng, s) ** 2 + rng.uniform(0.0, 0.5)
        a = rng.uniform(0.0, 2.0)
    else:
        h = _trig(rng, s, scale=2.0)
        a = rng.uniform(-1.0, 2.0)
    sol = solve_bvp(mesh, q, h, a, certify=True)
    certs = list(sol.certificates)

    r1, r2 = rng.uniform(0.0, 1.0, size=(2, 16))
    g12 = greens_function(sol.pair, r1, r2)
    g21 = greens_function(sol.pair, r2, r1)
    g0 = greens_function(sol.pair, np.zeros_like(r2), r2)
    gap = float(max(np.max(np.abs(g12 - g21)), np.max(np.abs(g0))))
    certs.append(Certificate("GreenSym", gap, SYMMETRY_TOL, gap <= SYMMETRY_TOL,
                             "max |G(s,r) - G(r,s)|, |G(0,r)|"))

    t, delta = rng.uniform(0.0, 3.0), 1e-3
    curve = _curve(rng)
    x, v = curve(s, t)
    xb, _ = curve(s, t - delta)
    xa, _ = curve(s, t + delta)
    certs.append(dtphi_certificate(mesh, xb, xa, 2 * delta, x, v))

    u = _trig(rng, s, terms=4) + rng.normal() * s ** int(rng.integers(0, 4))
    p = float(rng.choice([1.0, 2.0, np.inf]))
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    alpha = rng.uniform(0.0, 1.0)
    beta = rng.uniform(0.0, max(alpha + 1.0 - inv_p - 0.05, 0.0))
    certs += check_inequalities(mesh, u, p, alpha, beta, m=int(rng.integers(0, 5)))

    field = np.column_stack([_trig(rng, s, terms=4) for _ in range(3)])
    _, ident, _ = operator_Atau(mesh, sol.tau, sol.dtau, field)
    certs.append(ident)
    return certs


@dataclass
class LemmaSummary:
    name: str
    checks: int = 0
    failures: int = 0
    worst: Certificate | None = None

    @property
    def passed(self) -> bool:
        return self.checks > 0 and self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        slack = self.worst.slack if self.worst is not None else float("nan")
        return f"{self.name:<11} {status}  checks={self.checks:<4d} worst_slack={slack:+.3e}"


def verify_lemmas(seed: int = 1, trials: int = 100, threads: int | None = None
                  ) -> dict[str, LemmaSummary]:
    if threads is None:
        threads = int(os.environ.get("HANGSIM_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: run_trial(seed, k), range(trials)))
    else:
        results = [run_trial(seed, k) for k in range(trials)]
    summary = {name: LemmaSummary(name) for name in LEMMAS}
    for certs in results:
        for cert in certs:
            entry = summary.get(cert.name)
            if entry is None:
                continue
            entry.checks += 1
            entry.failures += not cert.satisfied
            if entry.worst is None or cert.slack < entry.worst.slack:
                entry.worst = cert
    return summary
