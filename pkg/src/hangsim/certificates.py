"""Pass/fail records for explicit-constant inequality checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SLACK_TOL = 1e-8


@dataclass(frozen=True)
class Certificate:
    """One checked inequality ``lhs <= rhs`` at its tightest point.

    ``slack`` is ``rhs - lhs``; the check passes when ``slack >= -tol``.
    """

    name: str
    lhs: float
    rhs: float
    satisfied: bool
    detail: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slack"] = self.slack
        return d


def worst_of(name: str, pairs, tol: float = SLACK_TOL, detail: str = "") -> Certificate:
    """Collapse several ``(lhs, rhs)`` array pairs into one certificate.

    The check fails if any entry has ``rhs - lhs < -tol``, and then the
    reported pair is the most violated one.  Otherwise the reported pair is
    the tightest in relative terms (largest ``lhs / rhs`` with ``rhs > 0``),
    so trivially equal entries such as ``0 <= 0`` at s=0 do not hide how
    close the bound comes elsewhere.
    """
    lowest = None
    tightest = None
    for lhs, rhs in pairs:
        lhs = np.broadcast_to(np.asarray(lhs, dtype=float), np.shape(rhs) or np.shape(lhs))
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
        slack = rhs - lhs
        if slack.size == 0:
            continue
        k = int(np.argmin(np.where(np.isnan(slack), -np.inf, slack)))
        cand = (float(slack.flat[k]), float(lhs.flat[k]), float(rhs.flat[k]))
        if lowest is None or not cand[0] >= lowest[0]:
            lowest = cand
        positive = rhs > 0
        if np.any(positive):
            ratio = np.where(positive, lhs / np.where(positive, rhs, 1.0), -np.inf)
            k = int(np.argmax(ratio))
            cand = (float(ratio.flat[k]), float(lhs.flat[k]), float(rhs.flat[k]))
            if tightest is None or cand[0] > tightest[0]:
                tightest = cand
    if lowest is None:
        return Certificate(name, 0.0, 0.0, True, detail)
    ok = bool(np.isfinite(lowest[0]) and lowest[0] >= -tol)
    _, lhs, rhs = lowest if (not ok or tightest is None) else tightest
    return Certificate(name, lhs, rhs, ok, detail)
