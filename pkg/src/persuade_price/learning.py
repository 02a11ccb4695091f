"""Purchase statistics per critical type and the monotone UCB demand envelope."""

from __future__ import annotations

import io
import math

import numpy as np


class GridMembershipError(RuntimeError):
    """A recorded critical type is not a grid point (a snapping bug upstream)."""


def radius(n, T: float):
    """Confidence radius ``sqrt(16 ln T / n) + sqrt((1 + n) ln(1 + n)) / n``; ``inf`` where ``n == 0``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(16.0 * math.log(T) / n) + np.sqrt((1.0 + n) * np.log1p(n)) / n
    r = np.where(n > 0, r, np.inf)
    return r if r.ndim else float(r)


class DemandTracker:
    """Visit and purchase counts on the sorted type grid ``S``."""

    def __init__(self, types, horizon: int):
        self.types = np.asarray(types, dtype=float)
        if horizon < 2:
            raise ValueError("horizon must be at least 2")
        self.horizon = int(horizon)
        self.visits = np.zeros(len(self.types), dtype=np.int64)
        self.purchases = np.zeros(len(self.types), dtype=np.int64)
        self.t = 0

    def index_of(self, x: float, tol: float = 1e-9) -> int:
        k = int(np.searchsorted(self.types, x))
        cands = [c for c in (k - 1, k) if 0 <= c < len(self.types)]
        best = min(cands, key=lambda c: abs(self.types[c] - x))
        if abs(self.types[best] - x) > tol:
            raise GridMembershipError(f"type {x!r} is not in the grid")
        return best

    def record(self, x: float, a: int) -> None:
        self.record_index(self.index_of(x), a)

    def record_index(self, k: int, a: int) -> None:
        self.visits[k] += 1
        self.purchases[k] += int(bool(a))
        self.t += 1

    def empirical(self, x: float | None = None):
        """``purchases / visits`` (nan where unvisited)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = self.purchases / self.visits
        rates = np.where(self.visits > 0, rates, np.nan)
        if x is None:
            return rates
        return float(rates[self.index_of(x)])

    def radius(self, x: float | None = None):
        r = radius(self.visits, self.horizon)
        if x is None:
            return r
        return float(r[self.index_of(x)])

    def ucb(self) -> np.ndarray:
        """Nonincreasing optimistic demand: prefix min of ``min(rate + radius, 1)``."""
        with np.errstate(invalid="ignore"):
            idx = np.where(self.visits > 0, np.nan_to_num(self.empirical()) + self.radius(), 1.0)
        return np.minimum.accumulate(np.minimum(idx, 1.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,N,purchases,mean,radius,ucb\n")
        for x, n, s, d, r, u in zip(self.types, self.visits, self.purchases,
                                    self.empirical(), self.radius(), self.ucb()):
            buf.write(f"{x:.12g},{n},{s},{d:.12g},{r:.12g},{u:.12g}\n")
        return buf.getvalue()
