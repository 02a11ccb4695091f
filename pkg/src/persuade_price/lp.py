"""A small dense revised simplex for ``max c.z  s.t.  A z = b, z >= 0``.

Problem sizes here are a handful of rows and at most a few thousand
columns, so the basis inverse is simply recomputed each pivot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-12
DEGENERATE_SWITCH = 50
TIE_TOL = 1e-9


class LPError(RuntimeError):
    """Infeasible start, unbounded direction or iteration limit."""


@dataclass
class SimplexResult:
    z: np.ndarray
    objective: float
    basis: list
    pivots: int


def simplex_max(c, A, b, basis, tol: float = 1e-11, max_iter: int = 10_000) -> SimplexResult:
    """Maximize from a feasible starting ``basis`` (column indices, one per row).

    Entering columns follow the largest reduced cost; after a run of
    degenerate pivots the rule falls back to Bland's smallest-index rule,
    which cannot cycle.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    basis = list(basis)
    n_rows, n = A.shape
    if len(basis) != n_rows:
        raise LPError("basis size must equal the number of rows")
    # relative threshold keeps pivot choices invariant under positive scaling of c
    scale = float(np.abs(c).max()) if n else 0.0
    thresh = tol * scale
    degenerate_run = 0
    pivots = 0
    for _ in range(max_iter):
        try:
            Binv = np.linalg.inv(A[:, basis])
        except np.linalg.LinAlgError as exc:
            raise LPError("singular basis") from exc
        xB = Binv @ b
        if xB.min() < -1e-9:
            raise LPError("starting basis is infeasible")
        xB = np.maximum(xB, 0.0)
        y = c[basis] @ Binv
        d = c - y @ A
        d[basis] = 0.0
        if degenerate_run >= DEGENERATE_SWITCH:
            cand = np.flatnonzero(d > thresh)
            if len(cand) == 0:
                break
            e = int(cand[0])
        else:
            top = float(d.max())
            if top <= thresh:
                break
            # near-ties go to the smallest index so scaling c cannot reorder them
            e = int(np.flatnonzero(d >= top - TIE_TOL * scale)[0])
        col = Binv @ A[:, e]
        pos = np.flatnonzero(col > PIVOT_TOL)
        if len(pos) == 0:
            raise LPError("objective is unbounded")
        ratios = xB[pos] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + 1e-15]
        leave = int(min(ties, key=lambda r: basis[r]))
        degenerate_run = degenerate_run + 1 if rmin <= 1e-15 else 0
        basis[leave] = e
        pivots += 1
    else:
        raise LPError("iteration limit reached")
    z = np.zeros(n)
    z[basis] = xB
    return SimplexResult(z, float(c @ z), basis, pivots)
