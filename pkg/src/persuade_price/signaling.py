"""Advertising strategies as Bayes-consistent distributions over posterior means.

An :class:`Advertising` stores a finite support ``q_1..q_K`` and a matrix of
conditional masses ``rho[i, k]`` (probability of inducing ``q_k`` when the
realized quality is ``i``).  Feasibility is the Bayes-consistency condition
``sum_i prior_i rho[i, k] (omega_i - q_k) = 0`` at every supported point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .market import Instance, InstanceError, TypeDistribution, _draw_index, prior_mean

if TYPE_CHECKING:
    from .discretization import Grid

CONSISTENCY_TOL = 1e-9
MEAN_TOL = 1e-8
MERGE_TOL = 1e-12


class FeasibilityError(ValueError):
    """An advertising strategy violates Bayes consistency."""


class PreconditionError(ValueError):
    """Input does not meet an operation's precondition."""


@dataclass(frozen=True, eq=False)
class Advertising:
    support: np.ndarray
    conditionals: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.support, dtype=float))
        c = np.atleast_2d(np.asarray(self.conditionals, dtype=float))
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "conditionals", c)

    @property
    def size(self) -> int:
        return len(self.support)

    def joint(self, prior) -> np.ndarray:
        """``prior_i * rho[i, k]``."""
        return np.asarray(prior)[:, None] * self.conditionals

    def marginal(self, prior) -> np.ndarray:
        return self.joint(prior).sum(axis=0)

    def backing(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.conditionals[:, k] > 0)

    def merged(self, tol: float = MERGE_TOL) -> "Advertising":
        """Merge support points closer than ``tol``, summing conditionals."""
        order = np.argsort(self.support, kind="stable")
        s = self.support[order]
        c = self.conditionals[:, order]
        groups = np.concatenate([[0], np.cumsum(np.diff(s) > tol)])
        n = groups[-1] + 1 if len(s) else 0
        new_s = np.array([s[groups == g][0] for g in range(n)])
        new_c = np.zeros((c.shape[0], n))
        np.add.at(new_c.T, groups, c.T)
        return Advertising(new_s, new_c)

    def pruned(self) -> "Advertising":
        keep = self.conditionals.sum(axis=0) > 0
        return Advertising(self.support[keep], self.conditionals[:, keep])

    def to_dict(self) -> dict:
        return {"support": [float(v) for v in self.support],
                "conditionals": [[float(v) for v in row] for row in self.conditionals]}

    @classmethod
    def from_dict(cls, d: dict) -> "Advertising":
        return cls(np.asarray(d["support"], dtype=float), np.asarray(d["conditionals"], dtype=float))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    kind: str = ""
    index: int = -1
    residual: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def validate(adv: Advertising, inst: Instance) -> ValidationReport:
    """Check shape, nonnegativity, row masses, Bayes consistency and the prior mean."""
    c = adv.conditionals
    w, lam = inst.qualities, inst.prior
    if c.shape != (inst.m, adv.size):
        return ValidationReport(False, "shape", -1, float("nan"))
    if adv.size == 0:
        return ValidationReport(False, "empty", -1, 1.0)
    if c.min() < -1e-12:
        k = int(np.argmin(c.min(axis=0)))
        return ValidationReport(False, "negative-mass", k, float(-c.min()))
    rows = np.abs(c.sum(axis=1) - 1.0)
    if rows.max() > CONSISTENCY_TOL:
        i = int(np.argmax(rows))
        return ValidationReport(False, "row-mass", i, float(rows[i]))
    out = np.maximum(w[0] - adv.support, adv.support - w[-1])
    if out.max() > MERGE_TOL:
        k = int(np.argmax(out))
        return ValidationReport(False, "support-range", k, float(out[k]))
    joint = adv.joint(lam)
    marg = joint.sum(axis=0)
    resid = np.abs((joint * (w[:, None] - adv.support[None, :])).sum(axis=0))
    resid = np.where(marg > 0, resid, 0.0)
    if resid.max() > CONSISTENCY_TOL:
        k = int(np.argmax(resid))
        return ValidationReport(False, "bayes-consistency", k, float(resid[k]))
    mean_gap = abs(float(np.dot(marg, adv.support)) - prior_mean(inst))
    if mean_gap > MEAN_TOL:
        return ValidationReport(False, "mean", -1, mean_gap)
    return ValidationReport(True, "", -1, float(resid.max()))


def no_info(inst: Instance) -> Advertising:
    return Advertising(np.array([prior_mean(inst)]), np.ones((inst.m, 1)))


def full_info(inst: Instance) -> Advertising:
    return Advertising(inst.qualities.copy(), np.eye(inst.m))


def sample_posterior_mean(adv: Advertising, i: int, rng: np.random.Generator) -> tuple[int, float]:
    row = adv.conditionals[i]
    k = _draw_index(np.cumsum(row) / row.sum(), rng.random())
    return k, float(adv.support[k])


def revenue(p: float, adv: Advertising, inst: Instance, dist: TypeDistribution) -> float:
    """Exact expected revenue ``p * sum_k rho(q_k) D(kappa(p, q_k))``."""
    if p == 0:
        return 0.0
    kap = inst.valuation.critical_type(p, adv.support)
    return float(p * np.dot(adv.marginal(inst.prior), np.atleast_1d(dist.demand(kap))))


def _require_valid(adv: Advertising, inst: Instance) -> None:
    rep = validate(adv, inst)
    if not rep:
        raise FeasibilityError(f"advertising fails {rep.kind} (residual {rep.residual:.3g})")


def binary_support_decompose(adv: Advertising, inst: Instance) -> Advertising:
    """Split every support point into pieces backed by at most two qualities.

    The marginal over posterior-mean values is unchanged; a point ``q`` may
    appear several times in the output, once per quality pair.
    """
    _require_valid(adv, inst)
    w, lam = inst.qualities, inst.prior
    joint = adv.joint(lam)
    pts: list[float] = []
    cols: list[np.ndarray] = []

    def emit(q, masses):
        col = np.zeros(inst.m)
        for i, a in masses:
            col[i] += a / lam[i]
        pts.append(q)
        cols.append(col)

    for k, q in enumerate(adv.support):
        mass = joint[:, k].copy()
        if mass.sum() <= 0:
            continue
        total = mass.sum()
        eq = np.flatnonzero((np.abs(w - q) <= MERGE_TOL) & (mass > 0))
        for i in eq:
            emit(q, [(i, mass[i])])
        lower = [i for i in np.flatnonzero(w < q - MERGE_TOL) if mass[i] > 0]
        upper = [j for j in np.flatnonzero(w > q + MERGE_TOL)[::-1] if mass[j] > 0]
        a_ptr = b_ptr = 0
        while a_ptr < len(lower) and b_ptr < len(upper):
            i, j = lower[a_ptr], upper[b_ptr]
            # pair masses a (from i) and b (from j) with mean q: a (q - w_i) = b (w_j - q)
            a = min(mass[i], mass[j] * (w[j] - q) / (q - w[i]))
            b = a * (q - w[i]) / (w[j] - q)
            b = min(b, mass[j])
            emit(q, [(i, a), (j, b)])
            mass[i] -= a
            mass[j] -= b
            if mass[i] <= 1e-15 * total:
                a_ptr += 1
            if mass[j] <= 1e-15 * total:
                b_ptr += 1
        left = sum(mass[i] for i in lower[a_ptr:]) + sum(mass[j] for j in upper[b_ptr:])
        if left > 1e-9 * max(total, 1e-300) + 1e-15:
            raise FeasibilityError(f"support point {q!r} is not a mixture with mean {q!r}")
    return Advertising(np.array(pts), np.column_stack(cols) if cols else np.zeros((inst.m, 0)))


def is_binary_supported(adv: Advertising) -> bool:
    return bool(np.all((adv.conditionals > 0).sum(axis=0) <= 2))


def enforce_no_bad_posterior(p: float, adv: Advertising, inst: Instance) -> Advertising:
    """Send mass at non-quality points no buyer would buy at ``p`` back to the qualities."""
    w = inst.qualities
    val = inst.valuation
    keep_pts, keep_cols = [], []
    returned = np.zeros(inst.m)
    for k, q in enumerate(adv.support):
        col = adv.conditionals[:, k]
        is_quality = np.any(np.abs(w - q) <= MERGE_TOL)
        if not is_quality and val.value(1.0, q) < p and col.sum() > 0:
            returned += col
        else:
            keep_pts.append(q)
            keep_cols.append(col)
    for i in np.flatnonzero(returned > 0):
        col = np.zeros(inst.m)
        col[i] = returned[i]
        keep_pts.append(float(w[i]))
        keep_cols.append(col)
    return Advertising(np.array(keep_pts), np.column_stack(keep_cols))


def rounding_price(p: float, grid: "Grid") -> float:
    """Largest grid price in ``[p - 2 eps, p - eps]``."""
    eps = grid.epsilon
    ok = (grid.prices >= p - 2 * eps - 1e-12) & (grid.prices <= p - eps + 1e-12)
    if not ok.any():
        raise PreconditionError(f"no grid price within [p - 2eps, p - eps] for p={p!r}")
    return float(grid.prices[np.flatnonzero(ok)[-1]])


def rounding(p: float, adv: Advertising, grid: "Grid") -> tuple[float, Advertising]:
    """Round ``(p, adv)`` onto the grid, losing at most ``2 eps`` of revenue.

    ``adv`` must be binary supported and have no posterior (outside the
    quality set) that prices every buyer out at ``p``.  Each off-grid point
    ``q`` is split between the two posterior means whose critical types at
    the rounded price are the grid neighbours bracketing ``kappa(p', q)``.
    """
    inst = grid.instance
    eps = grid.epsilon
    val = inst.valuation
    w, lam = inst.qualities, inst.prior
    if p < 2 * eps - 1e-12:
        raise PreconditionError(f"price {p!r} is below 2 eps = {2 * eps!r}")
    if not is_binary_supported(adv):
        raise PreconditionError("advertising is not binary supported")
    p_new = rounding_price(p, grid)
    marg = adv.marginal(lam)
    pts: list[float] = []
    cols: list[np.ndarray] = []
    for k, q in enumerate(adv.support):
        col = adv.conditionals[:, k]
        if marg[k] <= 0:
            continue
        x_new = float(val.critical_type(p_new, q))
        backing = np.flatnonzero(col > 0)
        if grid.contains_type(x_new) or len(backing) < 2:
            pts.append(q)
            cols.append(col.copy())
            continue
        i, j = int(backing[0]), int(backing[1])
        z = math.ceil(x_new / eps)
        x_left, x_right = min(z * eps, 1.0), (z - 1) * eps
        q_left = float(val.inverse_extended(p_new, x_left))
        q_right = float(val.inverse_extended(p_new, x_right))
        q_left = w[i] if math.isnan(q_left) else max(q_left, w[i])
        q_right = w[j] if math.isnan(q_right) else min(q_right, w[j])
        if q_right - q_left <= MERGE_TOL:
            pts.append(q)
            cols.append(col.copy())
            continue
        if not (q_left <= q + MERGE_TOL and q <= q_right + MERGE_TOL):
            raise FeasibilityError(
                f"rounding bracket [{q_left!r}, {q_right!r}] misses q={q!r}; "
                "input violates the no-bad-posterior precondition")
        span = w[j] - w[i]
        m_left = marg[k] * (q_right - q) / (q_right - q_left)
        left = np.zeros(inst.m)
        left[i] = (w[j] - q_left) / span * m_left / lam[i]
        left[j] = (q_left - w[i]) / span * m_left / lam[j]
        right = np.zeros(inst.m)
        right[i] = col[i] - left[i]
        right[j] = col[j] - left[j]
        pts.extend([q_left, q_right])
        cols.extend([left, right])
    out = Advertising(np.array(pts), np.column_stack(cols)).merged()
    # clear float dust so the result is exactly nonnegative
    c = np.where(np.abs(out.conditionals) < 1e-15, 0.0, out.conditionals)
    return p_new, Advertising(out.support, np.maximum(c, 0.0)).pruned()
