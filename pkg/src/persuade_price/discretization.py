"""Price/type grids, per-price posterior-mean supports, epsilon selection, pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .market import Additive, Instance, InstanceError, Valuation

DEDUP_TOL = 1e-12
SNAP_TOL = 1e-9


def _dedup_sorted(values: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Sort and drop points within ``tol`` of their predecessor."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return v
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


@dataclass(frozen=True)
class PriceSupport:
    """Posterior means allowed at one grid price and where their critical types sit in S."""

    price: float
    q: np.ndarray
    s_index: np.ndarray


@dataclass(eq=False)
class Grid:
    """Discretized prices P, critical types S and lazily built supports Q_p."""

    instance: Instance
    epsilon: float
    prices: np.ndarray
    types: np.ndarray
    _supports: dict = field(default_factory=dict, repr=False)

    def price_index(self, p: float) -> int:
        k = int(np.argmin(np.abs(self.prices - p)))
        if abs(self.prices[k] - p) > DEDUP_TOL:
            raise InstanceError(f"price {p!r} is not on the grid")
        return k

    def snap(self, x, tol: float = SNAP_TOL):
        """Indices of the nearest S points and the distances to them."""
        x = np.asarray(x, dtype=float)
        S = self.types
        hi = np.clip(np.searchsorted(S, x), 1, len(S) - 1) if len(S) > 1 else np.zeros(x.shape, int)
        lo = hi - 1 if len(S) > 1 else hi
        pick_lo = np.abs(x - S[lo]) <= np.abs(S[hi] - x)
        idx = np.where(pick_lo, lo, hi)
        return idx, np.abs(S[idx] - x)

    def snap_exact(self, x) -> np.ndarray:
        idx, dist = self.snap(x)
        if np.any(dist > SNAP_TOL):
            bad = np.asarray(x, dtype=float).ravel()[np.argmax(np.ravel(dist))]
            raise InstanceError(f"critical type {bad!r} is not in S (grid construction bug)")
        return idx

    def contains_type(self, x) -> np.ndarray:
        return self.snap(x)[1] <= SNAP_TOL

    def support(self, p: float) -> PriceSupport:
        k = self.price_index(p)
        if k not in self._supports:
            self._supports[k] = _build_support(self, float(self.prices[k]))
        return self._supports[k]

    def in_support(self, p: float, q) -> np.ndarray:
        """Whether posterior means ``q`` belong to ``Q_p``."""
        x = self.instance.valuation.critical_type(p, np.asarray(q, dtype=float))
        return self.contains_type(x)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "prices": self.prices.tolist(), "types": self.types.tolist()}


def price_grid(U: float, eps: float) -> np.ndarray:
    n = int(math.floor(U / eps + 1e-9))
    prices = eps * np.arange(1, n + 1, dtype=float)
    if n == 0 or prices[-1] < U - DEDUP_TOL:
        prices = np.append(prices, U)
    return prices


def type_mesh(eps: float) -> np.ndarray:
    n = int(math.floor(1.0 / eps + 1e-9))
    mesh = eps * np.arange(0, n + 1, dtype=float)
    if abs(mesh[-1] - 1.0) <= DEDUP_TOL:
        mesh[-1] = 1.0
    else:
        mesh = np.append(mesh, 1.0)
    return mesh


def build_grids(inst: Instance, eps: float) -> Grid:
    """Price grid ``{eps, 2 eps, ..., U}`` and the quality-and-price-dependent type set."""
    if not (eps > 0) or eps > 1:
        raise InstanceError("epsilon must lie in (0, 1]")
    prices = price_grid(inst.U, eps)
    mesh = type_mesh(eps)
    kap = np.clip(inst.valuation.critical_type(prices[:, None], inst.qualities[None, :]), 0.0, 1.0)
    kap = np.asarray(kap, dtype=float).ravel()
    # land float-noisy mesh points exactly on the mesh so dedup keeps the canonical value
    near = np.clip(np.rint(kap / eps).astype(int), 0, len(mesh) - 1)
    close = np.abs(mesh[near] - kap) <= DEDUP_TOL
    kap = np.where(close, mesh[near], kap)
    types = _dedup_sorted(np.concatenate([mesh, kap]))
    types[0], types[-1] = 0.0, 1.0
    return Grid(inst, float(eps), prices, types)


def _build_support(grid: Grid, p: float) -> PriceSupport:
    inst = grid.instance
    val: Valuation = inst.valuation
    lo, hi = float(inst.qualities[0]), float(inst.qualities[-1])
    S = grid.types
    cand = [inst.qualities]

    interior = S[(S > 0.0) & (S < 1.0)]
    if len(interior):
        q = np.asarray(val.inverse_extended(p, interior), dtype=float).ravel()
        ok = np.isfinite(q) & (q >= lo - DEDUP_TOL) & (q <= hi + DEDUP_TOL)
        cand.append(np.clip(q[ok], lo, hi))

    # preimage of type 0 is the interval {q : v(0, q) >= p}
    if val.value(0.0, hi) >= p:
        q0 = float(val.inverse_extended(p, 0.0))
        cand.append(np.array([lo if not np.isfinite(q0) else min(max(q0, lo), hi), hi]))
    # preimage of type 1 is the interval {q : v(1, q) <= p}
    if val.value(1.0, lo) <= p:
        q1 = float(val.inverse_extended(p, 1.0))
        cand.append(np.array([lo, hi if not np.isfinite(q1) else min(max(q1, lo), hi)]))

    q = _dedup_sorted(np.concatenate(cand))
    # a quality may have merged with a float-noisy neighbour; keep the exact value
    near = np.clip(np.searchsorted(q, inst.qualities), 0, len(q) - 1)
    near = np.where((near > 0) & (np.abs(q[near - 1] - inst.qualities) < np.abs(q[near] - inst.qualities)),
                    near - 1, near)
    q[near] = inst.qualities
    s_index = grid.snap_exact(val.critical_type(p, q))
    return PriceSupport(p, q, np.asarray(s_index, dtype=int))


def support_grid(grid: Grid, p: float) -> np.ndarray:
    """Sorted posterior means ``q`` in the quality hull with ``kappa(p, q)`` in S."""
    return grid.support(p).q


# --------------------------------------------------------- epsilon selection


def theorem1_epsilon(m: int, T: int, constant: float = 1.0) -> float:
    """``constant * (m ln T / T)^(1/3)``, capped at 1."""
    return min(1.0, constant * (max(m, 1) * math.log(T) / T) ** (1.0 / 3.0))


def epsilon_from_bound(m: int, bound: float) -> float:
    """Largest ``eps <= bound`` with ``(1/(m-1)) / eps`` a positive integer."""
    if m < 2:
        raise InstanceError("need at least two qualities")
    gap = 1.0 / (m - 1)
    if gap <= bound:
        return gap
    return gap / math.ceil(gap / bound - 1e-9)


def epsilon_equally_spaced(m: int, T: int) -> float:
    """Discretization for equally spaced qualities with additive valuations.

    Falls back to the quality spacing ``1/(m-1)`` once it drops below
    ``(ln T / T)^(1/3)``.
    """
    if m < 2:
        raise InstanceError("need at least two qualities")
    return epsilon_from_bound(m, (math.log(T) / T) ** (1.0 / 3.0))


def is_equally_spaced(qualities, tol: float = 1e-12) -> bool:
    d = np.diff(np.asarray(qualities, dtype=float))
    return len(d) == 0 or bool(np.all(np.abs(d - d[0]) <= tol))


# ------------------------------------------------------------------- pooling


@dataclass(frozen=True)
class ContinuousPrior:
    """Prior with a density on [0, 1], discretized by the midpoint rule."""

    density: Callable[[np.ndarray], np.ndarray]
    n: int = 10_000

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        h = 1.0 / self.n
        mids = (np.arange(self.n) + 0.5) * h
        w = np.clip(np.asarray(self.density(mids), dtype=float), 0.0, None) * h
        if w.sum() <= 0:
            raise InstanceError("density has no mass on [0, 1]")
        keep = w > 0
        return mids[keep], w[keep] / w.sum()


@dataclass(frozen=True, eq=False)
class Pooling:
    """A pooled instance plus the map from original quality atoms to pooled indices."""

    instance: Instance
    qualities: np.ndarray
    prior: np.ndarray
    index_of: np.ndarray
    eps_hat: float


def bucket_ids(qualities, eps_hat: float) -> np.ndarray:
    """0 for quality exactly 0, else ``i`` for the bucket ``((i-1) eps_hat, i eps_hat]``."""
    w = np.asarray(qualities, dtype=float)
    ids = np.ceil(w / eps_hat - 1e-9).astype(int)
    ids = np.maximum(ids, 1)
    ids[w <= 0.0] = 0
    return ids


def pool(source, eps_hat: float, valuation: Valuation | None = None,
         price_cap: float | None = None) -> Pooling:
    """Merge qualities within ``eps_hat``-buckets into their conditional means."""
    if not (eps_hat > 0):
        raise InstanceError("pooling precision must be positive")
    eps_hat = min(float(eps_hat), 1.0)
    if isinstance(source, Instance):
        w, lam = np.asarray(source.qualities), np.asarray(source.prior)
        valuation = valuation or source.valuation
        price_cap = source.U if price_cap is None else price_cap
    elif isinstance(source, ContinuousPrior):
        w, lam = source.atoms()
        valuation = valuation or Additive()
        if price_cap is None:
            price_cap = float(valuation.value(1.0, 1.0))
    else:
        raise InstanceError("pool expects an Instance or a ContinuousPrior")
    ids = bucket_ids(w, eps_hat)
    used = np.unique(ids)
    pos = {b: k for k, b in enumerate(used)}
    index_of = np.array([pos[b] for b in ids])
    if (isinstance(source, Instance) and len(used) == len(w)
            and valuation == source.valuation and price_cap == source.U):
        # every quality is its own bucket: keep the instance bit for bit
        return Pooling(source, w, lam, index_of, eps_hat)
    mass = np.array([lam[ids == b].sum() for b in used])
    means = np.array([np.dot(lam[ids == b], w[ids == b]) / lam[ids == b].sum() for b in used])
    inst = Instance(means, mass / mass.sum(), valuation, price_cap)
    return Pooling(inst, w, lam, index_of, eps_hat)


def pool_instance(source, eps_hat: float, valuation: Valuation | None = None) -> Instance:
    return pool(source, eps_hat, valuation).instance
