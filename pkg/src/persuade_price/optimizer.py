"""Per-price signaling programs, the per-round UCB program and OPT oracles.

For a fixed price the seller's program is a linear program over
distributions of posterior means.  By the binary-support property an
optimal solution only needs atoms backed by one or two qualities, so the
LP here has one column per (quality pair, posterior mean between them):
a unit of such a column places ``(w_j - q) / (w_j - w_i)`` of quality
``i``'s mass and ``(q - w_i) / (w_j - w_i)`` of quality ``j``'s mass on
``q``.  The constraint matrix has only ``m`` rows and the starting basis
(full revelation) is always feasible.

With one or two qualities Bayes consistency reduces to matching the prior
mean, and the LP value is the concave envelope of ``g`` at that mean.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import Grid, build_grids
from .lp import simplex_max
from .market import Instance, InstanceError, TypeDistribution, prior_mean
from .signaling import Advertising, no_info

PRICE_TIE_TOL = 1e-12
Q_TOL = 1e-12


# ---------------------------------------------------------------- per price LP


def pair_columns(qualities, q_points):
    """Constraint matrix of the pair formulation.

    Returns ``(A, q_index, pairs)``: ``A`` is ``m x n``, ``q_index[c]`` the
    posterior mean used by column ``c`` and ``pairs[c] = (i, j)`` its backing
    qualities (``i == j`` for full revelation of quality ``i``).
    """
    w = np.asarray(qualities, dtype=float)
    Q = np.asarray(q_points, dtype=float)
    m = len(w)
    cols, qidx, pairs = [], [], []
    for i in range(m):
        k = int(np.argmin(np.abs(Q - w[i])))
        if abs(Q[k] - w[i]) > Q_TOL:
            raise InstanceError(f"support grid misses quality {w[i]!r}")
        e = np.zeros(m)
        e[i] = 1.0
        cols.append(e)
        qidx.append(k)
        pairs.append((i, i))
    for i in range(m):
        for j in range(i + 1, m):
            span = w[j] - w[i]
            inside = np.flatnonzero((Q > w[i] + Q_TOL) & (Q < w[j] - Q_TOL))
            for k in inside:
                col = np.zeros(m)
                col[i] = (w[j] - Q[k]) / span
                col[j] = (Q[k] - w[i]) / span
                cols.append(col)
                qidx.append(int(k))
                pairs.append((i, j))
    return np.column_stack(cols), np.array(qidx, dtype=int), np.array(pairs, dtype=int)


def _advertising_from_columns(inst: Instance, Q, A, qidx, z) -> Advertising:
    used = np.flatnonzero(z > 0)
    ks = np.unique(qidx[used])
    cond = np.zeros((inst.m, len(ks)))
    pos = {k: n for n, k in enumerate(ks)}
    for c in used:
        cond[:, pos[qidx[c]]] += z[c] * A[:, c]
    cond /= np.asarray(inst.prior)[:, None]
    cond = np.maximum(cond, 0.0)
    return Advertising(np.asarray(Q, dtype=float)[ks], cond)


def _advertising_from_masses(inst: Instance, q, mass) -> Advertising:
    """Two-quality (or single-quality) conditionals for a posterior-mean distribution."""
    q = np.asarray(q, dtype=float)
    mass = np.asarray(mass, dtype=float)
    w, lam = inst.qualities, inst.prior
    if inst.m == 1:
        return Advertising(q[:1].copy(), np.ones((1, 1)))
    span = w[1] - w[0]
    low = mass * (w[1] - q) / span / lam[0]
    high = mass * (q - w[0]) / span / lam[1]
    return Advertising(q, np.maximum(np.vstack([low, high]), 0.0))


def upper_envelope_at(q, g, mu: float) -> tuple[int, int, float, float]:
    """Concave envelope of points ``(q, g)`` at ``mu``.

    Returns ``(l, r, w_left, value)`` where the envelope at ``mu`` is the
    chord between points ``l`` and ``r`` with weight ``w_left`` on ``l``.
    ``q`` must be sorted and cover ``mu``.
    """
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    hull: list[int] = []
    for k in range(len(q)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or below the chord a -> k
            if (g[b] - g[a]) * (q[k] - q[a]) <= (g[k] - g[a]) * (q[b] - q[a]):
                hull.pop()
            else:
                break
        hull.append(k)
    for h in hull:
        if abs(q[h] - mu) <= Q_TOL:
            return h, h, 1.0, float(g[h])
    for a, b in zip(hull, hull[1:]):
        if q[a] < mu < q[b]:
            wl = (q[b] - mu) / (q[b] - q[a])
            return a, b, float(wl), float(wl * g[a] + (1.0 - wl) * g[b])
    raise InstanceError("posterior-mean grid does not cover the prior mean")


def solve_signaling_lp(inst: Instance, p: float, q_points, g, method: str = "auto"):
    """Best Bayes-consistent distribution over ``q_points`` for objective ``g``.

    Returns ``(advertising, value)`` with ``value = sum_k rho(q_k) g(q_k)``.
    ``method`` is ``"hull"`` (one or two qualities only), ``"simplex"`` or
    ``"auto"``.
    """
    Q = np.asarray(q_points, dtype=float)
    g = np.asarray(g, dtype=float)
    if Q.shape != g.shape or len(Q) == 0:
        raise InstanceError("q_points and g must be equal-length and nonempty")
    if not np.all(np.isfinite(g)):
        raise InstanceError("objective values must be finite")
    if method == "auto":
        method = "hull" if inst.m <= 2 else "simplex"
    if method == "hull":
        if inst.m > 2:
            raise InstanceError("hull method needs at most two qualities")
        mu = prior_mean(inst)
        if inst.m == 1:
            k = int(np.argmin(np.abs(Q - mu)))
            return no_info(inst), float(g[k])
        l, r, wl, val = upper_envelope_at(Q, g, mu)
        if l == r:
            return _advertising_from_masses(inst, Q[[l]], [1.0]), val
        return _advertising_from_masses(inst, Q[[l, r]], [wl, 1.0 - wl]), val
    if method != "simplex":
        raise ValueError(f"unknown method {method!r}")
    A, qidx, _ = pair_columns(inst.qualities, Q)
    res = simplex_max(g[qidx], A, np.asarray(inst.prior), basis=list(range(inst.m)))
    adv = _advertising_from_columns(inst, Q, A, qidx, res.z)
    return adv, res.objective


# --------------------------------------------------------------- UCB programs


@dataclass
class Choice:
    """A price and an advertising strategy picked by a program."""

    price_index: int
    price: float
    support: np.ndarray
    s_index: np.ndarray
    conditionals: np.ndarray
    marginal: np.ndarray
    estimate: float
    key: object

    def advertising(self) -> Advertising:
        return Advertising(self.support.copy(), self.conditionals.copy())


def _pick_price(rev: np.ndarray) -> int:
    """Highest revenue; ties within tolerance go to the smallest price."""
    return int(np.flatnonzero(rev >= rev.max() - PRICE_TIE_TOL)[0])


class PairProgram:
    """Vectorized program for one or two qualities.

    Every (left, right) pair of posterior means around the prior mean at
    every price is laid out in one flat table, so a round costs a single
    gather plus a segmented max.
    """

    def __init__(self, grid: Grid):
        inst = grid.instance
        if inst.m > 2:
            raise InstanceError("PairProgram needs at most two qualities")
        self.grid = grid
        self.prices = grid.prices
        mu = prior_mean(inst)
        w, lam = inst.qualities, inst.prior
        sl, sr, ql, qr, wl, starts = [], [], [], [], [], []
        for p in grid.prices:
            sup = grid.support(p)
            q, s = sup.q, sup.s_index
            left = np.flatnonzero(q <= mu + Q_TOL)
            right = np.flatnonzero(q >= mu - Q_TOL)
            L, R = np.meshgrid(left, right, indexing="ij")
            L, R = L.ravel(), R.ravel()
            starts.append(len(np.concatenate(sl)) if sl else 0)
            gap = q[R] - q[L]
            with np.errstate(divide="ignore", invalid="ignore"):
                weight = np.where(gap > Q_TOL, (q[R] - mu) / gap, 1.0)
            sl.append(s[L])
            sr.append(s[R])
            ql.append(q[L])
            qr.append(q[R])
            wl.append(np.clip(weight, 0.0, 1.0))
        self.starts = np.array(starts, dtype=int)
        self.sl = np.concatenate(sl)
        self.sr = np.concatenate(sr)
        self.ql = np.concatenate(ql)
        self.qr = np.concatenate(qr)
        self.wl = np.concatenate(wl)
        self.wr = 1.0 - self.wl
        self.price_of = np.repeat(np.arange(len(grid.prices)), np.diff(np.append(self.starts, len(self.sl))))
        # probability of the left atom given each quality
        if inst.m == 1:
            self.left_given = np.ones((1, len(self.sl)))
        else:
            span = w[1] - w[0]
            self.left_given = np.vstack([
                self.wl * (w[1] - self.ql) / span / lam[0],
                self.wl * (self.ql - w[0]) / span / lam[1],
            ])
        self.m = inst.m

    def values(self, table: np.ndarray) -> np.ndarray:
        return self.wl * table[self.sl] + self.wr * table[self.sr]

    def choose(self, table) -> Choice:
        table = np.asarray(table, dtype=float)
        vals = self.values(table)
        best = np.maximum.reduceat(vals, self.starts)
        k = _pick_price(self.prices * best)
        end = self.starts[k + 1] if k + 1 < len(self.starts) else len(vals)
        c = self.starts[k] + int(np.argmax(vals[self.starts[k]:end]))
        return self._choice(k, c, float(self.prices[k] * vals[c]))

    def _choice(self, k: int, c: int, estimate: float) -> Choice:
        p = float(self.prices[k])
        if self.wl[c] >= 1.0:
            support = np.array([self.ql[c]])
            s_index = np.array([self.sl[c]])
            cond = np.ones((self.m, 1))
            marg = np.array([1.0])
        elif self.wl[c] <= 0.0:
            support = np.array([self.qr[c]])
            s_index = np.array([self.sr[c]])
            cond = np.ones((self.m, 1))
            marg = np.array([1.0])
        else:
            support = np.array([self.ql[c], self.qr[c]])
            s_index = np.array([self.sl[c], self.sr[c]])
            left = self.left_given[:, c]
            cond = np.column_stack([left, 1.0 - left])
            marg = np.array([self.wl[c], self.wr[c]])
        return Choice(k, p, support, s_index, cond, marg, estimate, int(c))


class SimplexProgram:
    """Program for any number of qualities: one warm-started LP per price.

    The constraints do not depend on the demand estimate, so each price
    keeps its last optimal basis and is re-solved only when the objective
    coefficients it sees have changed.
    """

    def __init__(self, grid: Grid):
        inst = grid.instance
        self.grid = grid
        self.prices = grid.prices
        self.prior = np.asarray(inst.prior)
        self.m = inst.m
        self._cols = []
        for p in grid.prices:
            sup = grid.support(p)
            A, qidx, _ = pair_columns(inst.qualities, sup.q)
            self._cols.append((A, qidx, sup.s_index[qidx], sup.q, sup.s_index))
        n = len(grid.prices)
        self._basis = [list(range(self.m)) for _ in range(n)]
        self._g = [None] * n
        self._z = [None] * n
        self._val = np.zeros(n)
        self.pivots = 0

    def _solve(self, k: int, table: np.ndarray) -> None:
        A, qidx, col_s, _, _ = self._cols[k]
        g = table[col_s]
        if self._g[k] is not None and np.array_equal(g, self._g[k]):
            return
        res = simplex_max(g, A, self.prior, self._basis[k])
        self._basis[k] = res.basis
        self._g[k] = g
        self._z[k] = res.z
        self._val[k] = res.objective
        self.pivots += res.pivots

    def choose(self, table) -> Choice:
        table = np.asarray(table, dtype=float)
        for k in range(len(self.prices)):
            self._solve(k, table)
        k = _pick_price(self.prices * self._val)
        A, qidx, _, q, s_index = self._cols[k]
        z = self._z[k]
        used = np.flatnonzero(z > 0)
        ks = np.unique(qidx[used])
        pos = np.searchsorted(ks, qidx[used])
        joint = np.zeros((self.m, len(ks)))
        np.add.at(joint.T, pos, (A[:, used] * z[used]).T)
        joint = np.maximum(joint, 0.0)
        cond = joint / self.prior[:, None]
        marg = joint.sum(axis=0)
        p = float(self.prices[k])
        key = (k, tuple(int(b) for b in sorted(self._basis[k])))
        return Choice(k, p, q[ks].copy(), s_index[ks].copy(), cond, marg,
                      float(p * self._val[k]), key)


class FixedProgram:
    """Price-only program under full revelation of quality."""

    def __init__(self, grid: Grid):
        inst = grid.instance
        self.grid = grid
        self.prices = grid.prices
        self.prior = np.asarray(inst.prior)
        self.support = np.asarray(inst.qualities, dtype=float)
        kap = inst.valuation.critical_type(grid.prices[:, None], self.support[None, :])
        self.s_index = grid.snap_exact(np.clip(kap, 0.0, 1.0))
        self.cond = np.eye(inst.m)

    def choose(self, table) -> Choice:
        table = np.asarray(table, dtype=float)
        vals = table[self.s_index] @ self.prior
        k = _pick_price(self.prices * vals)
        p = float(self.prices[k])
        return Choice(k, p, self.support, self.s_index[k], self.cond, self.prior,
                      float(p * vals[k]), k)


def make_program(grid: Grid, mode: str = "optimize"):
    if mode == "full_info":
        return FixedProgram(grid)
    if grid.instance.m <= 2:
        return PairProgram(grid)
    return SimplexProgram(grid)


def solve_ucb_program(inst: Instance, grid: Grid, tracker) -> tuple[float, Advertising, float]:
    """Best grid price and advertising against the tracker's optimistic demand."""
    if grid.instance is not inst:
        raise InstanceError("grid was built for a different instance")
    choice = make_program(grid).choose(tracker.ucb())
    return choice.price, choice.advertising(), choice.estimate


# ------------------------------------------------------------- clairvoyant OPT


@dataclass(frozen=True, eq=False)
class OptResult:
    price: float
    advertising: Advertising
    revenue: float
    epsilon: float

    @property
    def slack(self) -> float:
        """Upper bound on how far the true optimum can exceed ``revenue``."""
        return 2.0 * self.epsilon

    def to_dict(self) -> dict:
        return {"price": self.price, "revenue": self.revenue, "epsilon_opt": self.epsilon,
                "slack": self.slack, "advertising": self.advertising.to_dict()}


_OPT_CACHE: dict = {}


def _fingerprint(*docs) -> str:
    return json.dumps(docs, sort_keys=True)


def clairvoyant_opt(inst: Instance, dist: TypeDistribution, eps_opt: float = 1e-3,
                    mode: str = "optimize") -> OptResult:
    """Best grid price and advertising under the true demand.

    ``mode="no_info"`` restricts advertising to revealing nothing.  The true
    optimum exceeds the returned revenue by at most ``2 * eps_opt``.
    """
    key = _fingerprint(inst.to_dict(), dist.to_dict(), float(eps_opt), mode)
    if key in _OPT_CACHE:
        return _OPT_CACHE[key]
    if mode == "no_info":
        pseudo = Instance([prior_mean(inst)], [1.0], inst.valuation, inst.U)
        res = clairvoyant_opt(pseudo, dist, eps_opt)
        out = OptResult(res.price, no_info(inst), res.revenue, res.epsilon)
    elif mode == "optimize":
        grid = build_grids(inst, eps_opt)
        table = np.asarray(dist.demand(grid.types), dtype=float)
        revs = np.zeros(len(grid.prices))
        advs = []
        for k, p in enumerate(grid.prices):
            sup = grid.support(p)
            adv, val = solve_signaling_lp(inst, p, sup.q, table[sup.s_index])
            revs[k] = p * val
            advs.append(adv)
        k = _pick_price(revs)
        out = OptResult(float(grid.prices[k]), advs[k], float(revs[k]), float(eps_opt))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    _OPT_CACHE[key] = out
    return out


# ------------------------------------------------------- brute-force oracles

MAX_BRUTE_QUALITIES = 3
MAX_BRUTE_SUPPORT = 5
MAX_BRUTE_RESOLUTION = 50


def _check_brute_size(m: int, K: int, k: int = 1) -> None:
    if m > MAX_BRUTE_QUALITIES or K > MAX_BRUTE_SUPPORT or k > MAX_BRUTE_RESOLUTION:
        raise InstanceError(
            f"brute force limited to m <= {MAX_BRUTE_QUALITIES}, |support| <= "
            f"{MAX_BRUTE_SUPPORT}, resolution <= {MAX_BRUTE_RESOLUTION}")


def vertex_enumeration(inst: Instance, q_points, g) -> float:
    """Exact LP value by enumerating every basic feasible solution.

    Works on the original formulation with one variable per (quality,
    posterior mean) and no use of the pair structure.
    """
    w, lam = np.asarray(inst.qualities), np.asarray(inst.prior)
    Q = np.asarray(q_points, dtype=float)
    g = np.asarray(g, dtype=float)
    m, K = len(w), len(Q)
    _check_brute_size(m, K)
    n = m * K
    rows = []
    rhs = []
    for i in range(m):
        r = np.zeros((m, K))
        r[i, :] = 1.0
        rows.append(r.ravel())
        rhs.append(lam[i])
    for k in range(K):
        r = np.zeros((m, K))
        r[:, k] = w - Q[k]
        rows.append(r.ravel())
        rhs.append(0.0)
    A_full, b_full = np.array(rows), np.array(rhs)
    keep: list[int] = []
    for r in range(len(A_full)):
        if np.linalg.matrix_rank(A_full[keep + [r]]) > len(keep):
            keep.append(r)
    A, b = A_full[keep], b_full[keep]
    rank = len(keep)
    c = np.repeat(g[None, :], m, axis=0).ravel()
    subsets = np.array(list(itertools.combinations(range(n), rank)), dtype=int)
    B = np.transpose(A[:, subsets], (1, 0, 2))
    ok = np.abs(np.linalg.det(B)) > 1e-12
    B, subsets = B[ok], subsets[ok]
    x = np.linalg.solve(B, np.broadcast_to(b, (len(B), rank))[..., None])[..., 0]
    feasible = np.all(x >= -1e-12, axis=1)
    vals = np.einsum("ij,ij->i", x[feasible], c[subsets[feasible]])
    return float(vals.max())


_COMPOSITIONS: dict = {}


def _compositions(parts: int, k: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to at most ``k``."""
    if (parts, k) not in _COMPOSITIONS:
        if parts == 0:
            out = np.zeros((1, 0), dtype=int)
        else:
            # stars and bars with one slack part
            bars = np.array(list(itertools.combinations(range(k + parts), parts)), dtype=int)
            ext = np.concatenate([np.full((len(bars), 1), -1), bars], axis=1)
            out = np.diff(ext, axis=1) - 1
        _COMPOSITIONS[(parts, k)] = out
    return _COMPOSITIONS[(parts, k)]


def grid_enumeration(inst: Instance, q_points, g, k: int = 50, window: float = 0.0) -> float:
    """Best value over posterior-mean distributions with masses on a ``1/k`` grid.

    Interior masses are enumerated; the two extreme masses are solved from
    total mass and the prior mean.  Feasibility is the convex-order test
    ``E_G (q - t)^+ <= E_lambda (omega - t)^+`` at every kink ``t``, relaxed
    by ``window``.  With ``window=0`` every candidate is exactly feasible, so
    the result is a lower bound on the LP value.
    """
    w, lam = np.asarray(inst.qualities), np.asarray(inst.prior)
    Q = np.asarray(q_points, dtype=float)
    g = np.asarray(g, dtype=float)
    K = len(Q)
    _check_brute_size(len(w), K, k)
    mu = float(lam @ w)
    if K == 1:
        return float(g[0]) if abs(Q[0] - mu) <= 1e-12 else -math.inf
    comp = _compositions(K - 2, k) / k
    rest = 1.0 - comp.sum(axis=1)
    moment = mu - comp @ Q[1:-1]
    m_hi = (moment - rest * Q[0]) / (Q[-1] - Q[0])
    m_lo = rest - m_hi
    masses = np.column_stack([m_lo, comp, m_hi])
    ok = (m_lo >= -1e-12) & (m_hi >= -1e-12)
    masses = np.maximum(masses[ok], 0.0)
    t = np.union1d(Q, w)
    call_g = masses @ np.maximum(Q[:, None] - t[None, :], 0.0)
    call_lam = lam @ np.maximum(w[:, None] - t[None, :], 0.0)
    feasible = np.all(call_g <= call_lam[None, :] + window + 1e-12, axis=1)
    if not feasible.any():
        return -math.inf
    return float((masses[feasible] @ g).max())


@dataclass(frozen=True)
class BruteForce:
    vertex: float
    grid: float
    vertex_price: float = field(default=float("nan"))

    @property
    def best(self) -> float:
        return max(self.vertex, self.grid)


def brute_force_small(inst: Instance, dist: TypeDistribution, prices, supports, k: int = 50) -> BruteForce:
    """Best revenue over ``prices`` by both enumeration oracles.

    ``supports`` is one posterior-mean grid shared by every price or a list
    aligned with ``prices``.
    """
    prices = np.atleast_1d(np.asarray(prices, dtype=float))
    if isinstance(supports, np.ndarray) and supports.ndim == 1 or (
            len(supports) and np.isscalar(supports[0])):
        supports = [np.asarray(supports, dtype=float)] * len(prices)
    best_v, best_g, best_p = -math.inf, -math.inf, float("nan")
    for p, Q in zip(prices, supports):
        Q = np.asarray(Q, dtype=float)
        _check_brute_size(inst.m, len(Q), k)
        gq = np.asarray(dist.demand(inst.valuation.critical_type(p, Q)), dtype=float)
        v = p * vertex_enumeration(inst, Q, gq)
        gr = p * grid_enumeration(inst, Q, gq, k)
        if v > best_v:
            best_v, best_p = v, float(p)
        best_g = max(best_g, gr)
    return BruteForce(best_v, best_g, best_p)
