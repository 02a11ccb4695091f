"""Market primitives: qualities, prior, buyer valuations and type distributions.

Every buyer valuation here is linear in the posterior mean of quality,

    v(theta, q) = alpha(theta) + beta(theta) * q,

so the only buyer-side quantity the seller ever needs is the critical type
``kappa(p, q) = min{theta in [0, 1] : v(theta, q) >= p}`` (clamped to [0, 1]).
All numeric methods accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

ROOT_TOL = 1e-12
ATOM_TOL = 1e-12


class InstanceError(ValueError):
    """Raised for malformed market descriptions."""


class NoSolutionError(ValueError):
    """Raised when ``v(x, q) = p`` has no solution in ``q``."""


def _as_float(x):
    arr = np.asarray(x, dtype=float)
    return arr if arr.ndim else float(arr)


# ---------------------------------------------------------------- valuations


class Valuation:
    """Base class for valuations linear in quality."""

    kind = "abstract"

    def intercept(self, theta):
        raise NotImplementedError

    def slope(self, theta):
        raise NotImplementedError

    def value(self, theta, q):
        theta = np.asarray(theta, dtype=float)
        return _as_float(self.intercept(theta) + self.slope(theta) * np.asarray(q, dtype=float))

    def critical_type(self, p, q):
        return self.critical_type_bisect(p, q)

    def critical_type_bisect(self, p, q, tol: float = ROOT_TOL):
        """Generic critical type by vectorized bisection on theta."""
        p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
        lo = np.zeros(p.shape)
        hi = np.ones(p.shape)
        below_top = self.value(1.0, q) < p
        at_bottom = self.value(0.0, q) >= p
        n_iter = int(math.ceil(math.log2(1.0 / tol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            ok = np.asarray(self.value(mid, q)) >= p
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        out = np.where(below_top, 1.0, np.where(at_bottom, 0.0, hi))
        return _as_float(out)

    def inverse_extended(self, p, x):
        """Solve ``v(x, q) = p`` for ``q`` without clipping.

        Flat slopes give ``+inf`` (no ``q`` is large enough), ``-inf`` (every
        ``q`` overshoots) or ``nan`` (every ``q`` solves it).
        """
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.intercept(x), dtype=float)
        b = np.asarray(self.slope(x), dtype=float)
        flat = b <= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            q = (p - a) / np.where(flat, 1.0, b)
        gap = p - a
        flat_val = np.where(gap > 0, np.inf, np.where(gap < 0, -np.inf, np.nan))
        return _as_float(np.where(flat, flat_val, q))

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Additive(Valuation):
    kind = "additive"

    def intercept(self, theta):
        return np.asarray(theta, dtype=float)

    def slope(self, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def critical_type(self, p, q):
        return _as_float(np.clip(np.asarray(p, float) - np.asarray(q, float), 0.0, 1.0))


@dataclass(frozen=True)
class Multiplicative(Valuation):
    """``v(theta, q) = theta * q + theta``."""

    kind = "multiplicative"

    def intercept(self, theta):
        return np.asarray(theta, dtype=float)

    def slope(self, theta):
        return np.asarray(theta, dtype=float)

    def critical_type(self, p, q):
        return _as_float(np.clip(np.asarray(p, float) / (1.0 + np.asarray(q, float)), 0.0, 1.0))


def _check_table(knots, name: str) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(knots, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise InstanceError(f"{name}: expected a list of [theta, value] pairs")
    xs, ys = arr[:, 0], arr[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise InstanceError(f"{name}: knot thetas must be strictly increasing")
    if abs(xs[0]) > 1e-12 or abs(xs[-1] - 1.0) > 1e-12:
        raise InstanceError(f"{name}: knots must span [0, 1]")
    return xs, ys


@dataclass(frozen=True)
class LinearGeneric(Valuation):
    """``v = alpha(theta) + beta(theta) * q`` with piecewise-linear tables.

    Construction checks the valuation assumptions exactly on the union of
    knots (both tables are piecewise linear, so this is sufficient).
    """

    alpha_knots: tuple
    beta_knots: tuple
    check: bool = True
    kind = "linear"

    def __post_init__(self):
        ax, ay = _check_table(self.alpha_knots, "alpha")
        bx, by = _check_table(self.beta_knots, "beta")
        object.__setattr__(self, "_ax", ax)
        object.__setattr__(self, "_ay", ay)
        object.__setattr__(self, "_bx", bx)
        object.__setattr__(self, "_by", by)
        if self.check:
            problems = self.assumption_violations()
            if problems:
                raise InstanceError("; ".join(f"{code}: {msg}" for code, msg in problems))

    def intercept(self, theta):
        return np.interp(theta, self._ax, self._ay)

    def slope(self, theta):
        return np.interp(theta, self._bx, self._by)

    def assumption_violations(self) -> list[tuple[str, str]]:
        grid = np.union1d(self._ax, self._bx)
        out = []
        beta = self.slope(grid)
        if np.any(beta < 0):
            out.append(("assumption-1a", "beta(theta) must be >= 0 (valuation nondecreasing in quality)"))
        dtheta = np.diff(grid)
        for omega in (0.0, 1.0):
            dv = np.diff(self.value(grid, omega))
            if np.any(dv <= 0):
                out.append(("assumption-1b", f"v(., {omega:g}) must be strictly increasing in theta"))
                break
            if np.any(dv > dtheta * (1 + 1e-12)):
                out.append(("assumption-1b", f"v(., {omega:g}) must be 1-Lipschitz in theta"))
                break
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": [list(map(float, k)) for k in self.alpha_knots],
            "beta": [list(map(float, k)) for k in self.beta_knots],
        }


def valuation_at(val: Valuation, theta, omega):
    """Evaluate ``v(theta, omega)`` with domain checks."""
    for name, arg in (("type", theta), ("quality", omega)):
        a = np.asarray(arg, dtype=float)
        if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
            raise InstanceError(f"{name} must lie in [0, 1]")
    return val.value(theta, omega)


def critical_type(val: Valuation, p, q):
    """Lowest buyer type that purchases at price ``p`` under posterior mean ``q``."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(np.asarray(p, dtype=float) < 0) or np.any(q_arr < 0) or np.any(q_arr > 1):
        raise InstanceError("critical_type needs p >= 0 and q in [0, 1]")
    return val.critical_type(p, q)


def critical_type_inverse(val: Valuation, p: float, x: float) -> float:
    """The posterior mean ``q`` with ``v(x, q) = p`` (may fall outside [0, 1])."""
    if not 0.0 <= x <= 1.0:
        raise InstanceError("type must lie in [0, 1]")
    q = val.inverse_extended(p, x)
    if not np.isfinite(q):
        raise NoSolutionError(f"v({x}, q) is flat in q; no unique q gives price {p}")
    return float(q)


# -------------------------------------------------------- type distributions


class TypeDistribution:
    kind = "abstract"

    def demand(self, x):
        """``P(theta >= x)``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator):
        return self.quantile(rng.random())

    def quantile(self, u):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Uniform(TypeDistribution):
    kind = "uniform"

    def demand(self, x):
        return _as_float(np.clip(1.0 - np.asarray(x, dtype=float), 0.0, 1.0))

    def quantile(self, u):
        return _as_float(u)


@dataclass(frozen=True)
class DiscreteAtoms(TypeDistribution):
    """Finitely many buyer types.

    Demand counts atoms at or above ``x`` up to ``ATOM_TOL``, so a critical
    type that lands on an atom modulo float noise still sells to that atom.
    """

    points: tuple
    masses: tuple
    kind = "atoms"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        ms = np.asarray(self.masses, dtype=float)
        if pts.shape != ms.shape or pts.ndim != 1 or len(pts) == 0:
            raise InstanceError("atoms: points and masses must be equal-length lists")
        if np.any(pts < 0) or np.any(pts > 1):
            raise InstanceError("atoms: points must lie in [0, 1]")
        if np.any(ms < 0) or abs(ms.sum() - 1.0) > 1e-9:
            raise InstanceError("atoms: masses must be nonnegative and sum to 1")
        order = np.argsort(pts, kind="stable")
        pts, ms = pts[order], ms[order] / ms.sum()
        object.__setattr__(self, "_pts", pts)
        object.__setattr__(self, "_cum", np.cumsum(ms))
        # tail[k] = mass of atoms k, k+1, ...
        object.__setattr__(self, "_tail", np.concatenate([np.cumsum(ms[::-1])[::-1], [0.0]]))

    def demand(self, x):
        idx = np.searchsorted(self._pts, np.asarray(x, dtype=float) - ATOM_TOL, side="left")
        return _as_float(np.minimum(self._tail[idx], 1.0))

    def quantile(self, u):
        k = np.searchsorted(self._cum, np.asarray(u, dtype=float), side="right")
        return _as_float(self._pts[np.minimum(k, len(self._pts) - 1)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "points": list(map(float, self.points)),
                "masses": list(map(float, self.masses))}


@dataclass(frozen=True)
class PiecewiseLinearCDF(TypeDistribution):
    """CDF interpolated linearly between ``(theta, F(theta))`` knots.

    ``F(0) > 0`` encodes an atom at type zero.
    """

    knots: tuple
    kind = "piecewise_linear"

    def __post_init__(self):
        xs, fs = _check_table(self.knots, "cdf")
        if np.any(np.diff(fs) < 0) or fs[0] < 0 or abs(fs[-1] - 1.0) > 1e-12:
            raise InstanceError("cdf: values must be nondecreasing from >= 0 to 1")
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_fs", fs)

    def demand(self, x):
        x = np.asarray(x, dtype=float)
        return _as_float(np.where(x <= 0.0, 1.0, 1.0 - np.interp(x, self._xs, self._fs)))

    def quantile(self, u):
        fs, xs = self._fs, self._xs
        u = np.asarray(u, dtype=float)
        k = np.clip(np.searchsorted(fs, u, side="left"), 1, len(fs) - 1)
        f0, f1 = fs[k - 1], fs[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = xs[k - 1] + (u - f0) / (f1 - f0) * (xs[k] - xs[k - 1])
        x = np.where(f1 <= f0, xs[k], x)
        return _as_float(np.where(u <= fs[0], 0.0, x))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "knots": [list(map(float, k)) for k in self.knots]}


def demand(dist: TypeDistribution, x):
    return dist.demand(x)


def sample_type(dist: TypeDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


# ----------------------------------------------------------------- instances


@dataclass(frozen=True, eq=False)
class Instance:
    """Immutable market description: qualities, prior, valuation, price cap.

    Zero-mass qualities are dropped. ``price_cap`` defaults to the highest
    possible valuation ``v(1, max quality)``.
    """

    qualities: np.ndarray
    prior: np.ndarray
    valuation: Valuation = field(default_factory=Additive)
    price_cap: float | None = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.qualities, dtype=float)).copy()
        lam = np.atleast_1d(np.asarray(self.prior, dtype=float)).copy()
        if w.shape != lam.shape or w.ndim != 1 or len(w) == 0:
            raise InstanceError("qualities and prior must be equal-length nonempty lists")
        if np.any(np.diff(w) <= 0):
            raise InstanceError("qualities must be strictly increasing")
        if np.any(w < 0) or np.any(w > 1):
            raise InstanceError("qualities must lie in [0, 1]")
        if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
            raise InstanceError("prior must be nonnegative and sum to 1")
        keep = lam > 0
        w, lam = w[keep], lam[keep] / lam[keep].sum()
        w.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "qualities", w)
        object.__setattr__(self, "prior", lam)
        top = float(self.valuation.value(1.0, w[-1]))
        cap = top if self.price_cap is None else float(self.price_cap)
        if cap <= 0:
            raise InstanceError("price cap must be positive")
        object.__setattr__(self, "price_cap", cap)

    @property
    def m(self) -> int:
        return len(self.qualities)

    @property
    def U(self) -> float:
        return self.price_cap

    def to_dict(self) -> dict:
        return {
            "qualities": [float(v) for v in self.qualities],
            "prior": [float(v) for v in self.prior],
            "valuation": self.valuation.to_dict(),
            "price_cap": float(self.price_cap),
        }


def prior_mean(inst: Instance) -> float:
    return float(np.dot(inst.prior, inst.qualities))


def sample_quality(inst: Instance, rng: np.random.Generator) -> int:
    """Index ``i`` (0-based) drawn with probability ``prior[i]``."""
    return _draw_index(np.cumsum(inst.prior), rng.random())


def _draw_index(cum: np.ndarray, u: float) -> int:
    k = int(np.searchsorted(cum, u, side="right"))
    return min(k, len(cum) - 1)


# ------------------------------------------------------------ JSON ingestion


def valuation_from_dict(d: dict) -> Valuation:
    kind = d.get("kind")
    if kind == "additive":
        return Additive()
    if kind == "multiplicative":
        return Multiplicative()
    if kind in ("linear", "linear_generic"):
        return LinearGeneric(tuple(map(tuple, d["alpha"])), tuple(map(tuple, d["beta"])))
    raise InstanceError(f"unknown valuation kind {kind!r}")


def distribution_from_dict(d: dict) -> TypeDistribution:
    kind = d.get("kind")
    if kind == "uniform":
        return Uniform()
    if kind in ("atoms", "discrete"):
        return DiscreteAtoms(tuple(d["points"]), tuple(d["masses"]))
    if kind in ("piecewise_linear", "cdf"):
        return PiecewiseLinearCDF(tuple(map(tuple, d["knots"])))
    raise InstanceError(f"unknown demand kind {kind!r}")


def instance_diagnostics(doc: dict) -> list[tuple[str, str, str]]:
    """Check an instance document; returns ``(code, field_path, message)`` triples."""
    out: list[tuple[str, str, str]] = []
    qs, pr = doc.get("qualities"), doc.get("prior")
    if not isinstance(qs, list) or not qs:
        return [("qualities-missing", "qualities", "a nonempty list is required")]
    if not isinstance(pr, list) or len(pr) != len(qs):
        return [("prior-length", "prior", "prior must have one weight per quality")]
    try:
        w = np.asarray(qs, dtype=float)
        lam = np.asarray(pr, dtype=float)
    except (TypeError, ValueError):
        return [("not-numeric", "qualities", "qualities and prior must be numbers")]
    if np.any(np.diff(w) <= 0):
        out.append(("quality-order", "qualities", "qualities must be strictly increasing"))
    if np.any(w < 0) or np.any(w > 1):
        out.append(("quality-range", "qualities", "qualities must lie in [0, 1]"))
    elif len(w) > 1 and (abs(w[0]) > 1e-12 or abs(w[-1] - 1.0) > 1e-12):
        # a single quality cannot be both endpoints
        out.append(("quality-endpoints", "qualities", "lowest quality must be 0 and highest 1"))
    if np.any(lam < 0):
        out.append(("prior-negative", "prior", "prior weights must be nonnegative"))
    if abs(lam.sum() - 1.0) > 1e-12:
        out.append(("prior-mass", "prior", f"prior sums to {lam.sum():.12g}, not 1"))
    vdoc = doc.get("valuation", {"kind": "additive"})
    try:
        if vdoc.get("kind") in ("linear", "linear_generic"):
            val = LinearGeneric(tuple(map(tuple, vdoc["alpha"])), tuple(map(tuple, vdoc["beta"])),
                                check=False)
            out.extend((code, "valuation", msg) for code, msg in val.assumption_violations())
        else:
            valuation_from_dict(vdoc)
    except (InstanceError, KeyError, TypeError) as exc:
        out.append(("valuation", "valuation", str(exc)))
    if "demand" in doc:
        try:
            distribution_from_dict(doc["demand"])
        except (InstanceError, KeyError, TypeError) as exc:
            out.append(("demand", "demand", str(exc)))
    cap = doc.get("price_cap")
    if cap is not None and not (isinstance(cap, (int, float)) and cap > 0):
        out.append(("price-cap", "price_cap", "price_cap must be a positive number"))
    return out


def instance_from_dict(doc: dict[str, Any]) -> tuple[Instance, TypeDistribution]:
    problems = instance_diagnostics(doc)
    if problems:
        raise InstanceError("; ".join(f"{path}: {code}: {msg}" for code, path, msg in problems))
    inst = Instance(
        np.asarray(doc["qualities"], dtype=float),
        np.asarray(doc["prior"], dtype=float),
        valuation_from_dict(doc.get("valuation", {"kind": "additive"})),
        doc.get("price_cap"),
    )
    return inst, distribution_from_dict(doc.get("demand", {"kind": "uniform"}))
