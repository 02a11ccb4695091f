"""Online game loop: the learning algorithms, fixed-advertising baselines and regret accounting.

Every run draws all of its randomness up front from ``default_rng(seed)``:
one uniform per round for the realized quality, one for the posterior
draw and one for the buyer type.  Different policies run with the same
seed therefore face the same buyers and products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretization import ContinuousPrior, Grid, build_grids, pool, theorem1_epsilon
from .learning import DemandTracker
from .market import ATOM_TOL, Instance, InstanceError, TypeDistribution, prior_mean
from .optimizer import Choice, FixedProgram, PairProgram, make_program
from .signaling import Advertising, no_info


@dataclass(frozen=True)
class RoundRecord:
    t: int
    price: float
    advertising_id: int
    quality: int
    q: float
    x: float
    a: int
    revenue_realized: float
    revenue_expected: float


@dataclass(eq=False)
class RunResult:
    """Per-round log of one run plus the final tracker state.

    ``t`` is 1-based in records and CSV output.  ``quality`` indexes the
    instance the buyers' products are drawn from (the original one for
    pooled runs).
    """

    algorithm: str
    seed: int
    horizon: int
    epsilon: float
    price: np.ndarray
    q: np.ndarray
    x: np.ndarray
    a: np.ndarray
    quality: np.ndarray
    advertising_id: np.ndarray
    revenue_expected: np.ndarray
    tracker: DemandTracker
    advertisings: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    opt: float | None = None

    @property
    def revenue_realized(self) -> np.ndarray:
        return self.price * self.a

    @property
    def cumulative_expected(self) -> float:
        return float(self.revenue_expected.sum())

    @property
    def cumulative_realized(self) -> float:
        return float(self.revenue_realized.sum())

    def record(self, t: int) -> RoundRecord:
        k = t - 1
        return RoundRecord(t, float(self.price[k]), int(self.advertising_id[k]), int(self.quality[k]),
                           float(self.q[k]), float(self.x[k]), int(self.a[k]),
                           float(self.price[k] * self.a[k]), float(self.revenue_expected[k]))

    def regret_expected(self, opt: float | None = None) -> np.ndarray:
        return regret_curve(self, self._opt(opt))

    def regret_realized(self, opt: float | None = None) -> np.ndarray:
        return regret_curve(self, self._opt(opt), realized=True)

    def _opt(self, opt):
        opt = self.opt if opt is None else opt
        if opt is None:
            raise ValueError("no OPT value supplied for this run")
        return opt


def regret_curve(run: RunResult, opt_per_round: float, realized: bool = False) -> np.ndarray:
    """Cumulative ``opt - revenue`` after each round."""
    rev = run.revenue_realized if realized else run.revenue_expected
    return np.cumsum(opt_per_round - rev)


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)


def _simulate(algorithm: str, signal_inst: Instance, grid: Grid, program, dist: TypeDistribution,
              T: int, seed: int, source_prior: np.ndarray, quality_map: np.ndarray,
              on_round: Callable | None = None, metadata: dict | None = None) -> RunResult:
    S = grid.types
    n_init = len(S)
    if T < n_init:
        raise InstanceError(f"horizon {T} is shorter than the {n_init}-round initialization")
    tracker = DemandTracker(S, T)
    rng = np.random.default_rng(seed)
    U = rng.random((T, 3))
    quality = _draw(np.cumsum(source_prior), U[:, 0])
    signal_quality = quality_map[quality]
    theta = np.asarray(dist.quantile(U[:, 2]), dtype=float)
    d_true = np.asarray(dist.demand(S), dtype=float)
    cut = S - ATOM_TOL

    price = np.zeros(T)
    q_out = np.zeros(T)
    x_out = np.zeros(T)
    a_out = np.zeros(T, dtype=np.int64)
    adv_id = np.zeros(T, dtype=np.int64)
    rev_exp = np.zeros(T)

    ids: dict = {}
    advertisings: list[Advertising] = []

    def id_for(key, make):
        if key not in ids:
            ids[key] = len(advertisings)
            advertisings.append(make())
        return ids[key]

    # initialization: no information, one round per critical type
    mu = prior_mean(signal_inst)
    val = signal_inst.valuation
    init_id = id_for("no_info", lambda: no_info(signal_inst))
    init_prices = np.minimum(np.asarray(val.value(S, mu), dtype=float), signal_inst.U)
    init_idx, _ = grid.snap(np.asarray(val.critical_type(init_prices, mu), dtype=float))
    for t in range(n_init):
        k = int(init_idx[t])
        p = float(init_prices[t])
        a = int(theta[t] >= cut[k])
        tracker.record_index(k, a)
        price[t], q_out[t], x_out[t], a_out[t] = p, mu, S[k], a
        adv_id[t] = init_id
        rev_exp[t] = p * d_true[k]

    for t in range(n_init, T):
        ucb = tracker.ucb()
        ch: Choice = program.choose(ucb)
        row = ch.conditionals[signal_quality[t]]
        j = 0
        if len(row) > 1:
            cum = np.cumsum(row)
            j = min(int(np.searchsorted(cum, U[t, 1] * cum[-1], side="right")), len(row) - 1)
        k = int(ch.s_index[j])
        a = int(theta[t] >= cut[k])
        if on_round is not None:
            on_round(t + 1, tracker, ucb, ch)
        tracker.record_index(k, a)
        price[t], q_out[t], x_out[t], a_out[t] = ch.price, ch.support[j], S[k], a
        adv_id[t] = id_for(ch.key, ch.advertising)
        rev_exp[t] = ch.price * float(ch.marginal @ d_true[ch.s_index])

    meta = {
        "algorithm": algorithm,
        "epsilon": grid.epsilon,
        "num_prices": int(len(grid.prices)),
        "num_types": int(n_init),
        "log": "natural",
        "qualities": [float(v) for v in signal_inst.qualities],
        "prior": [float(v) for v in signal_inst.prior],
    }
    meta.update(metadata or {})
    return RunResult(algorithm, int(seed), int(T), grid.epsilon, price, q_out, x_out, a_out,
                     quality, adv_id, rev_exp, tracker, advertisings, meta)


def default_epsilon(m: int, T: int, constant: float = 1.0) -> float:
    return theorem1_epsilon(m, T, constant)


def run_algorithm1(inst: Instance, dist: TypeDistribution, T: int, epsilon: float | None = None,
                   seed: int = 0, on_round: Callable | None = None,
                   epsilon_constant: float = 1.0) -> RunResult:
    """Joint pricing and advertising with optimistic demand estimates.

    ``epsilon`` defaults to ``constant * (m ln T / T)^(1/3)``.  After the
    initialization rounds, ``on_round(t, tracker, ucb, choice)`` is called
    each round before that round's observation is recorded.
    """
    eps = default_epsilon(inst.m, T, epsilon_constant) if epsilon is None else float(epsilon)
    grid = build_grids(inst, eps)
    return _simulate("alg1", inst, grid, make_program(grid), dist, T, seed,
                     np.asarray(inst.prior), np.arange(inst.m), on_round,
                     {"epsilon_constant": epsilon_constant})


def algorithm2_epsilon(T: int) -> float:
    return min(1.0, (math.log(T) / T) ** 0.25)


def run_algorithm2(source, dist: TypeDistribution, T: int, epsilon: float | None = None,
                   eps_hat: float | None = None, seed: int = 0,
                   on_round: Callable | None = None) -> RunResult:
    """Pool qualities into ``eps_hat`` buckets, then learn on the pooled instance.

    Products are drawn from the original prior and signaled through their
    bucket, so the buyer's posterior mean is the pooled one.
    """
    if not isinstance(source, (Instance, ContinuousPrior)):
        raise InstanceError("run_algorithm2 expects an Instance or a ContinuousPrior")
    eps = algorithm2_epsilon(T) if epsilon is None else float(epsilon)
    eps_hat = algorithm2_epsilon(T) if eps_hat is None else float(eps_hat)
    pooled = pool(source, eps_hat)
    grid = build_grids(pooled.instance, eps)
    return _simulate("alg2", pooled.instance, grid, make_program(grid), dist, T, seed,
                     pooled.prior, pooled.index_of, on_round,
                     {"eps_hat": pooled.eps_hat, "num_pooled": pooled.instance.m})


def run_fixed_advertising_baseline(inst: Instance, dist: TypeDistribution, T: int,
                                   epsilon: float | None = None, mode: str = "no_info",
                                   seed: int = 0, on_round: Callable | None = None,
                                   epsilon_constant: float = 1.0) -> RunResult:
    """Learn prices only, with advertising fixed to ``no_info`` or ``full_info``."""
    eps = default_epsilon(inst.m, T, epsilon_constant) if epsilon is None else float(epsilon)
    if mode == "no_info":
        # a buyer who learns nothing faces a one-quality market at the prior mean
        pseudo = Instance([prior_mean(inst)], [1.0], inst.valuation, inst.U)
        grid = build_grids(pseudo, eps)
        return _simulate("baseline-no-info", pseudo, grid, PairProgram(grid), dist, T, seed,
                         np.asarray(inst.prior), np.zeros(inst.m, dtype=int), on_round)
    if mode == "full_info":
        grid = build_grids(inst, eps)
        return _simulate("baseline-full-info", inst, grid, FixedProgram(grid), dist, T, seed,
                         np.asarray(inst.prior), np.arange(inst.m), on_round)
    raise ValueError(f"unknown advertising mode {mode!r}")


__all__ = [
    "RoundRecord", "RunResult", "regret_curve", "run_algorithm1", "run_algorithm2",
    "run_fixed_advertising_baseline", "default_epsilon", "algorithm2_epsilon",
]
