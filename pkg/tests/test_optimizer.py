from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import random_instance, random_step_demand
from persuade_price import (
    DemandTracker,
    DiscreteAtoms,
    Instance,
    InstanceError,
    Uniform,
    brute_force_small,
    build_grids,
    clairvoyant_opt,
    full_info,
    no_info,
    revenue,
    solve_signaling_lp,
    solve_ucb_program,
    support_grid,
    validate,
)
from persuade_price.optimizer import (
    PairProgram,
    SimplexProgram,
    grid_enumeration,
    vertex_enumeration,
)


def value_of(adv, inst, Q, g):
    """sum_k rho(q_k) g(q_k), looking g up by posterior mean."""
    lookup = {round(float(q), 12): float(v) for q, v in zip(Q, g)}
    return float(sum(m * lookup[round(float(q), 12)] for q, m in zip(adv.support, adv.marginal(inst.prior))))


def test_constant_objective(binary_instance):
    Q = np.array([0.0, 0.3, 0.5, 1.0])
    adv, val = solve_signaling_lp(binary_instance, 1.0, Q, np.full(4, 0.7))
    assert val == pytest.approx(0.7)
    assert validate(adv, binary_instance).ok


def test_concave_peak_pools(binary_instance):
    Q = np.array([0.0, 0.5, 1.0])
    for method in ("hull", "simplex"):
        adv, val = solve_signaling_lp(binary_instance, 1.0, Q, np.array([0.0, 1.0, 0.0]), method=method)
        assert val == pytest.approx(1.0)
        assert_allclose(adv.support, [0.5])
        assert_allclose(adv.joint(binary_instance.prior), [[0.5], [0.5]])


def test_convex_objective_reveals():
    inst = Instance([0.0, 0.4, 1.0], [0.3, 0.3, 0.4])
    Q = np.linspace(0, 1, 11)
    g = Q ** 2
    adv, val = solve_signaling_lp(inst, 1.0, Q, g)
    assert val == pytest.approx(float(inst.prior @ inst.qualities ** 2))


@given(st.integers(0, 10_000))
def test_hull_and_simplex_agree(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, m=2)
    Q = np.unique(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 8)]))
    g = rng.uniform(0, 1, len(Q))
    a1, v1 = solve_signaling_lp(inst, 1.0, Q, g, method="hull")
    a2, v2 = solve_signaling_lp(inst, 1.0, Q, g, method="simplex")
    assert v1 == pytest.approx(v2, abs=1e-10)
    for adv in (a1, a2):
        assert validate(adv, inst).ok
        assert value_of(adv, inst, Q, g) == pytest.approx(v1, abs=1e-10)


@given(st.integers(0, 10_000))
def test_lp_closure_and_optimality(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    grid = build_grids(inst, float(rng.uniform(0.1, 0.4)))
    p = float(rng.choice(grid.prices))
    Q = support_grid(grid, p)
    dist = random_step_demand(rng)
    g = np.asarray(dist.demand(inst.valuation.critical_type(p, Q)))
    adv, val = solve_signaling_lp(inst, p, Q, g)
    rep = validate(adv, inst)
    assert rep.ok and rep.residual <= 1e-9
    assert p * val == pytest.approx(revenue(p, adv, inst, dist), abs=1e-9)
    # the prior mean is not generally in Q_p, so compare with full revelation only
    assert p * val >= revenue(p, full_info(inst), inst, dist) - 1e-9
    # scaling the objective leaves the solution unchanged
    adv2, val2 = solve_signaling_lp(inst, p, Q, 3.0 * g)
    assert val2 == pytest.approx(3.0 * val)
    assert_allclose(adv2.support, adv.support)
    assert_allclose(adv2.conditionals, adv.conditionals)


def test_lp_beats_no_info_when_available():
    inst = Instance([0.0, 0.5, 1.0], [0.2, 0.5, 0.3])
    Q = np.array([0.0, 0.2, 0.5, 0.55, 0.8, 1.0])
    g = np.array([0.1, 0.6, 0.3, 0.9, 0.2, 0.4])
    _, val = solve_signaling_lp(inst, 1.0, Q, g)
    assert val >= 0.9 - 1e-12  # no_info sits on q = 0.55


def test_lp_input_errors(binary_instance):
    with pytest.raises(InstanceError):
        solve_signaling_lp(binary_instance, 1.0, [0.0, 1.0], [0.5, np.inf])
    with pytest.raises(InstanceError):
        solve_signaling_lp(binary_instance, 1.0, [0.2, 0.5], [0.5, 0.5], method="simplex")


def test_ucb_program_all_optimistic(binary_instance):
    grid = build_grids(binary_instance, 0.25)
    tracker = DemandTracker(grid.types, 1000)
    p, adv, est = solve_ucb_program(binary_instance, grid, tracker)
    assert p == grid.prices[-1]
    assert est == pytest.approx(p)
    assert validate(adv, binary_instance).ok


def test_ucb_program_single_quality():
    inst = Instance([1.0], [1.0])
    grid = build_grids(inst, 0.25)
    tracker = DemandTracker(grid.types, 1000)
    rng = np.random.default_rng(0)
    for _ in range(200):
        tracker.record_index(int(rng.integers(len(grid.types))), int(rng.random() < 0.5))
    p, adv, est = solve_ucb_program(inst, grid, tracker)
    assert_allclose(adv.support, [1.0])
    best = max(q * tracker.ucb()[grid.snap(inst.valuation.critical_type(q, 1.0))[0]] for q in grid.prices)
    assert est == pytest.approx(best)


@given(st.integers(0, 10_000))
def test_programs_match_per_price_lp(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    inst = random_instance(rng, m=m) if m > 1 else Instance([rng.uniform()], [1.0])
    grid = build_grids(inst, float(rng.uniform(0.15, 0.5)))
    table = np.minimum.accumulate(np.sort(rng.uniform(0, 1, len(grid.types)))[::-1])
    prog = PairProgram(grid) if inst.m <= 2 else SimplexProgram(grid)
    ch = prog.choose(table)
    revs = []
    for p in grid.prices:
        sup = grid.support(p)
        revs.append(p * solve_signaling_lp(inst, p, sup.q, table[sup.s_index])[1])
    assert ch.estimate == pytest.approx(max(revs), abs=1e-10)
    assert ch.price == grid.prices[int(np.flatnonzero(np.array(revs) >= max(revs) - 1e-9)[0])]
    adv = ch.advertising()
    assert validate(adv, inst).ok
    # the estimate is revenue with the optimistic table in place of true demand
    assert ch.estimate == pytest.approx(ch.price * float(ch.marginal @ table[ch.s_index]), abs=1e-10)
    assert_allclose(ch.marginal, adv.marginal(inst.prior), atol=1e-12)


def test_clairvoyant_single_quality_uniform():
    res = clairvoyant_opt(Instance([1.0], [1.0]), Uniform(), 1e-3)
    assert res.price == pytest.approx(1.0)
    assert res.revenue == pytest.approx(1.0)


def test_clairvoyant_point_mass_buyer():
    res = clairvoyant_opt(Instance([1.0], [1.0]), DiscreteAtoms((1.0,), (1.0,)), 1e-3)
    assert res.price == pytest.approx(2.0)
    assert res.revenue == pytest.approx(2.0)


def test_clairvoyant_binary_uniform(binary_instance):
    res = clairvoyant_opt(binary_instance, Uniform(), 1e-2)
    assert res.revenue == pytest.approx(0.5625)
    assert validate(res.advertising, binary_instance).ok
    assert res.slack == pytest.approx(0.02)


def test_clairvoyant_nested_grids_monotone():
    rng = np.random.default_rng(8)
    for _ in range(5):
        inst = random_instance(rng, m=3)
        dist = random_step_demand(rng)
        coarse = clairvoyant_opt(inst, dist, 0.125).revenue
        fine = clairvoyant_opt(inst, dist, 0.0625).revenue
        assert fine >= coarse - 1e-12


def test_clairvoyant_no_info_mode():
    inst = Instance([0.0, 1.0], [0.7, 0.3])
    dist = DiscreteAtoms((0.0, 0.9), (0.92, 0.08))
    full = clairvoyant_opt(inst, dist, 0.01)
    plain = clairvoyant_opt(inst, dist, 0.01, mode="no_info")
    assert plain.revenue == pytest.approx(0.3)
    assert full.revenue == pytest.approx(0.348)
    assert_allclose(plain.advertising.support, [0.3])


def test_brute_force_single_quality():
    inst = Instance([1.0], [1.0])
    prices = np.linspace(0.2, 2.0, 10)
    bf = brute_force_small(inst, Uniform(), prices, [1.0], k=10)
    scan = max(p * float(Uniform().demand(inst.valuation.critical_type(p, 1.0))) for p in prices)
    assert bf.vertex == pytest.approx(scan)
    assert bf.grid == pytest.approx(scan)


def test_enumerations_on_concave_peak(binary_instance):
    Q, g = np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0, 0.0])
    assert vertex_enumeration(binary_instance, Q, g) == pytest.approx(1.0)
    assert grid_enumeration(binary_instance, Q, g, k=50) <= 1.0 + 1 / 50


def test_brute_force_size_guard():
    inst = Instance([0.0, 0.3, 0.6, 1.0], [0.25] * 4)
    with pytest.raises(InstanceError):
        brute_force_small(inst, Uniform(), [1.0], [0.0, 0.3, 0.6, 1.0], k=10)
    with pytest.raises(InstanceError):
        grid_enumeration(Instance([0, 1], [0.5, 0.5]), [0.0, 1.0], [0.0, 0.0], k=60)


def test_grid_enumeration_convex_order():
    inst = Instance([0.2, 0.8], [0.5, 0.5])
    Q = np.array([0.2, 0.5, 0.8])
    assert grid_enumeration(inst, Q, np.array([0.0, 1.0, 0.0]), k=10) == pytest.approx(1.0)
    # spreading beyond the prior is infeasible even when the mean matches
    three = Instance([0.0, 0.5, 1.0], [0.1, 0.8, 0.1])
    Q = np.array([0.0, 0.5, 1.0])
    assert grid_enumeration(three, Q, np.array([1.0, 0.0, 1.0]), k=50) == pytest.approx(0.2)
