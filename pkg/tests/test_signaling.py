from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import random_instance, random_step_demand
from persuade_price import (
    Additive,
    Advertising,
    Instance,
    Uniform,
    binary_support_decompose,
    build_grids,
    enforce_no_bad_posterior,
    full_info,
    no_info,
    revenue,
    rounding,
    validate,
)
from persuade_price.signaling import (
    FeasibilityError,
    PreconditionError,
    is_binary_supported,
    rounding_price,
    sample_posterior_mean,
)


def mixed(inst: Instance) -> Advertising:
    """Two interior posteriors for the binary symmetric instance."""
    return Advertising([0.25, 0.75], [[0.75, 0.25], [0.25, 0.75]])


def test_validate_examples(binary_instance):
    assert validate(no_info(binary_instance), binary_instance).ok
    assert validate(mixed(binary_instance), binary_instance).ok
    bad = Advertising([0.25, 0.75], [[0.65, 0.25], [0.25, 0.75]])
    rep = validate(bad, binary_instance)
    assert not rep.ok and rep.kind == "row-mass" and rep.index == 0
    assert rep.residual == pytest.approx(0.1)


def test_validate_reports_bayes_consistency(binary_instance):
    rep = validate(Advertising([0.2, 0.8], [[0.75, 0.25], [0.25, 0.75]]), binary_instance)
    assert rep.kind == "bayes-consistency"
    assert rep.residual == pytest.approx(0.025)


def test_no_info_examples(binary_instance):
    adv = no_info(binary_instance)
    assert_allclose(adv.support, [0.5])
    assert_allclose(adv.conditionals, [[1.0], [1.0]])
    assert_allclose(no_info(Instance([0.3], [1.0])).support, [0.3])
    assert_allclose(no_info(Instance([0, 1], [0.9, 0.1])).support, [0.1])


def test_full_info_examples(binary_instance):
    adv = full_info(binary_instance)
    assert_allclose(adv.support, [0, 1])
    assert_allclose(adv.marginal(binary_instance.prior), [0.5, 0.5])
    assert validate(adv, binary_instance).ok
    assert adv.marginal(binary_instance.prior) @ adv.support == pytest.approx(0.5)


def test_sample_posterior_mean(binary_instance):
    rng = np.random.default_rng(0)
    fi, ni = full_info(binary_instance), no_info(binary_instance)
    assert all(sample_posterior_mean(fi, 1, rng)[1] == 1.0 for _ in range(50))
    assert all(sample_posterior_mean(ni, 0, rng)[1] == 0.5 for _ in range(50))
    draws = [sample_posterior_mean(mixed(binary_instance), 0, rng)[0] for _ in range(100_000)]
    assert abs(np.mean(np.array(draws) == 0) - 0.75) <= 0.01


def test_revenue_examples(binary_instance):
    assert revenue(0.0, full_info(binary_instance), binary_instance, Uniform()) == 0.0
    assert revenue(0.75, no_info(binary_instance), binary_instance, Uniform()) == pytest.approx(0.5625)
    assert revenue(0.75, full_info(binary_instance), binary_instance, Uniform()) == pytest.approx(0.46875)


def test_decompose_three_qualities():
    inst = Instance([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3])
    out = binary_support_decompose(no_info(inst), inst)
    assert validate(out, inst).ok
    assert is_binary_supported(out)
    assert_allclose(out.support, [0.5, 0.5])
    assert out.marginal(inst.prior).sum() == pytest.approx(1.0)
    pairs = sorted(tuple(np.flatnonzero(out.conditionals[:, k] > 0)) for k in range(out.size))
    assert pairs == [(0, 2), (1,)]


def test_decompose_fixed_point(binary_instance):
    adv = mixed(binary_instance)
    out = binary_support_decompose(adv, binary_instance)
    assert_allclose(out.support, adv.support)
    assert_allclose(out.conditionals, adv.conditionals)


def test_decompose_rejects_inconsistent(binary_instance):
    with pytest.raises(FeasibilityError):
        binary_support_decompose(Advertising([0.2], [[1.0], [1.0]]), binary_instance)


def _grouped(adv: Advertising, prior) -> dict:
    out: dict = {}
    for q, mass in zip(adv.support, adv.marginal(prior)):
        key = round(float(q), 12)
        out[key] = out.get(key, 0.0) + mass
    return out


def random_advertising(rng, inst: Instance, k: int | None = None) -> Advertising:
    """Random feasible advertising: random stochastic matrix, posteriors set by Bayes rule."""
    k = int(rng.integers(1, 6)) if k is None else k
    cond = rng.dirichlet(np.ones(k), size=inst.m)
    joint = inst.prior[:, None] * cond
    q = (joint * inst.qualities[:, None]).sum(axis=0) / joint.sum(axis=0)
    return Advertising(q, cond)


@given(st.integers(0, 10_000))
def test_decompose_preserves_marginal_and_revenue(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    adv = random_advertising(rng, inst)
    out = binary_support_decompose(adv, inst)
    assert validate(out, inst).ok and is_binary_supported(out)
    before, after = _grouped(adv, inst.prior), _grouped(out, inst.prior)
    assert before.keys() == after.keys()
    assert_allclose([after[k] for k in before], list(before.values()), atol=1e-12)
    dist = random_step_demand(rng)
    p = float(rng.uniform(0, 2))
    assert revenue(p, out, inst, dist) == pytest.approx(revenue(p, adv, inst, dist), abs=1e-9)


def test_enforce_no_bad_posterior_example(binary_instance):
    adv = Advertising([0.0, 0.5, 1.0], [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
    out = enforce_no_bad_posterior(1.9, adv, binary_instance)
    assert validate(out, binary_instance).ok
    assert 0.5 not in out.support
    # q = 0.5 sold to nobody; a quarter of the mass lands on q = 1 where types >= 0.9 buy
    assert binary_instance.valuation.critical_type(1.9, 0.5) == 1.0
    gain = revenue(1.9, out, binary_instance, Uniform()) - revenue(1.9, adv, binary_instance, Uniform())
    assert gain == pytest.approx(1.9 * 0.25 * 0.1)
    assert out.merged().support.tolist() == [0.0, 1.0]


def test_enforce_no_bad_posterior_noop(binary_instance):
    adv = mixed(binary_instance)
    out = enforce_no_bad_posterior(1.2, adv, binary_instance)
    assert_allclose(out.support, adv.support)
    assert_allclose(out.conditionals, adv.conditionals)


@given(st.integers(0, 10_000))
def test_enforce_no_bad_posterior_never_loses_revenue(seed):
    # moving mass back to the extreme qualities can only help: the moved
    # posteriors sold to nobody, while a quality point may still sell
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    adv = binary_support_decompose(random_advertising(rng, inst), inst)
    p = float(rng.uniform(0.5, 2.0))
    out = enforce_no_bad_posterior(p, adv, inst)
    assert validate(out, inst).ok
    bad = [q for q in out.support if not np.any(np.isclose(q, inst.qualities, atol=1e-12))]
    assert all(inst.valuation.value(1.0, q) >= p for q in bad)
    dist = random_step_demand(rng)
    assert revenue(p, out, inst, dist) >= revenue(p, adv, inst, dist) - 1e-12


def test_rounding_price_example(binary_instance):
    grid = build_grids(binary_instance, 0.1)
    assert rounding_price(0.55, grid) == pytest.approx(0.4)


def test_rounding_trace(binary_instance):
    grid = build_grids(binary_instance, 0.1)
    lam = 0.5
    r = 0.5  # marginal mass on q = 0.37, rest on the qualities
    a0, a1 = r * 0.63 / lam, r * 0.37 / lam
    adv = Advertising([0.0, 0.37, 1.0], [[1 - a0, a0, 0.0], [0.0, a1, 1 - a1]])
    assert validate(adv, binary_instance).ok
    p_new, out = rounding(0.55, adv, grid)
    assert p_new == pytest.approx(0.4)
    assert validate(out, binary_instance).ok
    assert_allclose(out.support, [0.0, 0.3, 0.4, 1.0])
    # the 0.37 mass splits 3:7 between q_L = 0.3 and q_R = 0.4
    assert_allclose(out.marginal(binary_instance.prior), [0.185, 0.15, 0.35, 0.315])
    assert np.all(grid.in_support(p_new, out.support))


def test_rounding_copies_on_grid_points(binary_instance):
    grid = build_grids(binary_instance, 0.1)
    adv = mixed(binary_instance)
    adv = Advertising([0.2, 0.8], [[0.8, 0.2], [0.2, 0.8]])
    p_new, out = rounding(0.55, adv, grid)
    assert_allclose(out.support, adv.support)
    assert_allclose(out.conditionals, adv.conditionals)


def test_rounding_preconditions(binary_instance):
    grid = build_grids(binary_instance, 0.1)
    with pytest.raises(PreconditionError):
        rounding(0.15, no_info(binary_instance), grid)
    inst = Instance([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3])
    with pytest.raises(PreconditionError):
        rounding(0.55, no_info(inst), build_grids(inst, 0.1))


def test_merged_sums_coincident_points():
    adv = Advertising([0.5, 0.2, 0.5 + 1e-13], [[0.2, 0.5, 0.3], [0.1, 0.2, 0.7]])
    out = adv.merged()
    assert_allclose(out.support, [0.2, 0.5])
    assert_allclose(out.conditionals, [[0.5, 0.5], [0.2, 0.8]])


def test_json_round_trip(binary_instance):
    adv = mixed(binary_instance)
    back = Advertising.from_dict(adv.to_dict())
    assert_allclose(back.support, adv.support)
    assert_allclose(back.conditionals, adv.conditionals)
