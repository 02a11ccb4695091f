from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from persuade_price import Instance

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_instance(rng: np.random.Generator, m: int | None = None, valuation=None) -> Instance:
    """Qualities 0 = w_1 < ... < w_m = 1 with a Dirichlet prior."""
    m = int(rng.integers(2, 7)) if m is None else m
    inner = np.sort(rng.uniform(0.02, 0.98, size=m - 2))
    while len(inner) > 1 and np.min(np.diff(inner)) < 1e-3:
        inner = np.sort(rng.uniform(0.02, 0.98, size=m - 2))
    w = np.concatenate([[0.0], inner, [1.0]])
    lam = rng.dirichlet(np.ones(m))
    lam = lam / lam.sum()
    kwargs = {} if valuation is None else {"valuation": valuation}
    return Instance(w, lam, **kwargs)


def random_step_demand(rng: np.random.Generator):
    """A random nonincreasing step demand as a finite type distribution."""
    from persuade_price import DiscreteAtoms

    n = int(rng.integers(1, 6))
    pts = np.sort(rng.choice(np.linspace(0.0, 1.0, 41), size=n, replace=False))
    ms = rng.dirichlet(np.ones(n))
    return DiscreteAtoms(tuple(pts), tuple(ms / ms.sum()))


@pytest.fixture
def binary_instance() -> Instance:
    return Instance([0.0, 1.0], [0.5, 0.5])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
