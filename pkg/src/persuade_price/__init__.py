"""Dynamic pricing with Bayesian-persuasion advertising and demand learning."""

from __future__ import annotations

from .discretization import (
    ContinuousPrior,
    Grid,
    build_grids,
    epsilon_equally_spaced,
    pool,
    pool_instance,
    support_grid,
    theorem1_epsilon,
)
from .engine import (
    RunResult,
    regret_curve,
    run_algorithm1,
    run_algorithm2,
    run_fixed_advertising_baseline,
)
from .learning import DemandTracker
from .market import (
    Additive,
    DiscreteAtoms,
    Instance,
    InstanceError,
    LinearGeneric,
    Multiplicative,
    PiecewiseLinearCDF,
    Uniform,
    critical_type,
    critical_type_inverse,
    demand,
    instance_from_dict,
    prior_mean,
    valuation_at,
)
from .optimizer import (
    brute_force_small,
    clairvoyant_opt,
    solve_signaling_lp,
    solve_ucb_program,
)
from .signaling import (
    Advertising,
    binary_support_decompose,
    enforce_no_bad_posterior,
    full_info,
    no_info,
    revenue,
    rounding,
    validate,
)

__version__ = "0.1.0"
