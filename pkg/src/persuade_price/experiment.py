"""Experiment configs, (horizon, seed) sweeps and result files."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretization import epsilon_equally_spaced, is_equally_spaced
from .engine import (
    RunResult,
    run_algorithm1,
    run_algorithm2,
    run_fixed_advertising_baseline,
)
from .market import InstanceError, instance_diagnostics, instance_from_dict

log = logging.getLogger("persuade_price")

ALGORITHMS = ("alg1", "alg2", "baseline-no-info", "baseline-full-info")
EPSILON_POLICIES = ("theorem1-default", "equally-spaced")
CSV_HEADER = "t,p,q,x,a,revenue_realized,revenue_expected,regret_expected\n"


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def fmt(v: float) -> str:
    return f"{v:.12g}"


def round12(v: float) -> float:
    return float(fmt(v))


@dataclass
class ExperimentConfig:
    instance: dict
    algorithm: str = "alg1"
    horizons: list = field(default_factory=lambda: [4000])
    seeds: list = field(default_factory=lambda: [0])
    epsilon: object = "theorem1-default"
    epsilon_constant: float = 1.0
    eps_hat: float | None = None
    eps_opt: float = 1e-3
    opt: float | None = None
    output: str | None = None

    def validate(self) -> None:
        problems = instance_diagnostics(self.instance)
        if problems:
            raise ConfigError("; ".join(f"instance.{path}: {code}: {msg}" for code, path, msg in problems))
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        if not self.horizons or any(not isinstance(T, int) or T < 2 for T in self.horizons):
            raise ConfigError("horizons must be a nonempty list of integers >= 2")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError("horizons must be strictly increasing")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if isinstance(self.epsilon, str):
            if self.epsilon not in EPSILON_POLICIES:
                raise ConfigError(f"epsilon policy must be a number or one of {', '.join(EPSILON_POLICIES)}")
            if self.epsilon == "equally-spaced" and not is_equally_spaced(self.instance["qualities"]):
                raise ConfigError("equally-spaced epsilon needs equally spaced qualities")
        elif not _in_unit(self.epsilon):
            raise ConfigError("epsilon must lie in (0, 1]")
        for name in ("eps_hat", "eps_opt"):
            v = getattr(self, name)
            if v is not None and not _in_unit(v):
                raise ConfigError(f"{name} must lie in (0, 1]")
        if not (isinstance(self.epsilon_constant, (int, float)) and self.epsilon_constant > 0):
            raise ConfigError("epsilon_constant must be positive")
        if self.opt is not None and not isinstance(self.opt, (int, float)):
            raise ConfigError("opt must be a number")

    def epsilon_for(self, m: int, T: int) -> float | None:
        """Explicit epsilon for a horizon, or None to use the algorithm's default."""
        if self.epsilon == "theorem1-default":
            return None
        if self.epsilon == "equally-spaced":
            return epsilon_equally_spaced(m, T)
        return float(self.epsilon)

    def to_dict(self) -> dict:
        return {"instance": self.instance, "algorithm": self.algorithm, "horizons": self.horizons,
                "seeds": self.seeds, "epsilon": self.epsilon, "epsilon_constant": self.epsilon_constant,
                "eps_hat": self.eps_hat, "eps_opt": self.eps_opt, "opt": self.opt}


def _in_unit(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v <= 1


def config_from_dict(doc: dict, base: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "instance" not in doc:
        raise ConfigError("config needs an 'instance' entry")
    inst = doc["instance"]
    if isinstance(inst, str):
        path = (base / inst) if base is not None else Path(inst)
        inst = read_json(path)
    cfg = ExperimentConfig(**{**doc, "instance": inst})
    cfg.validate()
    return cfg


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_dict(read_json(path), path.parent)


# ------------------------------------------------------------------ running


def run_cell(cfg: ExperimentConfig, T: int, seed: int) -> RunResult:
    inst, dist = instance_from_dict(cfg.instance)
    eps = cfg.epsilon_for(inst.m, T)
    if cfg.algorithm == "alg1":
        return run_algorithm1(inst, dist, T, eps, seed, epsilon_constant=cfg.epsilon_constant)
    if cfg.algorithm == "alg2":
        return run_algorithm2(inst, dist, T, eps, cfg.eps_hat, seed)
    mode = "no_info" if cfg.algorithm == "baseline-no-info" else "full_info"
    return run_fixed_advertising_baseline(inst, dist, T, eps, mode, seed,
                                          epsilon_constant=cfg.epsilon_constant)


def opt_value(cfg: ExperimentConfig) -> tuple[float, float, dict | None]:
    """Per-round benchmark, its slack and the clairvoyant report (None if supplied)."""
    if cfg.opt is not None:
        return float(cfg.opt), 0.0, None
    from .optimizer import clairvoyant_opt

    inst, dist = instance_from_dict(cfg.instance)
    res = clairvoyant_opt(inst, dist, cfg.eps_opt)
    return res.revenue, res.slack, res.to_dict()


def csv_text(run: RunResult, opt: float) -> str:
    regret = run.regret_expected(opt)
    realized = run.revenue_realized
    lines = [CSV_HEADER]
    for k in range(run.horizon):
        lines.append(
            f"{k + 1},{fmt(run.price[k])},{fmt(run.q[k])},{fmt(run.x[k])},{int(run.a[k])},"
            f"{fmt(realized[k])},{fmt(run.revenue_expected[k])},{fmt(regret[k])}\n")
    return "".join(lines)


def _cell_job(args):
    cfg_doc, T, seed, opt = args
    cfg = ExperimentConfig(**cfg_doc)
    run = run_cell(cfg, T, seed)
    return {
        "T": T,
        "seed": seed,
        "csv": csv_text(run, opt),
        "final_regret_expected": round12(run.regret_expected(opt)[-1]),
        "final_regret_realized": round12(run.regret_realized(opt)[-1]),
        "cumulative_expected": round12(run.cumulative_expected),
        "cumulative_realized": round12(run.cumulative_realized),
        "metadata": run.metadata,
    }


def fit_slope(horizons, regrets) -> float | None:
    """Least-squares slope of log regret against log T (None if undefined)."""
    h = np.asarray(horizons, dtype=float)
    r = np.asarray(regrets, dtype=float)
    if len(h) < 2 or np.any(r <= 0):
        return None
    return float(np.polyfit(np.log(h), np.log(r), 1)[0])


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int | None = None,
                   seed_offset: int = 0) -> dict:
    """Run every (horizon, seed) cell and write per-run CSVs plus ``summary.json``."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    opt, slack, opt_report = opt_value(cfg)
    seeds = [s + seed_offset for s in cfg.seeds]
    cfg_doc = cfg.to_dict()
    cfg_doc.pop("output", None)
    jobs = [(cfg_doc, T, s, opt) for T in cfg.horizons for s in seeds]
    log.info("running %d cells of %s", len(jobs), cfg.algorithm)
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    results.sort(key=lambda r: (r["T"], r["seed"]))

    cells = []
    for r in results:
        name = f"{cfg.algorithm}_T{r['T']}_seed{r['seed']}.csv"
        with open(out / "runs" / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(r.pop("csv"))
        r["csv"] = f"runs/{name}"
        cells.append(r)

    by_T = []
    for T in cfg.horizons:
        vals = np.array([c["final_regret_expected"] for c in cells if c["T"] == T])
        stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        by_T.append({"T": T, "n": int(len(vals)), "mean_regret_expected": round12(vals.mean()),
                     "stderr_regret_expected": round12(stderr),
                     "regret_per_round": round12(vals.mean() / T),
                     "opt_slack_total": round12(slack * T)})
    slope = fit_slope([b["T"] for b in by_T], [b["mean_regret_expected"] for b in by_T])
    summary = {
        "algorithm": cfg.algorithm,
        "config": cfg_doc,
        "seeds": seeds,
        "opt": {"per_round": opt, "slack_per_round": slack, "clairvoyant": opt_report},
        "cells": cells,
        "by_horizon": by_T,
        "slope": None if slope is None else round12(slope),
        "log_base": "natural",
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def validate_instance_doc(doc) -> list[tuple[str, str, str]]:
    if not isinstance(doc, dict):
        return [("not-object", "", "instance must be a JSON object")]
    if "instance" in doc and isinstance(doc["instance"], dict):
        doc = doc["instance"]
    return instance_diagnostics(doc)


__all__ = ["ExperimentConfig", "ConfigError", "InstanceError", "load_config", "config_from_dict",
           "run_cell", "run_experiment", "fit_slope", "csv_text", "validate_instance_doc"]
