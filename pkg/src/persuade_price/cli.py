"""``persuade-price`` command line: run sweeps, compute OPT, validate instances.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .experiment import (
    ALGORITHMS,
    ConfigError,
    config_from_dict,
    read_json,
    run_experiment,
    validate_instance_doc,
)
from .market import InstanceError, instance_from_dict

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("persuade_price")


def _setup_logging() -> None:
    level = os.environ.get("PERSUADE_PRICE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="persuade-price", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every (horizon, seed) cell of an experiment")
    run.add_argument("--config", required=True, type=Path, help="experiment config JSON")
    run.add_argument("--out", type=Path, help="output directory (default: config 'output' or ./out)")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    run.add_argument("--algorithm", choices=ALGORITHMS, help="override the config's algorithm")
    run.add_argument("--seed-offset", type=int, default=0, help="add K to every seed")

    opt = sub.add_parser("opt", help="clairvoyant price and advertising for an instance")
    opt.add_argument("--config", required=True, type=Path, help="instance or experiment config JSON")
    opt.add_argument("--eps-opt", type=float, default=None, help="grid size (default 1e-3)")
    opt.add_argument("--out", type=Path, help="also write the report here")

    val = sub.add_parser("validate", help="check an instance description")
    val.add_argument("instance", nargs="?", type=Path, help="instance JSON file")
    val.add_argument("--config", type=Path, help="same as the positional argument")
    return parser


def cmd_run(args) -> int:
    doc = read_json(args.config)
    if args.algorithm:
        doc = {**doc, "algorithm": args.algorithm}
    cfg = config_from_dict(doc, args.config.parent)
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    out = args.out or Path(cfg.output or "out")
    summary = run_experiment(cfg, out, args.workers, args.seed_offset)
    for row in summary["by_horizon"]:
        print(f"T={row['T']} mean_regret={row['mean_regret_expected']:.6g} "
              f"stderr={row['stderr_regret_expected']:.3g}")
    if summary["slope"] is not None:
        print(f"slope={summary['slope']:.4f}")
    print(f"wrote {out / 'summary.json'}")
    return EXIT_OK


def cmd_opt(args) -> int:
    from .optimizer import clairvoyant_opt

    doc = read_json(args.config)
    eps_opt = args.eps_opt
    if isinstance(doc, dict) and "instance" in doc:
        inst_doc = doc["instance"]
        if isinstance(inst_doc, str):
            inst_doc = read_json(args.config.parent / inst_doc)
        if eps_opt is None:
            eps_opt = doc.get("eps_opt")
    else:
        inst_doc = doc
    eps_opt = 1e-3 if eps_opt is None else eps_opt
    if not 0 < eps_opt <= 1:
        raise ConfigError("eps_opt must lie in (0, 1]")
    problems = validate_instance_doc(inst_doc)
    if problems:
        raise ConfigError("; ".join(f"{path}: {code}: {msg}" for code, path, msg in problems))
    inst, dist = instance_from_dict(inst_doc)
    report = clairvoyant_opt(inst, dist, eps_opt).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.instance or args.config
    if path is None:
        raise ConfigError("an instance file is required")
    problems = validate_instance_doc(read_json(path))
    if not problems:
        print("ok")
        return EXIT_OK
    for code, path, msg in problems:
        print(f"{code}\t{path}\t{msg}")
    return EXIT_CONFIG


COMMANDS = {"run": cmd_run, "opt": cmd_opt, "validate": cmd_validate}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InstanceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
