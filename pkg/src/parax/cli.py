"""Command line: run scenarios, audit output directories, drive a swap offer.

Exit codes: 0 audit pass, 2 configuration error, 3 audit failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from .audit import audit_dir
from .config import ScenarioConfig, SwapSpec, validate_config
from .errors import SchemaViolation
from .scenario import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_AUDIT = 3


def _config_error(msgs) -> int:
    for m in msgs:
        print(f"config error: {m}", file=sys.stderr)
    return EXIT_CONFIG


def _load(path: str) -> ScenarioConfig:
    return validate_config(path)


def _base_seed(cfg: ScenarioConfig, cli_seed: Optional[int]) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("PARAX_SEED")
    if env is not None and env.strip():
        return int(env)
    return cfg.sim.seed


def _run_one(cfg: ScenarioConfig, seed: int, out: str) -> tuple[int, bool, str]:
    result = run_scenario(cfg, seed)
    result.write(out)
    return seed, result.passed, result.audit.line()


def _summary(out: str) -> str:
    report = json.loads((Path(out) / "report.json").read_text())
    parts = [f"{cid}: height {c['height']} finalized {c['finalized']} rejected {c['rejected']}"
             for cid, c in sorted(report["chains"].items())]
    for s in report.get("swaps", []):
        parts.append(f"swap {s.get('swap_id', '?')[:16]} {s['phase']}"
                     + (f" fees {s['fee_fraction']:.4%}" if "fee_fraction" in s else ""))
    return "; ".join(parts)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
        seed = _base_seed(cfg, args.seed)
    except FileNotFoundError as exc:
        return _config_error([f"file not found: {exc}"])
    except SchemaViolation as exc:
        return _config_error(exc.violations)
    except ValueError:
        return _config_error(["PARAX_SEED must be an integer"])
    if args.seeds < 1 or args.jobs < 1:
        return _config_error(["--seeds and --jobs must be positive"])
    out = args.out or cfg.output.dir
    seeds = [seed + i for i in range(args.seeds)]
    dirs = [out if len(seeds) == 1 else str(Path(out) / f"seed-{s}") for s in seeds]
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, [cfg] * len(seeds), seeds, dirs))
    else:
        results = [_run_one(cfg, s, d) for s, d in zip(seeds, dirs)]
    ok = True
    for (s, passed, line), d in zip(results, dirs):
        print(f"seed {s}: {_summary(d)}")
        print(f"seed {s}: {line} -> {d}")
        ok &= passed
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_audit(args) -> int:
    if not Path(args.dir).is_dir():
        print(f"error: {args.dir} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    result = audit_dir(args.dir)
    print(result.line())
    return EXIT_OK if result.passed else EXIT_AUDIT


def cmd_swap(args) -> int:
    try:
        cfg = _load(args.config)
        seed = _base_seed(cfg, args.seed)
        offer = SwapSpec.model_validate(json.loads(Path(args.offer).read_text()))
        cfg = ScenarioConfig.model_validate({**cfg.model_dump(), "swaps": [offer.model_dump()]})
    except FileNotFoundError as exc:
        return _config_error([f"file not found: {exc}"])
    except SchemaViolation as exc:
        return _config_error(exc.violations)
    except ValidationError as exc:
        return _config_error([f"{'.'.join(map(str, e['loc'])) or '<offer>'}: {e['msg']}"
                              for e in exc.errors()])
    except ValueError as exc:
        return _config_error([f"unreadable offer or seed: {exc}"])
    out = args.out or cfg.output.dir
    _, passed, line = _run_one(cfg, seed, out)
    report = json.loads((Path(out) / "report.json").read_text())
    for s in report["swaps"]:
        print(json.dumps(s, sort_keys=True))
    print(line)
    return EXIT_OK if passed else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parax", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its outputs")
    r.add_argument("--config", required=True, help="scenario JSON file or preset name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (default: config output.dir)")
    r.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for multi-seed runs")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="replay and check an output directory")
    a.add_argument("dir")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("swap", help="run one swap offer on top of a scenario")
    s.add_argument("--offer", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_swap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
