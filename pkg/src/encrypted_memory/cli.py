"""Command line entry point ``encmem``.

Exit codes: 0 success, 2 invalid configuration, 3 invariant violation,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config, shipped_config
from .dynamics_lambda import LambdaConfig, simulate_dem
from .dynamics_n import NConfig, simulate_eit_encrypted
from .harness import run_brute_force, run_heatmap, run_keytest_suite, run_shift_sweep
from .results import write_results
from .solver import invariants_ok

log = logging.getLogger("encmem")

EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERIC = 2, 3, 4

COMMANDS = {
    "run-dem": ("dem", None),
    "run-eit": ("eit", None),
    "keytest": ("plan", "keytest"),
    "heatmap": ("plan", "heatmap"),
    "shift-sweep": ("plan", "shift_sweep"),
    "brute-force": ("plan", "brute_force"),
}


def _resolve(config: str) -> Path:
    p = Path(config)
    if p.exists():
        return p
    try:
        return shipped_config(config)
    except FileNotFoundError:
        raise ConfigError(f"config {config!r} is neither a file nor a shipped config name") from None


def _overrides(kind: str, args) -> dict:
    o = {}
    if args.seed is not None:
        if kind == "plan":
            o["master_seed"] = args.seed
        else:
            o["key"] = {"seed": args.seed}
    if args.threads is not None and kind == "plan":
        o["workers"] = args.threads
    return o


def _merge_key(path: Path, o: dict) -> dict:
    # A seed override must not drop other key fields given in the file.
    if "key" in o:
        data = json.loads(path.read_text(encoding="utf-8"))
        o = {**o, "key": {**data.get("key", {}), **o["key"]}}
    return o


def _violations(result) -> int:
    if hasattr(result, "invariant_violations"):
        return int(result.invariant_violations)
    if hasattr(result, "traces"):
        return sum(not invariants_ok(r.invariants) for r in result.traces.values())
    return 0 if invariants_ok(result.invariants) else 1


def _summary(result) -> dict:
    if hasattr(result, "metrics"):
        return result.metrics.to_dict()
    if hasattr(result, "summary"):
        return result.summary()
    if hasattr(result, "traces"):
        return {n: {"fidelity": r.metrics.fidelity, "normalized_se": r.metrics.normalized_se}
                for n, r in result.traces.items()}
    if hasattr(result, "curves"):
        return {f"sigma={c.sigma:g}": {"window_width": c.window_width} for c in result.curves}
    return {"cells": int(result.completed.size), "failures": len(result.failures)}


def run(command: str, args) -> int:
    kind, experiment = COMMANDS[command]
    try:
        path = _resolve(args.config)
        loaded = load_config(path, _merge_key(path, _overrides(kind, args)))
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if loaded.kind != kind or (experiment and loaded.schema.experiment != experiment):
        want = experiment or kind
        have = getattr(loaded.schema, "experiment", loaded.kind)
        log.error("config %s describes %r, but %s needs %r", path, have, command, want)
        return EXIT_CONFIG
    obj = loaded.runnable
    start = time.perf_counter()
    try:
        if isinstance(obj, LambdaConfig):
            result = simulate_dem(obj)
        elif isinstance(obj, NConfig):
            result = simulate_eit_encrypted(obj)
        elif experiment == "keytest":
            result = run_keytest_suite(obj)
        elif experiment == "heatmap":
            result = run_heatmap(obj)
        elif experiment == "shift_sweep":
            result = run_shift_sweep(obj)
        else:
            result = run_brute_force(obj)
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    wall = time.perf_counter() - start
    seed = loaded.schema.master_seed if kind == "plan" else loaded.schema.key.seed
    write_results(result, args.out, config=loaded.echo(), master_seed=seed, wall_time=wall)
    print(json.dumps({"command": command, "out": str(args.out), "wall_time_s": round(wall, 3),
                      "summary": _summary(result)}, default=str))
    bad = _violations(result)
    if bad:
        log.error("%d run(s) violated trace/population/hermiticity invariants", bad)
        return EXIT_INVARIANT
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="encmem", description="Encrypted photonic memory simulations")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "run-dem": "single disordered-echo (Lambda) run",
        "run-eit": "single encrypted EIT (N) run",
        "keytest": "correct, wrong and gradient key trials",
        "heatmap": "mean fidelity over optical depth and disorder strength",
        "shift-sweep": "normalized SE against decryption-key shift",
        "brute-force": "random-key attack on a fixed encryption key",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config file or shipped config name")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker processes for ensembles")
        p.add_argument("--seed", type=int, default=None, help="master seed (or key seed for single runs)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
