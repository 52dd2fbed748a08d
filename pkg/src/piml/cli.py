"""Command line: ``piml validate|run|sweep|check``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

from . import config as cfgmod
from .checks import run_checks
from .pinn import format_float
from .runner import RunAborted, run

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _load(args) -> dict:
    cfg = cfgmod.load(args.config)
    if getattr(args, "seed_override", None) is not None:
        cfg = cfgmod.validate({**_raw(args.config), "seed": args.seed_override})
    return cfg


def _raw(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    try:
        summary = run(cfg, out, args.threads)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps({k: summary[k] for k in ("status", "mode") if k in summary}), f"-> {out}")
    return EXIT_OK


def _cell_label(params: dict) -> str:
    return "_".join(f"{k.split('.')[-1]}={json.dumps(v, separators=(',', ':'))}" for k, v in params.items())


def cmd_sweep(args) -> int:
    raw = _raw(args.config)
    if args.seed_override is not None:
        raw["seed"] = args.seed_override
    if args.grid:
        raw["sweep"] = {"grid": json.loads(args.grid)}
    if "sweep" not in raw:
        raise cfgmod.ConfigError("sweep.grid", "missing required field")
    base = cfgmod.validate(raw)
    grid = base["sweep"]["grid"]
    keys = list(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, values in enumerate(itertools.product(*(grid[key] for key in keys))):
        params = dict(zip(keys, values))
        cell = dict(raw)
        cell.pop("sweep", None)
        for key, v in params.items():
            cell = cfgmod.set_path(cell, key, v)
        row = {"cell": k, **{key: json.dumps(v) for key, v in params.items()}}
        try:
            cfg = cfgmod.validate(cell)
            summary = run(cfg, out / f"cell{k:03d}", args.threads)
            final = summary.get("final", {})
            l2 = summary.get("l2_rel_error", {})
            row.update(status="ok", loss_total=final.get("loss_total"),
                       l2_rel_error=next(iter(l2.values())) if isinstance(l2, dict) and l2 else None, error="")
        except (cfgmod.ConfigError, RunAborted, ValueError, RuntimeError) as exc:
            row.update(status="failed", loss_total=None, l2_rel_error=None, error=str(exc))
        rows.append(row)
        print(f"cell {k}: {_cell_label(params)} {row['status']}")
    cols = ["cell", *keys, "status", "loss_total", "l2_rel_error", "error"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (format_float(r[c]) if isinstance(r[c], float) else r[c])
                        for c in cols])
    return EXIT_OK


def cmd_check(args) -> int:
    ok = True
    for name, passed, value, tol in run_checks(args.seed_override or 0):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3e} (tol {tol:.0e})")
    return EXIT_OK if ok else EXIT_ABORT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="piml", description="Physics-informed training and graph calculus experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, needs_config=True, needs_out=False):
        if needs_config:
            sp.add_argument("--config", required=True, help="experiment JSON file")
        if needs_out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
        sp.add_argument("--threads", type=int, default=1, help="max concurrent workers")

    common(sub.add_parser("validate", help="parse and print the defaulted config"))
    common(sub.add_parser("run", help="run one experiment"), needs_out=True)
    sp = sub.add_parser("sweep", help="run a parameter grid")
    common(sp, needs_out=True)
    sp.add_argument("--grid", default=None, help='JSON object, e.g. {"weights.w_g": [1, 0.1, 0.01]}')
    common(sub.add_parser("check", help="run the fast invariant suite"), needs_config=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep, "check": cmd_check}[args.verb]
    try:
        return handler(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
