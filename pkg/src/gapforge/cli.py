"""Command line entry point.

    gapforge train    --config exp.ini [--seed S] [--workers N] [--swap-every 1epoch] [--sequential]
    gapforge eval     RUN_DIR [RUN_DIR ...] --out REPORT_DIR
    gapforge coverage RUN_DIR [--worker K] [--truth] [--out DIR]
    gapforge sweep    --config exp.ini [--frequencies 0.1,0.5,1.0] [--seeds 0,1,2]
    gapforge report   RUN_DIR [RUN_DIR ...]

Exit codes: 0 ok, 1 configuration error, 2 runtime or numeric error, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, runner
from .config import ConfigError, load_config, parse_assignments
from .datasets import DatasetParseError
from .nn import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("gapforge")


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get("GAPFORGE_OUT") or "runs")


def _experiment(args):
    overrides = parse_assignments(args.set or [])
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        overrides["gap.n_workers"] = str(args.workers)
    if getattr(args, "swap_every", None) is not None:
        overrides["gap.swap_every"] = args.swap_every
    return load_config(args.config, overrides)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def cmd_train(args) -> int:
    cfg = _experiment(args)
    run_dir = runner.train(cfg, _out_root(args), parallel=not args.sequential)
    print(run_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out) if args.out else _out_root(args) / "eval"
    summary = runner.evaluate([Path(p) for p in args.runs], out, args.samples, args.eval_seed)
    for name, g in summary["groups"].items():
        print(f"{name:24s} {g['kind']:6s} avg [{g['avg_min']:.3f}, {g['avg_max']:.3f}]"
              f"  worst [{g['worst_min']:.3f}, {g['worst_max']:.3f}]")
    if summary["verdict"]:
        print(f"verdict: avg={summary['verdict']['avg']} worst={summary['verdict']['worst']}")
    print(f"best: {summary['best']}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    doc = runner.coverage(Path(args.run), Path(args.out) if args.out else None,
                          None if args.worker is None else [args.worker], args.truth, args.samples)
    for who, r in doc["coverage"].items():
        print(f"{who:10s} covered {r['covered_modes']}/{r['total_modes']}  "
              f"hq {r['high_quality_fraction']:.3f}  kl {r['kl_score']:.3f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    freqs = _floats(args.frequencies) if args.frequencies is not None else None
    seeds = [int(x) for x in _floats(args.seeds)] if args.seeds is not None else None
    sweep_dir, rows = runner.sweep(cfg, _out_root(args), freqs, seeds, parallel=not args.sequential)
    for r in rows:
        print(f"f={r['frequency']:<5g} runs={r['runs']} failed={r['failed']} "
              f"val_cost_std={r['val_cost_std']:.4f} spread={r['curve_spread']:.4f}")
    print(sweep_dir)
    return EXIT_RUNTIME if any(r["failed"] for r in rows) else EXIT_OK


def cmd_report(args) -> int:
    status = EXIT_OK
    for p in args.runs:
        s = runner.report(Path(p))
        print(json.dumps({k: s[k] for k in ("run", "n_workers", "swaps", "manifest_ok", "val_cost_std",
                                            "curve_spread")}))
        if not s["manifest_ok"]:
            status = EXIT_IO
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapforge", description="Parallel GAN training with discriminator swaps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, experiment=True):
        sp.add_argument("--out", help="output root (default $GAPFORGE_OUT or ./runs)")
        if experiment:
            sp.add_argument("--config", help="INI experiment file")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int)
            sp.add_argument("--swap-every", help="'<K>upd', '<f>epoch' or 'none'")
            sp.add_argument("--sequential", action="store_true", help="reference single-threaded scheduler")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")

    t = sub.add_parser("train", help="train one run")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="GAM-II over the union of several runs")
    e.add_argument("runs", nargs="+")
    e.add_argument("--out", help="report directory (default <out root>/eval)")
    e.add_argument("--samples", type=int, help="samples per generator")
    e.add_argument("--eval-seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("coverage", help="sample generators and score mode coverage")
    c.add_argument("run")
    c.add_argument("--out", help="report directory (default <run>/reports)")
    c.add_argument("--worker", type=int)
    c.add_argument("--truth", action="store_true", help="score the true data distribution instead")
    c.add_argument("--samples", type=int)
    c.set_defaults(func=cmd_coverage)

    s = sub.add_parser("sweep", help="one run per swap frequency and seed")
    common(s)
    s.add_argument("--frequencies", help="comma-separated epoch fractions")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="learning curves and summary per run")
    r.add_argument("runs", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError, DatasetParseError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
