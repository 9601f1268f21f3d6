"""Run directories: training, GAM-II evaluation, coverage, sweeps and reports.

A run directory holds::

    config.snapshot        resolved INI, enough to rebuild the run
    metrics.jsonl          {"kind": "step" | "eval", ...} rows ordered by update
    swaps.jsonl            {"update": t, "pairs": [[i, j], ...]} per swap
    worker<k>-G.ckpt       final generator of worker k
    worker<k>-D.ckpt       discriminator held by worker k at the end
    reports/               coverage and report outputs
    manifest.json          checksums of everything above, written last
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, nn
from .config import ExperimentConfig, SwapSpec, load_config, parse_config, with_swap
from .datasets import Dataset, UnitTransform, load_r15, make_mog, make_r15_like, normalize_to_unit
from .game import Prior, sample_generator
from .metrics import (GeneratorEntry, JudgeEntry, build_error_table, curve_spread, gam2_scores, gap_verdict,
                      mode_coverage, mode_kl_score, rank_generators)
from .orchestrator import ConfigError, RunResult, run_gap, seen_sets_from_swap_log
from .rng import STREAM_DATA, STREAM_EVAL, named_stream

log = logging.getLogger(__name__)

SNAPSHOT = "config.snapshot"
MANIFEST = "manifest.json"


class PoolError(ValueError):
    """Checkpoints in an evaluation pool cannot be compared."""


# --- data -------------------------------------------------------------------

@dataclass
class PreparedData:
    full: Dataset  # normalized, every point; carries the mode table
    train_pool: Dataset  # normalized points the run trains on (a subset when configured)
    transform: UnitTransform


def build_dataset(cfg: ExperimentConfig) -> PreparedData:
    """Generate or load the configured data, normalize it, and optionally subsample.

    Normalization uses the full set so subsets drawn under different seeds
    share one coordinate frame and one mode table.
    """
    d = cfg["data"]
    rng = np.random.default_rng(d["data_seed"])
    if d["kind"] == "mog":
        raw = make_mog(d["n"], d["component_std"], rng=rng)
    elif d["kind"] == "r15-like":
        raw = make_r15_like(max(1, d["n"] // 15), d["cluster_std"], rng=rng)
    else:
        raw = load_r15(d["path"])
    full, tf = normalize_to_unit(raw)
    pool = full
    if d["subset"]:
        if d["subset"] > len(full):
            raise ValueError(f"data.subset={d['subset']} exceeds the {len(full)} available points")
        idx = named_stream(cfg.seed, STREAM_DATA).generator().choice(len(full), d["subset"], replace=False)
        pool = full.subset(np.sort(idx), f"{full.name}/subset{d['subset']}")
    return PreparedData(full, pool, tf)


def truth_samples(cfg: ExperimentConfig, data: PreparedData, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh draws from the data-generating distribution (a perfect pseudo-generator)."""
    d = cfg["data"]
    if d["kind"] == "r15":
        return data.full.points[rng.integers(len(data.full), size=n)]
    std = d["component_std"] if d["kind"] == "mog" else d["cluster_std"]
    centers = data.transform.inverse(data.full.centers)
    pts = centers[rng.integers(len(centers), size=n)] + std * rng.standard_normal((n, 2))
    return data.transform.apply(pts)


# --- io helpers -------------------------------------------------------------

def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_manifest(run_dir: Path, duration: float, extra: dict | None = None) -> dict:
    files = sorted(p for p in run_dir.iterdir() if p.is_file() and p.name != MANIFEST)
    manifest = {"code_version": __version__, "config_snapshot": SNAPSHOT,
                "files": {p.name: sha256_file(p) for p in files},
                "duration_seconds": round(duration, 3), **(extra or {})}
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def verify_manifest(run_dir: Path) -> list[str]:
    """Names of files whose checksum no longer matches (missing files included)."""
    manifest = json.loads((run_dir / MANIFEST).read_text())
    bad = []
    for name, digest in manifest["files"].items():
        p = run_dir / name
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(name)
    return bad


# --- train ------------------------------------------------------------------

def metrics_rows(result: RunResult) -> list[dict]:
    rows = [dict(kind="step", **m.as_dict()) for m in result.metrics]
    rows += [dict(kind="eval", **e) for e in result.evals]
    # a step row carries the update index it ran at, an eval row the count it
    # followed, so eval(u) belongs right after step(u - 1)
    return sorted(rows, key=lambda r: (r["update"] - 1, 1, r["worker"]) if r["kind"] == "eval"
                  else (r["update"], 0, r["worker"]))


def train(cfg: ExperimentConfig, out_root: Path, parallel: bool = True, run_name: str | None = None) -> Path:
    run_dir = Path(out_root) / (run_name or cfg.name)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)
    stale = run_dir / MANIFEST
    if stale.exists():
        stale.unlink()
    start = time.perf_counter()
    (run_dir / SNAPSHOT).write_text(cfg.to_ini())
    data = build_dataset(cfg)
    result = run_gap(cfg.gap_config(), data.train_pool, parallel=parallel)
    _write_jsonl(run_dir / "metrics.jsonl", metrics_rows(result))
    _write_jsonl(run_dir / "swaps.jsonl", [e.as_dict() for e in result.group.swap_log])
    for w in result.group.workers:
        (run_dir / f"worker{w.id}-G.ckpt").write_bytes(nn.serialize_params(w.generator))
        (run_dir / f"worker{w.id}-D.ckpt").write_bytes(nn.serialize_params(w.discriminator))
    write_manifest(run_dir, time.perf_counter() - start,
                   {"run": cfg.name, "seed": cfg.seed, "n_workers": len(result.group.workers),
                    "swap_interval": result.swap_interval, "updates_per_epoch": result.updates_per_epoch})
    log.info("trained %s in %.1fs", run_dir, time.perf_counter() - start)
    return run_dir


# --- loading ----------------------------------------------------------------

@dataclass
class LoadedRun:
    name: str
    path: Path
    config: ExperimentConfig
    generators: list[nn.ModelParams]
    discriminators: list[nn.ModelParams]
    priors: list[Prior]
    seen: dict[int, set[int]]
    holder: list[int]  # lineage id held by each worker at the end
    swaps: list[dict]

    @property
    def is_gap(self) -> bool:
        return len(self.generators) > 1 and self.config["gap"]["swap_every"] != SwapSpec()

    def metrics(self) -> list[dict]:
        return read_jsonl(self.path / "metrics.jsonl")


def load_run(run_dir: Path, need_discriminators: bool = True) -> LoadedRun:
    run_dir = Path(run_dir)
    if not (run_dir / SNAPSHOT).is_file():
        raise FileNotFoundError(f"{run_dir}: not a run directory (no {SNAPSHOT})")
    cfg = parse_config((run_dir / SNAPSHOT).read_text(), str(run_dir / SNAPSHOT))
    n = cfg["gap"]["n_workers"]
    gens, discs = [], []
    for k in range(n):
        gp = run_dir / f"worker{k}-G.ckpt"
        if not gp.is_file():
            raise FileNotFoundError(f"missing checkpoint {gp}")
        gens.append(nn.deserialize_params(gp.read_bytes()))
        dp = run_dir / f"worker{k}-D.ckpt"
        if need_discriminators:
            if not dp.is_file():
                raise FileNotFoundError(f"missing checkpoint {dp}")
            discs.append(nn.deserialize_params(dp.read_bytes()))
    swaps = read_jsonl(run_dir / "swaps.jsonl") if (run_dir / "swaps.jsonl").is_file() else []
    seen, holder = seen_sets_from_swap_log(n, swaps)
    priors = [Prior(w.prior, w.prior_dim) for w in cfg.gap_config().worker_configs()]
    return LoadedRun(run_dir.name, run_dir, cfg, gens, discs, priors, seen, holder, swaps)


# --- eval -------------------------------------------------------------------

def _check_pool(runs: Sequence[LoadedRun]) -> None:
    for run in runs:
        for k, (g, d) in enumerate(zip(run.generators, run.discriminators)):
            if g.out_dim != d.in_dim or g.in_dim != run.priors[k].dim:
                raise PoolError(f"incompatible checkpoint shapes in {run.name} worker {k}: generator and discriminator do not fit")
    ins = {run.discriminators[0].in_dim for run in runs}
    outs = {g.out_dim for run in runs for g in run.generators}
    if len(ins) > 1 or ins != outs:
        raise PoolError(f"incompatible checkpoint shapes in pool: discriminator inputs {sorted(ins)}, "
                        f"generator outputs {sorted(outs)}")


def evaluate(run_dirs: Sequence[Path], out_dir: Path, n_samples: int | None = None, seed: int = 0) -> dict:
    """GAM-II over the union of all runs' final discriminators.

    Writes ``gam2_table.csv`` (long form), ``gam2_scores.csv`` and
    ``gam2_summary.json`` to ``out_dir``.  Run directories are only read.
    """
    runs = [load_run(Path(p)) for p in run_dirs]
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise PoolError(f"run names must be unique in a pool, got {names}")
    _check_pool(runs)
    n_samples = n_samples or runs[0].config["eval"]["n_samples"]
    gens, judges, seen = [], [], {}
    groups: dict[str, list[str]] = {}
    for run in runs:
        for k, g in enumerate(run.generators):
            gid = f"{run.name}/w{k}"
            gens.append(GeneratorEntry(gid, g, run.priors[k]))
            seen[gid] = {f"{run.name}/d{x}" for x in run.seen[k]}
            groups.setdefault(run.name, []).append(gid)
        for k, d in enumerate(run.discriminators):
            judges.append(JudgeEntry(f"{run.name}/d{run.holder[k]}", d))
    table = build_error_table(gens, judges, seen, n_samples, seed)
    avg, worst = gam2_scores(table)
    order = rank_generators(table)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "gam2_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generator", "judge", "error", "eligible"])
        for r, g in enumerate(table.generators):
            for c, j in enumerate(table.judges):
                w.writerow([g, j, repr(float(table.errors[r, c])), int(table.eligible[r, c])])
    with open(out_dir / "gam2_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generator", "run", "avg", "worst", "rank"])
        rank = {r: i + 1 for i, r in enumerate(order)}
        for r, g in enumerate(table.generators):
            w.writerow([g, g.split("/")[0], repr(float(avg[r])), repr(float(worst[r])), rank[r]])

    row_of = {g: r for r, g in enumerate(table.generators)}
    summary_groups = {}
    for run in runs:
        rows = [row_of[g] for g in groups[run.name]]
        summary_groups[run.name] = {
            "kind": "gap" if run.is_gap else "single", "generators": groups[run.name],
            "avg_min": float(avg[rows].min()), "avg_max": float(avg[rows].max()),
            "worst_min": float(worst[rows].min()), "worst_max": float(worst[rows].max())}
    single = [(float(avg[row_of[g]]), float(worst[row_of[g]])) for run in runs if not run.is_gap for g in groups[run.name]]
    gap = [(float(avg[row_of[g]]), float(worst[row_of[g]])) for run in runs if run.is_gap for g in groups[run.name]]
    verdict = None
    if single and gap:
        verdict = {c: gap_verdict(single, gap, c).value for c in ("avg", "worst")}
    summary = {"n_samples": n_samples, "seed": seed, "shape": list(table.errors.shape),
               "gam2": {g: {"avg": float(avg[r]), "worst": float(worst[r])} for r, g in enumerate(table.generators)},
               "ranking": [table.generators[r] for r in order], "best": table.generators[order[0]],
               "groups": summary_groups, "verdict": verdict}
    (out_dir / "gam2_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# --- coverage ---------------------------------------------------------------

def coverage(run_dir: Path, out_dir: Path | None = None, workers: Sequence[int] | None = None,
             truth: bool = False, n_samples: int | None = None) -> dict:
    """Sample each generator (or the true distribution) and score mode coverage.

    Writes ``samples-<who>.csv`` (x,y in normalized coordinates) and
    ``coverage.json``.
    """
    run = load_run(Path(run_dir), need_discriminators=False)
    cfg = run.config
    ev = cfg["eval"]
    n = n_samples or ev["coverage_samples"]
    data = build_dataset(cfg)
    out_dir = Path(out_dir) if out_dir is not None else run.path / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    base = named_stream(cfg.seed, STREAM_EVAL).child(0xC0FE)
    who: list[tuple[str, np.ndarray]] = []
    if truth:
        who.append(("truth", truth_samples(cfg, data, n, base.child(1 << 20).generator())))
    else:
        ids = range(len(run.generators)) if workers is None else workers
        for k in ids:
            if not 0 <= k < len(run.generators):
                raise FileNotFoundError(f"{run.path}: no checkpoint for worker {k}")
            who.append((f"worker{k}", sample_generator(run.generators[k], run.priors[k], n, base.child(k).generator())))
    report = {}
    for label, samples in who:
        with open(out_dir / f"samples-{label}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            w.writerows([repr(float(a)), repr(float(b))] for a, b in samples)
        cov = mode_coverage(samples, data.full.centers, data.full.scales, ev["radius_multiplier"], ev["min_count"])
        report[label] = {**cov.as_dict(), "kl_score": mode_kl_score(samples, data.full.centers),
                         "n_samples": int(len(samples))}
    doc = {"run": run.name, "radius_multiplier": ev["radius_multiplier"], "min_count": ev["min_count"],
           "coverage": report}
    (out_dir / "coverage.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc


# --- report -----------------------------------------------------------------

def run_statistics(metrics: Sequence[dict], tail_fraction: float = 0.5) -> dict:
    """Final costs, spread and validation-cost spread across workers, from raw metric rows."""
    evals = [r for r in metrics if r["kind"] == "eval"]
    workers = sorted({r["worker"] for r in evals})
    per = {}
    for k in workers:
        rows = sorted((r for r in evals if r["worker"] == k), key=lambda r: r["update"])
        tr = [r["train_cost"] for r in rows]
        va = [r["val_cost"] for r in rows]
        per[k] = {"final_train_cost": tr[-1], "final_val_cost": va[-1],
                  "curve_spread": curve_spread(tr, va, tail_fraction), "ticks": len(rows)}
    finals = np.array([per[k]["final_val_cost"] for k in workers])
    return {"workers": per,
            "val_cost_std": float(finals.std()) if len(finals) else math.nan,
            "curve_spread": float(np.mean([per[k]["curve_spread"] for k in workers])) if workers else math.nan}


def report(run_dir: Path) -> dict:
    run_dir = Path(run_dir)
    run = load_run(run_dir, need_discriminators=False)
    metrics = run.metrics()
    stats = run_statistics(metrics, run.config["eval"]["tail_fraction"])
    out = run_dir / "reports"
    out.mkdir(exist_ok=True)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["worker", "update", "train_cost", "val_cost"])
        for r in metrics:
            if r["kind"] == "eval":
                w.writerow([r["worker"], r["update"], repr(r["train_cost"]), repr(r["val_cost"])])
    bad = verify_manifest(run_dir) if (run_dir / MANIFEST).is_file() else None
    summary = {"run": run.name, "n_workers": len(run.generators), "total_updates": run.config["gap"]["total_updates"],
               "swaps": len(run.swaps), "manifest_ok": bad == [] if bad is not None else False,
               "manifest_mismatches": bad, **stats}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    return summary


# --- sweep ------------------------------------------------------------------

SWEEP_COLUMNS = ["frequency", "runs", "failed", "val_cost_std", "curve_spread"]


def sweep(cfg: ExperimentConfig, out_root: Path, frequencies: Sequence[float] | None = None,
          seeds: Sequence[int] | None = None, parallel: bool = True) -> tuple[Path, list[dict]]:
    """One run per (frequency, seed); failed runs are recorded and the sweep moves on."""
    frequencies = list(cfg["sweep"]["frequencies"] if frequencies is None else frequencies)
    seeds = list(cfg["sweep"]["seeds"] if seeds is None else seeds)
    if not frequencies or not seeds:
        raise ConfigError("a sweep needs at least one frequency and one seed")
    for f in frequencies:
        if not f > 0:
            raise ConfigError(f"swap frequency must be > 0, got {f}")
    sweep_dir = Path(out_root) / cfg.name
    sweep_dir.mkdir(parents=True, exist_ok=True)
    per_run = []
    tail = cfg["eval"]["tail_fraction"]
    for f in frequencies:
        for s in seeds:
            name = f"f{f:g}-s{s}"
            row = {"frequency": f, "seed": s, "run": name, "status": "ok", "swap_interval": "",
                   "val_cost_std": "", "curve_spread": ""}
            try:
                run_cfg = with_swap(cfg.with_updates({"run.seed": str(s), "run.name": name}), SwapSpec(epochs=f))
                run_dir = train(run_cfg, sweep_dir, parallel=parallel)
                stats = run_statistics(read_jsonl(run_dir / "metrics.jsonl"), tail)
                manifest = json.loads((run_dir / MANIFEST).read_text())
                row.update(swap_interval=manifest["swap_interval"], val_cost_std=stats["val_cost_std"],
                           curve_spread=stats["curve_spread"])
            except Exception as exc:  # noqa: BLE001 -- flagged and reported, sweep continues
                log.error("sweep run %s failed: %s", name, exc)
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
            per_run.append(row)
    with open(sweep_dir / "sweep_runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["frequency", "seed", "run", "status", "swap_interval", "val_cost_std", "curve_spread"])
        w.writeheader()
        w.writerows(per_run)
    aggregate = aggregate_sweep(per_run)
    with open(sweep_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(aggregate)
    return sweep_dir, aggregate


def aggregate_sweep(per_run: Sequence[dict]) -> list[dict]:
    """Per frequency: mean over successful seeds of the per-run statistics."""
    out = []
    for f in dict.fromkeys(r["frequency"] for r in per_run):
        rows = [r for r in per_run if r["frequency"] == f]
        ok = [r for r in rows if r["status"] == "ok"]
        out.append({"frequency": f, "runs": len(rows), "failed": len(rows) - len(ok),
                    "val_cost_std": float(np.mean([r["val_cost_std"] for r in ok])) if ok else math.nan,
                    "curve_spread": float(np.mean([r["curve_spread"] for r in ok])) if ok else math.nan})
    return out


__all__ = ["PoolError", "PreparedData", "build_dataset", "train", "load_run", "evaluate", "coverage",
           "report", "sweep", "aggregate_sweep", "run_statistics", "verify_manifest", "load_config"]
