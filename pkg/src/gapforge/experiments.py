"""Desk-scale studies: mode coverage and train/validation spread, GAP against single GANs.

Each seed trains a single GAN, GAP x2 and GAP x4 with identical per-worker
hyperparameters and update budgets.  Priors alternate uniform / normal across
workers (the single GAN uses the uniform prior), and worker ``k`` of every
population starts from the same initial weights for a given seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datasets import Dataset, NoiseSchedule, make_mog, make_r15_like, normalize_to_unit
from .game import WorkerConfig, sample_generator
from .metrics import JudgeEntry, curve_spread, mode_coverage
from .orchestrator import GapConfig, RunResult, run_gap, select_best
from .rng import STREAM_DATA, STREAM_EVAL, named_stream


@dataclass
class StudyConfig:
    total_updates: int = 4000
    batch_size: int = 64
    val_fraction: float = 0.2
    swap_every_epochs: float = 1.0
    worker: WorkerConfig = field(default_factory=lambda: WorkerConfig(
        g_hidden=(64, 64, 64), d_hidden=(64, 64, 64), lr_g=2e-4, lr_d=2e-4, noise=NoiseSchedule(0.1, 0.5)))
    populations: tuple[int, ...] = (1, 2, 4)
    coverage_samples: int = 2000
    judge_samples: int = 2000
    radius_multiplier: float = 3.0
    min_count: int = 20
    tail_fraction: float = 0.5
    eval_every: int | None = None
    diversify_priors: bool = True


def mog_data(n: int = 2500, component_std: float = 0.2, data_seed: int = 0) -> Dataset:
    return normalize_to_unit(make_mog(n, component_std, rng=np.random.default_rng(data_seed)))[0]


def r15_subset(seed: int, subset: int = 100, full: Dataset | None = None, data_seed: int = 0) -> tuple[Dataset, Dataset]:
    """A seeded ``subset``-point draw from the 600-point R15-like set; returns (subset, full)."""
    if full is None:
        full = normalize_to_unit(make_r15_like(40, rng=np.random.default_rng(data_seed)))[0]
    idx = named_stream(seed, STREAM_DATA).generator().choice(len(full), subset, replace=False)
    return full.subset(np.sort(idx), f"{full.name}/subset{subset}"), full


@dataclass
class SeedOutcome:
    seed: int
    covered: dict[str, int]  # "single", "gap2", "gap4" -> covered modes of the chosen worker
    hq: dict[str, float]
    spread: dict[str, float]  # mean tail curve spread across workers of each population
    best_gap_worker: dict[str, int]
    seconds: float
    runs: dict[str, RunResult] = field(default_factory=dict, repr=False)


def population_name(n: int) -> str:
    return "single" if n == 1 else f"gap{n}"


def mean_spread(result: RunResult, tail_fraction: float) -> float:
    vals = []
    for w in result.group.workers:
        tr, va = result.cost_curves(w.id)
        vals.append(curve_spread(tr, va, tail_fraction))
    return float(np.mean(vals))


def run_seed(seed: int, train_data: Dataset, modes: Dataset, study: StudyConfig, keep_runs: bool = False) -> SeedOutcome:
    """Train every population for one seed and score the GAM-II-selected worker of each."""
    start = time.perf_counter()
    runs = {}
    for n in study.populations:
        cfg = GapConfig(n_workers=n, total_updates=study.total_updates,
                        swap_every_epochs=study.swap_every_epochs if n > 1 else None, seed=seed,
                        batch_size=study.batch_size, val_fraction=study.val_fraction, eval_every=study.eval_every,
                        worker=study.worker, diversify_priors=study.diversify_priors)
        runs[population_name(n)] = run_gap(cfg, train_data)
    # judge pool: the final discriminators of every population trained for this seed
    judges = [JudgeEntry((name, w.d_lineage), w.discriminator) for name, r in runs.items() for w in r.group.workers]
    covered, hq, spread, best = {}, {}, {}, {}
    for name, r in runs.items():
        pick = select_best(r.group, judges, study.judge_samples, seed, namespace=name) if len(r.group.workers) > 1 else 0
        w = r.group.by_id(pick)
        rng = named_stream(seed, STREAM_EVAL).child(0xC0FE).child(pick).generator()
        samples = sample_generator(w.generator, w.prior, study.coverage_samples, rng)
        rep = mode_coverage(samples, modes.centers, modes.scales, study.radius_multiplier, study.min_count)
        covered[name], hq[name], best[name] = rep.covered_modes, rep.high_quality_fraction, pick
        spread[name] = mean_spread(r, study.tail_fraction)
    return SeedOutcome(seed, covered, hq, spread, best, time.perf_counter() - start, runs if keep_runs else {})


def mog_study(seeds: Sequence[int], study: StudyConfig | None = None, data: Dataset | None = None) -> list[SeedOutcome]:
    study = study or StudyConfig()
    data = data if data is not None else mog_data()
    return [run_seed(s, data, data, study) for s in seeds]


def r15_study(seeds: Sequence[int], study: StudyConfig | None = None, subset: int = 100) -> list[SeedOutcome]:
    study = study or replace(StudyConfig(), batch_size=20, populations=(1, 4))
    out = []
    full = None
    for s in seeds:
        sub, full = r15_subset(s, subset, full)
        out.append(run_seed(s, sub, full, study))
    return out


def medians(outcomes: Sequence[SeedOutcome], attr: str) -> dict[str, float]:
    names = outcomes[0].covered.keys()
    return {n: float(np.median([getattr(o, attr)[n] for o in outcomes])) for n in names}


def means(outcomes: Sequence[SeedOutcome], attr: str) -> dict[str, float]:
    names = outcomes[0].covered.keys()
    return {n: float(np.mean([getattr(o, attr)[n] for o in outcomes])) for n in names}
