"""GAM-II scoring, GAP verdicts, mode coverage and learning-curve spread."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Sequence

import numpy as np

from . import nn
from .game import Prior, disc_logits, sample_generator
from .rng import STREAM_JUDGE, SplittableRng


class EligibilityError(ValueError):
    """A generator has no judge outside its own seen set."""


def disc_error(discriminator: nn.ModelParams, samples: np.ndarray) -> float:
    """Fraction of generated samples the discriminator calls real (logit >= 0)."""
    return float(np.mean(disc_logits(discriminator, samples) >= 0))


@dataclass
class ErrorTable:
    generators: list[Hashable]
    judges: list[Hashable]
    errors: np.ndarray  # (n_generators, n_judges)
    eligible: np.ndarray  # bool; False where the judge is in the generator's seen set

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        self.eligible = np.asarray(self.eligible, dtype=bool)
        shape = (len(self.generators), len(self.judges))
        if self.errors.shape != shape or self.eligible.shape != shape:
            raise ValueError(f"errors/eligibility must have shape {shape}")
        if not np.all(np.isfinite(self.errors)):
            raise ValueError("error table contains non-finite values")

    def check_eligible(self) -> None:
        empty = ~self.eligible.any(axis=1)
        if empty.any():
            names = [self.generators[i] for i in np.flatnonzero(empty)]
            raise EligibilityError(f"no eligible judges for generators {names}")


def gam2_scores(table: ErrorTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-generator (average, worst) error over its eligible judges.

    ``worst`` is the error under the harshest judge, i.e. the minimum.
    Higher is better for the generator in both.
    """
    table.check_eligible()
    masked = np.where(table.eligible, table.errors, 0.0)
    avg = masked.sum(axis=1) / table.eligible.sum(axis=1)
    worst = np.where(table.eligible, table.errors, np.inf).min(axis=1)
    return avg, worst


def rank_generators(table: ErrorTable) -> list[int]:
    """Row indices ordered best first: average desc, then worst desc, then row index."""
    avg, worst = gam2_scores(table)
    return sorted(range(len(avg)), key=lambda i: (-avg[i], -worst[i], i))


class Verdict(str, Enum):
    STRONGLY_HELPS = "strongly_helps"
    HELPS = "helps"
    NEITHER = "neither"


def gap_verdict(single_scores: Sequence[tuple[float, float]], gap_scores: Sequence[tuple[float, float]],
                criterion: str = "avg") -> Verdict:
    """Compare GAP-trained models against single models.

    Strongly helps when every GAP model beats the best single model, helps
    when at least one does.  Comparisons are strict.
    """
    if not single_scores or not gap_scores:
        raise ValueError("both score lists must be nonempty")
    col = {"avg": 0, "worst": 1}[criterion]
    best_single = max(s[col] for s in single_scores)
    gap = [s[col] for s in gap_scores]
    if min(gap) > best_single:
        return Verdict.STRONGLY_HELPS
    if max(gap) > best_single:
        return Verdict.HELPS
    return Verdict.NEITHER


@dataclass
class CoverageReport:
    covered_modes: int
    total_modes: int
    per_mode_counts: np.ndarray  # high-quality samples per mode
    high_quality_fraction: float
    assigned_counts: np.ndarray  # all samples by nearest mode

    def as_dict(self) -> dict:
        return {"covered_modes": self.covered_modes, "total_modes": self.total_modes,
                "per_mode_counts": self.per_mode_counts.tolist(),
                "assigned_counts": self.assigned_counts.tolist(),
                "high_quality_fraction": self.high_quality_fraction}


def _nearest(samples: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    idx = d2.argmin(axis=1)
    return idx, np.sqrt(d2[np.arange(len(samples)), idx])


def mode_coverage(samples: np.ndarray, centers: np.ndarray, scales: np.ndarray,
                  radius_multiplier: float = 3.0, min_count: int = 20) -> CoverageReport:
    """Nearest-center assignment; high quality within ``radius_multiplier * scale``."""
    samples = np.asarray(samples, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (len(centers),))
    if len(samples) == 0:
        raise ValueError("empty sample set")
    if len(centers) == 0:
        raise ValueError("no modes")
    if radius_multiplier <= 0:
        raise ValueError("radius_multiplier must be positive")
    idx, dist = _nearest(samples, centers)
    hq = dist <= radius_multiplier * scales[idx]
    k = len(centers)
    per_mode = np.bincount(idx[hq], minlength=k)
    return CoverageReport(
        covered_modes=int(np.sum(per_mode >= min_count)),
        total_modes=k,
        per_mode_counts=per_mode,
        high_quality_fraction=float(hq.mean()),
        assigned_counts=np.bincount(idx, minlength=k),
    )


def mode_kl_score(samples: np.ndarray, centers: np.ndarray, total_classes: int | None = None) -> float:
    """exp(E_x KL(p(y|x) || p(y))) with a one-hot nearest-center classifier.

    For one-hot p(y|x) the expected KL equals the entropy of the marginal
    class histogram.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) == 0:
        raise ValueError("no modes")
    if total_classes is not None and total_classes != len(centers):
        raise ValueError(f"total_classes={total_classes} but {len(centers)} modes given")
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        raise ValueError("empty sample set")
    idx, _ = _nearest(samples, centers)
    p = np.bincount(idx, minlength=len(centers)) / len(samples)
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def curve_spread(train_costs: Sequence[float], val_costs: Sequence[float], tail_fraction: float = 0.5) -> float:
    """Mean |train - val| over the last ``ceil(tail_fraction * n)`` evaluation ticks."""
    train = np.asarray(train_costs, dtype=np.float64)
    val = np.asarray(val_costs, dtype=np.float64)
    if train.shape != val.shape:
        raise ValueError(f"length mismatch: {train.shape} vs {val.shape}")
    if train.size == 0:
        raise ValueError("empty series")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    k = max(1, math.ceil(tail_fraction * train.size))
    return float(np.mean(np.abs(train[-k:] - val[-k:])))


@dataclass
class GeneratorEntry:
    id: Hashable
    generator: nn.ModelParams
    prior: Prior


@dataclass
class JudgeEntry:
    id: Hashable
    discriminator: nn.ModelParams


def build_error_table(generators: Sequence[GeneratorEntry], judges: Sequence[JudgeEntry],
                      seen_sets: dict, n_samples: int = 2000, seed: int = 0) -> ErrorTable:
    """Score one fresh sample set per generator against every judge.

    The sample set of the generator in row ``j`` comes from a stream derived
    from ``(seed, j)``, so the table does not depend on evaluation order.
    """
    if not generators or not judges:
        raise ValueError("generator and judge pools must be nonempty")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    base = SplittableRng(seed, 0).child(STREAM_JUDGE)
    errors = np.zeros((len(generators), len(judges)))
    eligible = np.zeros_like(errors, dtype=bool)
    for j, g in enumerate(generators):
        samples = sample_generator(g.generator, g.prior, n_samples, base.child(j).generator())
        seen = seen_sets.get(g.id, set())
        for i, d in enumerate(judges):
            errors[j, i] = disc_error(d.discriminator, samples)
            eligible[j, i] = d.id not in seen
    return ErrorTable([g.id for g in generators], [d.id for d in judges], errors, eligible)
