"""Synthetic 2D datasets, normalization, minibatching and input-noise decay."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)


class DatasetParseError(ValueError):
    pass


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None
    centers: np.ndarray | None = None  # (n_modes, 2)
    scales: np.ndarray | None = None  # (n_modes,)
    name: str = "data"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValueError("points must be an (n, d) matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.centers is None or len(self.labels) != len(self.points):
                raise ValueError("labels need one entry per point and a mode table")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.centers)):
                raise ValueError("label out of range of the mode table")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def modes(self) -> list[tuple[np.ndarray, float]]:
        if self.centers is None:
            return []
        return [(c, float(s)) for c, s in zip(self.centers, self.scales)]

    def subset(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, points=self.points[idx],
                       labels=None if self.labels is None else self.labels[idx],
                       name=name or self.name)

    def to_csv(self, path) -> None:
        labels = self.labels if self.labels is not None else np.full(len(self), -1)
        with open(path, "w") as fh:
            fh.write("x,y,label\n")
            for (x, y), lab in zip(self.points, labels):
                fh.write(f"{float(x)!r},{float(y)!r},{int(lab)}\n")


def make_mog(n: int = 2500, component_std: float = 0.05, rng: np.random.Generator | None = None,
             grid: int = 5, extent: float = 4.0) -> Dataset:
    """``grid x grid`` isotropic Gaussians with centers spanning [-extent, extent]^2.

    Components get ``n // grid**2`` points each; the remainder goes one each to
    the first components.  ``component_std = 0`` returns the centers exactly.
    """
    if component_std < 0:
        raise ValueError("component_std must be non-negative")
    k = grid * grid
    if n < k:
        raise ValueError(f"need at least {k} points for {k} components")
    rng = rng if rng is not None else np.random.default_rng(0)
    axis = np.linspace(-extent, extent, grid)
    centers = np.array([(x, y) for x in axis for y in axis])
    labels = np.repeat(np.arange(k), n // k)
    labels = np.concatenate([labels, np.arange(n % k)])
    points = centers[labels] + component_std * rng.standard_normal((n, 2))
    return Dataset(points, labels, centers, np.full(k, float(component_std)), name=f"mog{grid}x{grid}")


def load_r15(path) -> Dataset:
    """Parse whitespace-separated ``x y label`` lines (labels 1-based, '#' comments)."""
    rows, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DatasetParseError(f"{path}:{lineno}: expected 'x y label', got {line!r}")
            try:
                x, y, lab = float(parts[0]), float(parts[1]), int(float(parts[2]))
            except ValueError as exc:
                raise DatasetParseError(f"{path}:{lineno}: {exc}") from exc
            if lab < 1:
                raise DatasetParseError(f"{path}:{lineno}: label {lab} out of range (labels are 1-based)")
            rows.append((x, y))
            labels.append(lab - 1)
    if not rows:
        raise DatasetParseError(f"{path}: no data points")
    if len(rows) not in (500, 600):
        log.warning("R15 file %s has %d points (expected 500 or 600)", path, len(rows))
    points = np.array(rows)
    labels = np.array(labels)
    k = labels.max() + 1
    centers = np.zeros((k, 2))
    scales = np.zeros(k)
    for j in range(k):
        members = points[labels == j]
        if len(members) == 0:
            raise DatasetParseError(f"{path}: label {j + 1} has no points")
        centers[j] = members.mean(axis=0)
        # isotropic scale: RMS per-axis deviation
        scales[j] = np.sqrt(members.var(axis=0).mean()) if len(members) > 1 else 0.0
    return Dataset(points, labels, centers, scales, name=Path(path).stem)


def make_r15_like(n_per_cluster: int = 40, cluster_std: float = 0.35,
                  rng: np.random.Generator | None = None) -> Dataset:
    """Non-canonical stand-in for R15: 15 clusters (8 outer ring, 6 inner ring, 1 center)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    outer = [(10 + 6.0 * np.cos(t), 10 + 6.0 * np.sin(t)) for t in np.arange(8) * 2 * np.pi / 8]
    inner = [(10 + 2.5 * np.cos(t), 10 + 2.5 * np.sin(t)) for t in np.pi / 6 + np.arange(6) * 2 * np.pi / 6]
    centers = np.array([*outer, *inner, (10.0, 10.0)])
    labels = np.repeat(np.arange(15), n_per_cluster)
    points = centers[labels] + cluster_std * rng.standard_normal((len(labels), 2))
    return Dataset(points, labels, centers, np.full(15, cluster_std), name="r15-like (non-canonical)")


@dataclass(frozen=True)
class UnitTransform:
    """Per-axis affine map ``u = (x - lo) / span``."""
    lo: np.ndarray
    span: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.lo) / self.span

    def inverse(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u) * self.span + self.lo


def normalize_to_unit(d: Dataset) -> tuple[Dataset, UnitTransform]:
    if len(d) < 2:
        raise ValueError("need at least 2 points to normalize")
    lo = d.points.min(axis=0)
    span = d.points.max(axis=0) - lo
    if np.any(span <= 0):
        raise ValueError(f"zero extent on axis {int(np.argmin(span))}")
    tf = UnitTransform(lo, span)
    # isotropic scales: divide by the mean span
    out = replace(d, points=tf.apply(d.points),
                  centers=None if d.centers is None else tf.apply(d.centers),
                  scales=None if d.scales is None else d.scales / span.mean())
    return out, tf


@dataclass
class BatchStream:
    """Endless minibatches: a fresh permutation each epoch, short last batch dropped."""
    points: np.ndarray
    batch: int
    rng: np.random.Generator
    epoch: int = 0
    _order: np.ndarray = field(default=None, repr=False)
    _pos: int = 0

    def __post_init__(self):
        if self.batch > len(self.points):
            raise ValueError(f"batch {self.batch} larger than train set {len(self.points)}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @property
    def batches_per_epoch(self) -> int:
        return len(self.points) // self.batch

    def __iter__(self) -> Iterator[np.ndarray]:
        return self

    def __next__(self) -> np.ndarray:
        if self._order is None or self._pos >= self.batches_per_epoch:
            self._order = self.rng.permutation(len(self.points))
            self._pos = 0
            self.epoch += 1
        i = self._pos
        self._pos += 1
        return self.points[self._order[i * self.batch:(i + 1) * self.batch]]


def train_val_split(d: Dataset, val_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = int(round(val_fraction * len(d)))
    if n_val < 1 or n_val >= len(d):
        raise ValueError(f"val_fraction {val_fraction} leaves an empty split for {len(d)} points")
    perm = rng.permutation(len(d))
    return d.subset(np.sort(perm[n_val:]), d.name + "/train"), d.subset(np.sort(perm[:n_val]), d.name + "/val")


def split_and_batch(d: Dataset, val_fraction: float, batch: int,
                    rng: np.random.Generator) -> tuple[BatchStream, Dataset]:
    train, val = train_val_split(d, val_fraction, rng)
    return BatchStream(train.points, batch, rng), val


@dataclass(frozen=True)
class NoiseSchedule:
    sigma0: float = 0.1
    decay_until_fraction: float = 0.5

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        if not 0 < self.decay_until_fraction <= 1:
            raise ValueError("decay_until_fraction must lie in (0, 1]")


def noise_sigma(schedule: NoiseSchedule, t: int, T: int) -> float:
    """Linear decay from sigma0 at t=0 to exactly 0 at ``decay_until_fraction * T``."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    horizon = schedule.decay_until_fraction * T
    if t >= horizon:
        return 0.0
    return schedule.sigma0 * max(0.0, 1.0 - t / horizon)
