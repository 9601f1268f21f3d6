"""Generative adversarial parallelization: lockstep training with discriminator swaps.

``run_gap`` trains N workers for T updates each.  Before update ``t`` (for
``t > 0`` and ``t % K == 0``) the coordinator draws a uniform random perfect
matching and swaps discriminators, together with their Adam state and
lineage id, inside every pair.  That gives ``floor((T - 1) / K)`` swaps and
guarantees every generator trains at least once against each discriminator it
receives.

Two schedulers share the same per-worker code path:

* sequential -- the reference semantics, one worker after another, swaps by
  direct exchange of the worker objects' discriminator state;
* parallel -- one thread per worker between swap barriers; a swap is a
  message exchange of serialized discriminator payloads.

Both produce bit-identical results.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from . import nn
from .datasets import BatchStream, Dataset, noise_sigma, train_val_split
from .game import (GanWorker, PriorKind, StepMetrics, WorkerConfig, eval_d_cost, make_worker,
                   train_update, worker_configs)
from .metrics import GeneratorEntry, JudgeEntry, build_error_table, rank_generators
from .rng import (STREAM_BATCH, STREAM_EVAL, STREAM_SPLIT, STREAM_SWAP, named_stream,
                  worker_stream)


class ConfigError(ValueError):
    pass


@dataclass
class GapConfig:
    """Population and schedule for one run.

    Swapping is configured with at most one of ``swap_every`` (K updates) or
    ``swap_every_epochs`` (f epochs, resolved to ``K = round(f * updates_per_epoch)``).
    Setting neither trains the workers independently.
    """
    n_workers: int = 4
    total_updates: int = 1000
    swap_every: int | None = None
    swap_every_epochs: float | None = None
    seed: int = 0
    batch_size: int = 64
    val_fraction: float = 0.2
    eval_every: int | None = None  # updates between cost evaluations; default one epoch
    worker: WorkerConfig = field(default_factory=WorkerConfig)
    overrides: list[dict] = field(default_factory=list)
    diversify_priors: bool = True  # alternate uniform / normal priors across workers

    @property
    def swapping(self) -> bool:
        return self.swap_every is not None or self.swap_every_epochs is not None

    def validate(self) -> None:
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if self.total_updates < 1:
            raise ConfigError("total_updates must be >= 1")
        if self.swap_every is not None and self.swap_every_epochs is not None:
            raise ConfigError("set only one of swap_every and swap_every_epochs")
        if self.swap_every is not None and self.swap_every < 1:
            raise ConfigError("swap_every must be >= 1")
        if self.swap_every_epochs is not None and not self.swap_every_epochs > 0:
            raise ConfigError("swap_every_epochs must be > 0")
        if self.swapping and (self.n_workers < 2 or self.n_workers % 2):
            raise ConfigError(f"swapping needs an even number of workers >= 2, got {self.n_workers}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if len(self.overrides) > self.n_workers:
            raise ConfigError("more override blocks than workers")
        cfgs = self.worker_configs()
        if len({c.d_hidden for c in cfgs}) > 1:
            raise ConfigError("all discriminators must share one shape to be swappable")

    def worker_configs(self) -> list[WorkerConfig]:
        overrides = [dict(o) for o in self.overrides] + [{} for _ in range(self.n_workers - len(self.overrides))]
        if self.diversify_priors:
            for k, o in enumerate(overrides):
                o.setdefault("prior", PriorKind.UNIFORM if k % 2 == 0 else PriorKind.NORMAL)
        try:
            return worker_configs(self.worker, self.n_workers, overrides)
        except TypeError as exc:
            raise ConfigError(f"bad worker override: {exc}") from exc

    def resolve_swap_interval(self, updates_per_epoch: int) -> int | None:
        if self.swap_every is not None:
            return self.swap_every
        if self.swap_every_epochs is not None:
            return max(1, int(round(self.swap_every_epochs * updates_per_epoch)))
        return None


@dataclass
class SwapEvent:
    at_update: int
    pairs: list[tuple[int, int]]

    def as_dict(self) -> dict:
        return {"update": self.at_update, "pairs": [list(p) for p in self.pairs]}


def random_perfect_matching(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform over all (n-1)!! perfect matchings of {0..n-1}.

    Pairing consecutive entries of a uniform permutation hits every matching
    exactly (n/2)! * 2^(n/2) times.
    """
    if n < 2 or n % 2:
        raise ValueError(f"perfect matching needs an even n >= 2, got {n}")
    perm = rng.permutation(n)
    pairs = [tuple(sorted((int(perm[2 * i]), int(perm[2 * i + 1])))) for i in range(n // 2)]
    return sorted(pairs)


def check_matching(pairs: Iterable[tuple[int, int]], ids: Iterable[int]) -> None:
    ids = set(ids)
    flat = [x for p in pairs for x in p]
    unknown = set(flat) - ids
    if unknown:
        raise ValueError(f"unknown worker ids in swap: {sorted(unknown)}")
    if len(flat) != len(set(flat)) or set(flat) != ids or any(i == j for i, j in pairs):
        raise ValueError(f"pairs {list(pairs)} are not a perfect matching over {sorted(ids)}")


# --- discriminator payloads -------------------------------------------------

_PAYLOAD_MAGIC = b"GAPDSWP1"


def export_discriminator(worker: GanWorker) -> bytes:
    """Discriminator params, Adam state and lineage id as one byte message."""
    opt = worker.d_opt
    ckpt = nn.serialize_params(worker.discriminator)
    head = _PAYLOAD_MAGIC + struct.pack("<qQddddQ", worker.d_lineage, opt.step, opt.lr, opt.beta1,
                                         opt.beta2, opt.eps, len(ckpt))
    moments = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in [*opt.m, *opt.v])
    return head + ckpt + moments


def import_discriminator(worker: GanWorker, payload: bytes) -> None:
    if payload[:8] != _PAYLOAD_MAGIC:
        raise ValueError("bad discriminator payload")
    lineage, step, lr, beta1, beta2, eps, ckpt_len = struct.unpack_from("<qQddddQ", payload, 8)
    offset = 8 + struct.calcsize("<qQddddQ")
    disc = nn.deserialize_params(payload[offset:offset + ckpt_len])
    offset += ckpt_len
    shapes = [t.shape for t in disc.trainable()]
    moments = []
    for shape in shapes + shapes:
        count = int(np.prod(shape))
        moments.append(np.frombuffer(payload, "<f8", count, offset).astype(np.float64).reshape(shape))
        offset += 8 * count
    if offset != len(payload):
        raise ValueError("discriminator payload has trailing bytes")
    k = len(shapes)
    worker.discriminator = disc
    worker.d_opt = nn.AdamState(moments[:k], moments[k:], step, lr, beta1, beta2, eps)
    worker.d_lineage = lineage
    worker.seen_discriminators.add(lineage)


# --- group ------------------------------------------------------------------

@dataclass
class WorkerHandle:
    """A worker plus its private batch stream and evaluation bookkeeping."""
    worker: GanWorker
    batches: BatchStream
    train_points: np.ndarray
    val_points: np.ndarray | None
    seed: int
    total_updates: int
    eval_every: int
    metrics: list[StepMetrics] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)

    def run_until(self, t_stop: int) -> None:
        w = self.worker
        while w.updates < t_stop:
            t = w.updates
            sigma = noise_sigma(w.noise_schedule, t, self.total_updates)
            self.metrics.append(train_update(w, next(self.batches), sigma))
            if w.updates % self.eval_every == 0 or w.updates == self.total_updates:
                self.evaluate()

    def evaluate(self) -> None:
        w = self.worker
        tick = len(self.evals)
        stream = worker_stream(self.seed, w.id, STREAM_EVAL).child(tick)
        row = {"worker": w.id, "update": w.updates,
               "train_cost": eval_d_cost(w, self.train_points, stream.generator())}
        if self.val_points is not None:
            row["val_cost"] = eval_d_cost(w, self.val_points, stream.generator())
        self.evals.append(row)


@dataclass
class GapGroup:
    workers: list[GanWorker]
    swap_log: list[SwapEvent] = field(default_factory=list)
    swap_rng: np.random.Generator | None = None

    def __post_init__(self):
        ids = [w.id for w in self.workers]
        if len(set(ids)) != len(ids):
            raise ValueError("worker ids must be unique")

    def by_id(self, worker_id: int) -> GanWorker:
        for w in self.workers:
            if w.id == worker_id:
                return w
        raise KeyError(f"unknown worker id {worker_id}")

    def lineages(self) -> list[int]:
        return [w.d_lineage for w in self.workers]


def apply_swap(group: GapGroup, pairs: Sequence[tuple[int, int]], at_update: int = 0) -> GapGroup:
    """Exchange discriminator state within each pair (in place); generators stay put."""
    check_matching(pairs, [w.id for w in group.workers])
    for i, j in pairs:
        a, b = group.by_id(i), group.by_id(j)
        a.discriminator, b.discriminator = b.discriminator, a.discriminator
        a.d_opt, b.d_opt = b.d_opt, a.d_opt
        a.d_lineage, b.d_lineage = b.d_lineage, a.d_lineage
        a.seen_discriminators.add(a.d_lineage)
        b.seen_discriminators.add(b.d_lineage)
    group.swap_log.append(SwapEvent(at_update, [tuple(p) for p in pairs]))
    return group


def swap_points(total_updates: int, interval: int | None) -> list[int]:
    if interval is None:
        return []
    return list(range(interval, total_updates, interval))


def run_swap_schedule(group: GapGroup, total_updates: int, interval: int | None, advance) -> GapGroup:
    """Sequential reference schedule.

    ``advance(t)`` must bring every worker to ``t`` updates.  Training stops
    at each swap point, the coordinator swaps, and training resumes.  Workers
    are only touched through their discriminator fields, so any object with
    ``id``, ``discriminator``, ``d_opt``, ``d_lineage`` and
    ``seen_discriminators`` will do.
    """
    stops = swap_points(total_updates, interval) + [total_updates]
    for k, stop in enumerate(stops):
        if k > 0:
            apply_swap(group, random_perfect_matching(len(group.workers), group.swap_rng), stops[k - 1])
        advance(stop)
    return group


@dataclass
class RunResult:
    config: GapConfig
    group: GapGroup
    handles: list[WorkerHandle]
    swap_interval: int | None
    updates_per_epoch: int
    train: Dataset
    val: Dataset

    @property
    def metrics(self) -> list[StepMetrics]:
        """Per-update metrics ordered by (update, worker)."""
        rows = [m for h in self.handles for m in h.metrics]
        return sorted(rows, key=lambda m: (m.update, m.worker))

    @property
    def evals(self) -> list[dict]:
        rows = [e for h in self.handles for e in h.evals]
        return sorted(rows, key=lambda e: (e["update"], e["worker"]))

    def cost_curves(self, worker_id: int) -> tuple[np.ndarray, np.ndarray]:
        rows = [e for e in self.evals if e["worker"] == worker_id]
        return np.array([e["train_cost"] for e in rows]), np.array([e["val_cost"] for e in rows])


def build_handles(config: GapConfig, data: Dataset, worker_ids: Sequence[int] | None = None):
    config.validate()
    if len(data) == 0:
        raise ValueError("empty dataset")
    train, val = train_val_split(data, config.val_fraction, named_stream(config.seed, STREAM_SPLIT).generator())
    if config.batch_size > len(train):
        raise ConfigError(f"batch_size {config.batch_size} larger than train set ({len(train)} points)")
    upe = len(train) // config.batch_size
    eval_every = config.eval_every or upe
    cfgs = config.worker_configs()
    ids = range(config.n_workers) if worker_ids is None else worker_ids
    handles = []
    for k in ids:
        w = make_worker(k, cfgs[k], config.seed)
        stream = BatchStream(train.points, config.batch_size,
                             worker_stream(config.seed, k, STREAM_BATCH).generator())
        handles.append(WorkerHandle(w, stream, train.points, val.points, config.seed,
                                    config.total_updates, eval_every))
    return handles, train, val, upe


def run_gap(config: GapConfig, data: Dataset, parallel: bool = False) -> RunResult:
    """Train the population; see the module docstring for the schedule."""
    handles, train, val, upe = build_handles(config, data)
    interval = config.resolve_swap_interval(upe)
    group = GapGroup([h.worker for h in handles], swap_rng=named_stream(config.seed, STREAM_SWAP).generator())
    stops = swap_points(config.total_updates, interval) + [config.total_updates]

    if parallel:
        with ThreadPoolExecutor(max_workers=len(handles)) as pool:
            for k, stop in enumerate(stops):
                if k > 0:
                    _message_swap(group, handles, pool, stops[k - 1])
                list(pool.map(lambda h: h.run_until(stop), handles))
    else:
        def advance(stop):
            for h in handles:
                h.run_until(stop)
        run_swap_schedule(group, config.total_updates, interval, advance)
    return RunResult(config, group, handles, interval, upe, train, val)


def _message_swap(group: GapGroup, handles: list[WorkerHandle], pool: ThreadPoolExecutor, at: int) -> None:
    pairs = random_perfect_matching(len(handles), group.swap_rng)
    outbox = dict(zip([h.worker.id for h in handles],
                      pool.map(lambda h: export_discriminator(h.worker), handles)))
    partner = {i: j for p in pairs for i, j in (p, p[::-1])}
    list(pool.map(lambda h: import_discriminator(h.worker, outbox[partner[h.worker.id]]), handles))
    group.swap_log.append(SwapEvent(at, pairs))


def train_independent(config: GapConfig, data: Dataset, worker_id: int) -> WorkerHandle:
    """Train one worker of ``config`` on its own, never swapping."""
    (handle,), *_ = build_handles(config, data, [worker_id])
    handle.run_until(config.total_updates)
    return handle


def seen_sets_from_swap_log(n_workers: int, events: Iterable[SwapEvent | dict]) -> tuple[dict[int, set[int]], list[int]]:
    """Replay a swap log from the identity assignment.

    Returns each worker's seen lineage set and the final lineage held by each worker.
    """
    holder = list(range(n_workers))
    seen = {k: {k} for k in range(n_workers)}
    for ev in events:
        pairs = ev.pairs if isinstance(ev, SwapEvent) else ev["pairs"]
        check_matching([tuple(p) for p in pairs], range(n_workers))
        for i, j in pairs:
            holder[i], holder[j] = holder[j], holder[i]
            seen[i].add(holder[i])
            seen[j].add(holder[j])
    return seen, holder


def select_best(group: GapGroup, judges: Sequence[JudgeEntry], n_samples: int = 2000, seed: int = 0,
                namespace: Hashable | None = None) -> int:
    """Worker id whose generator ranks first under GAM-II against ``judges``.

    Judge ids are lineage ids, qualified as ``(namespace, lineage)`` when a
    namespace is given so pools can mix runs.
    """
    if not judges:
        raise ValueError("judge pool is empty")
    workers = sorted(group.workers, key=lambda w: w.id)
    gens = [GeneratorEntry(w.id, w.generator, w.prior) for w in workers]
    qualify = (lambda x: x) if namespace is None else (lambda x: (namespace, x))
    seen = {w.id: {qualify(x) for x in w.seen_discriminators} for w in workers}
    table = build_error_table(gens, judges, seen, n_samples, seed)
    return workers[rank_generators(table)[0]].id
