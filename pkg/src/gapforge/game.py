"""The generator/discriminator game: priors, losses, and one alternating update."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import nn
from .datasets import NoiseSchedule
from .rng import STREAM_INIT, STREAM_TRAIN, worker_stream

DATA_DIM = 2


class PriorKind(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


@dataclass(frozen=True)
class Prior:
    kind: PriorKind = PriorKind.UNIFORM
    dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.dim < 1:
            raise ValueError("prior dim must be >= 1")


def sample_prior(prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if prior.kind == PriorKind.UNIFORM:
        # open interval: Generator.uniform is [low, high), reject the -1 endpoint
        z = rng.uniform(-1.0, 1.0, size=(n, prior.dim))
        while np.any(z == -1.0):
            z[z == -1.0] = rng.uniform(-1.0, 1.0, size=int(np.sum(z == -1.0)))
        return z
    return rng.standard_normal((n, prior.dim))


class NonFiniteLossError(FloatingPointError):
    def __init__(self, worker_id: int, update: int, which: str):
        super().__init__(f"non-finite {which} loss at worker {worker_id}, update {update}")
        self.worker_id = worker_id
        self.update = update


@dataclass
class WorkerConfig:
    """Per-worker hyperparameters; every field may be overridden per worker."""
    prior: PriorKind = PriorKind.UNIFORM
    prior_dim: int = 8
    g_hidden: tuple[int, ...] = (128, 128, 128)
    d_hidden: tuple[int, ...] = (128, 128, 128)
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    clip_norm: float = 1.0
    noise: NoiseSchedule = field(default_factory=NoiseSchedule)


@dataclass
class StepMetrics:
    worker: int
    update: int
    d_loss: float
    g_loss: float
    d_real_acc: float
    d_fake_acc: float

    def as_dict(self) -> dict:
        return {"worker": self.worker, "update": self.update, "d_loss": self.d_loss,
                "g_loss": self.g_loss, "d_real_acc": self.d_real_acc, "d_fake_acc": self.d_fake_acc}


@dataclass
class GanWorker:
    id: int
    generator: nn.ModelParams
    discriminator: nn.ModelParams
    g_opt: nn.AdamState
    d_opt: nn.AdamState
    prior: Prior
    noise_schedule: NoiseSchedule
    rng: np.random.Generator
    d_lineage: int
    seen_discriminators: set[int]
    clip_norm: float = 1.0
    updates: int = 0


def make_worker(worker_id: int, cfg: WorkerConfig, seed: int) -> GanWorker:
    """Fresh worker; its discriminator lineage id is its own worker id."""
    init = worker_stream(seed, worker_id, STREAM_INIT).generator()
    g = nn.init_params(nn.mlp_specs(cfg.prior_dim, cfg.g_hidden, DATA_DIM), init)
    d = nn.init_params(nn.mlp_specs(DATA_DIM, cfg.d_hidden, 1, nn.Activation.SIGMOID_LOGIT), init)
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2)
    return GanWorker(
        id=worker_id,
        generator=g,
        discriminator=d,
        g_opt=nn.AdamState.zeros_like(g, lr=cfg.lr_g, **hyper),
        d_opt=nn.AdamState.zeros_like(d, lr=cfg.lr_d, **hyper),
        prior=Prior(cfg.prior, cfg.prior_dim),
        noise_schedule=cfg.noise,
        rng=worker_stream(seed, worker_id, STREAM_TRAIN).generator(),
        d_lineage=worker_id,
        seen_discriminators={worker_id},
        clip_norm=cfg.clip_norm,
    )


def _check_data(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != DATA_DIM or len(x) == 0:
        raise ValueError(f"{what} must be a nonempty (n, {DATA_DIM}) matrix, got {x.shape}")
    return x


def d_loss_terms(discriminator: nn.ModelParams, x_real: np.ndarray, x_fake: np.ndarray, train: bool = True):
    """Discriminator loss, gradients, forward cache and logits.

    Real and fake rows share one forward pass, so train-mode batchnorm
    normalizes over the mixed batch.
    """
    x_real = _check_data(x_real, "x_real")
    x_fake = _check_data(x_fake, "x_fake")
    nr, nf = len(x_real), len(x_fake)
    logits, cache = nn.mlp_forward(discriminator, np.vstack([x_real, x_fake]), train=train)
    a_real, a_fake = logits[:nr, 0], logits[nr:, 0]
    loss = -(nn.log_sigmoid(a_real).mean() + nn.log_sigmoid(-a_fake).mean())
    grad = np.empty_like(logits)
    grad[:nr, 0] = -nn.sigmoid(-a_real) / nr
    grad[nr:, 0] = nn.sigmoid(a_fake) / nf
    grads, _ = nn.mlp_backward(discriminator, cache, grad, input_grad=False)
    return float(loss), grads, cache, a_real, a_fake


def d_loss_and_grads(worker: GanWorker, x_real: np.ndarray, x_fake: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Negated minimax value -(E log D(x) + E log(1 - D(G(z)))) and its discriminator gradients."""
    loss, grads, *_ = d_loss_terms(worker.discriminator, x_real, x_fake)
    return loss, grads


def g_loss_terms(generator: nn.ModelParams, discriminator: nn.ModelParams, z: np.ndarray,
                 noise: np.ndarray | None = None):
    """Non-saturating generator loss -E log D(G(z)).

    The generator runs in train mode; the discriminator is a frozen function
    in eval mode (running batchnorm statistics) and is never modified.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != generator.in_dim:
        raise ValueError(f"z must have {generator.in_dim} columns, got shape {z.shape}")
    x_fake, g_cache = nn.mlp_forward(generator, z, train=True)
    x_in = x_fake if noise is None else x_fake + noise
    logits, d_cache = nn.mlp_forward(discriminator, x_in, train=False)
    a = logits[:, 0]
    loss = -nn.log_sigmoid(a).mean()
    grad = (-nn.sigmoid(-a) / len(a))[:, None]
    _, grad_x = nn.mlp_backward(discriminator, d_cache, grad, param_grads=False)
    grads, _ = nn.mlp_backward(generator, g_cache, grad_x, input_grad=False)
    return float(loss), grads, g_cache, a


def g_loss_and_grads(worker: GanWorker, z: np.ndarray) -> tuple[float, list[np.ndarray]]:
    loss, grads, *_ = g_loss_terms(worker.generator, worker.discriminator, z)
    return loss, grads


def sample_generator(generator: nn.ModelParams, prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Eval-mode samples G(z)."""
    return nn.mlp_forward(generator, sample_prior(prior, n, rng), train=False)[0]


def train_update(worker: GanWorker, real_batch: np.ndarray, noise_sigma: float) -> StepMetrics:
    """One discriminator step then one generator step; mutates ``worker`` in place.

    Gaussian noise of scale ``noise_sigma`` is added to every discriminator
    input (real and fake).  Both gradient sets are clipped before Adam.
    """
    real_batch = _check_data(real_batch, "real_batch")
    n = len(real_batch)
    if n < 2:
        raise ValueError("batch size must be >= 2")
    rng = worker.rng
    t = worker.updates

    z = sample_prior(worker.prior, n, rng)
    x_fake = nn.mlp_forward(worker.generator, z, train=True)[0]
    if noise_sigma > 0:
        x_real_in = real_batch + noise_sigma * rng.standard_normal(real_batch.shape)
        x_fake_in = x_fake + noise_sigma * rng.standard_normal(x_fake.shape)
    else:
        x_real_in, x_fake_in = real_batch, x_fake
    d_loss, d_grads, d_cache, a_real, a_fake = d_loss_terms(worker.discriminator, x_real_in, x_fake_in)
    if not np.isfinite(d_loss):
        raise NonFiniteLossError(worker.id, t, "discriminator")
    d_grads = nn.clip_grad_norm(d_grads, worker.clip_norm)
    nn.adam_step(worker.discriminator, d_grads, worker.d_opt)
    nn.update_running_stats(worker.discriminator, d_cache)

    z = sample_prior(worker.prior, n, rng)
    noise = noise_sigma * rng.standard_normal((n, DATA_DIM)) if noise_sigma > 0 else None
    g_loss, g_grads, g_cache, _ = g_loss_terms(worker.generator, worker.discriminator, z, noise)
    if not np.isfinite(g_loss):
        raise NonFiniteLossError(worker.id, t, "generator")
    g_grads = nn.clip_grad_norm(g_grads, worker.clip_norm)
    nn.adam_step(worker.generator, g_grads, worker.g_opt)
    nn.update_running_stats(worker.generator, g_cache)

    worker.updates += 1
    return StepMetrics(worker.id, t, d_loss, g_loss,
                       float(np.mean(a_real >= 0)), float(np.mean(a_fake < 0)))


def eval_d_cost(worker: GanWorker, data: np.ndarray, rng: np.random.Generator) -> float:
    """Discriminator cost on ``data`` against an equal-size fake batch, all in eval mode."""
    data = _check_data(data, "data")
    fake = sample_generator(worker.generator, worker.prior, len(data), rng)
    logits = nn.mlp_forward(worker.discriminator, np.vstack([data, fake]), train=False)[0][:, 0]
    n = len(data)
    return float(-(nn.log_sigmoid(logits[:n]).mean() + nn.log_sigmoid(-logits[n:]).mean()))


def disc_logits(discriminator: nn.ModelParams, x: np.ndarray) -> np.ndarray:
    return nn.mlp_forward(discriminator, _check_data(x, "x"), train=False)[0][:, 0]


def worker_configs(base: WorkerConfig, n: int, overrides: Sequence[dict] | None = None) -> list[WorkerConfig]:
    overrides = list(overrides or [])
    out = []
    for k in range(n):
        extra = overrides[k] if k < len(overrides) else {}
        out.append(replace(base, **extra))
    return out
