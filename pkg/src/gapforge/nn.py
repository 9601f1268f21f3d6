"""Dense MLP engine with hand-derived gradients.

Tensors are float64 numpy arrays.  Inputs are row-major ``(batch, features)``
matrices; weights are stored ``(out_dim, in_dim)`` so a layer computes
``x @ W.T + b``.

A batch-normalized layer applies ``linear -> batchnorm -> activation``.  Its
bias ``b`` is shadowed by the batchnorm shift ``beta`` and is kept frozen at
zero: it is stored in checkpoints but is not a trainable tensor.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

CKPT_MAGIC = b"GAPCKPT1"
CKPT_VERSION = 1


class Activation(IntEnum):
    IDENTITY = 0
    RELU = 1
    # raw logit output; the sigmoid is fused into the losses
    SIGMOID_LOGIT = 2


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_batchnorm: bool = False
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass
class Layer:
    spec: LayerSpec
    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    def trainable(self) -> list[np.ndarray]:
        if self.spec.has_batchnorm:
            return [self.W, self.gamma, self.beta]
        return [self.W, self.b]

    def tensors(self) -> list[np.ndarray]:
        return [self.W, self.b, self.gamma, self.beta, self.running_mean, self.running_var]


@dataclass
class ModelParams:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.spec.out_dim != b.spec.in_dim:
                raise ValueError(f"layer dims do not chain: {a.spec.out_dim} -> {b.spec.in_dim}")

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    def trainable(self) -> list[np.ndarray]:
        """Trainable tensors in canonical order; GradStores follow this order."""
        return [t for layer in self.layers for t in layer.trainable()]

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator, weight_std: float = 0.02) -> ModelParams:
    """Weights ~ N(0, weight_std^2) (DCGAN convention), zero biases, identity batchnorm."""
    layers = []
    for s in specs:
        W = rng.standard_normal((s.out_dim, s.in_dim)) * weight_std
        layers.append(Layer(
            spec=s,
            W=W,
            b=np.zeros(s.out_dim),
            gamma=np.ones(s.out_dim),
            beta=np.zeros(s.out_dim),
            running_mean=np.zeros(s.out_dim),
            running_var=np.ones(s.out_dim),
        ))
    return ModelParams(layers)


def mlp_specs(in_dim: int, hidden: Sequence[int], out_dim: int, out_activation=Activation.IDENTITY) -> list[LayerSpec]:
    """Every hidden layer is batch-normalized ReLU; the output layer is plain linear."""
    dims = [in_dim, *hidden, out_dim]
    specs = [LayerSpec(dims[i], dims[i + 1], has_batchnorm=True, activation=Activation.RELU)
             for i in range(len(dims) - 2)]
    specs.append(LayerSpec(dims[-2], dims[-1], False, out_activation))
    return specs


@dataclass
class _LayerCache:
    x: np.ndarray
    z: np.ndarray  # linear output
    a: np.ndarray  # pre-activation (post batchnorm)
    xhat: np.ndarray | None = None
    invstd: np.ndarray | None = None
    batch_mean: np.ndarray | None = None
    batch_var: np.ndarray | None = None


@dataclass
class ForwardCache:
    train: bool
    layers: list[_LayerCache]
    out_shape: tuple


def mlp_forward(params: ModelParams, x: np.ndarray, train: bool = True) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass.

    In train mode batchnorm uses batch statistics (biased variance) and needs
    a batch of at least 2; in eval mode it uses the running statistics.
    Running statistics are never touched here, see ``update_running_stats``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"expected input with {params.in_dim} columns, got shape {x.shape}")
    if train and x.shape[0] < 2 and any(s.has_batchnorm for s in params.specs):
        raise ValueError("train-mode batchnorm needs a batch of at least 2")
    caches = []
    h = x
    for layer in params.layers:
        s = layer.spec
        z = h @ layer.W.T
        c = _LayerCache(x=h, z=z, a=z)
        if s.has_batchnorm:
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                c.batch_mean, c.batch_var = mean, var
            else:
                mean, var = layer.running_mean, layer.running_var
            c.invstd = 1.0 / np.sqrt(var + BN_EPS)
            c.xhat = (z - mean) * c.invstd
            c.a = c.xhat * layer.gamma + layer.beta
        else:
            c.a = z + layer.b
        h = np.maximum(c.a, 0.0) if s.activation == Activation.RELU else c.a
        caches.append(c)
    return h, ForwardCache(train, caches, h.shape)


def mlp_backward(params: ModelParams, cache: ForwardCache, grad_out: np.ndarray,
                 param_grads: bool = True, input_grad: bool = True) -> tuple[list[np.ndarray] | None, np.ndarray | None]:
    """Backpropagate ``grad_out`` = dL/dy; returns (grads, dL/dx).

    ``grads`` is aligned with ``params.trainable()``.  Either output can be
    skipped (returned as None) to save the matrix products it needs.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.out_shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != forward output shape {cache.out_shape}")
    if len(cache.layers) != len(params.layers):
        raise ValueError("cache does not belong to these params")
    per_layer = []
    g = grad_out
    last = len(params.layers) - 1
    for depth, (layer, c) in enumerate(zip(reversed(params.layers), reversed(cache.layers))):
        s = layer.spec
        if s.activation == Activation.RELU:
            g = g * (c.a > 0)
        if s.has_batchnorm:
            dxhat = g * layer.gamma
            if cache.train:
                n = g.shape[0]
                dz = (c.invstd / n) * (n * dxhat - dxhat.sum(axis=0) - c.xhat * (dxhat * c.xhat).sum(axis=0))
            else:
                dz = dxhat * c.invstd
            if param_grads:
                per_layer.append([dz.T @ c.x, (g * c.xhat).sum(axis=0), g.sum(axis=0)])
        else:
            dz = g
            if param_grads:
                per_layer.append([dz.T @ c.x, dz.sum(axis=0)])
        if depth < last or input_grad:
            g = dz @ layer.W
    grads = [t for lg in reversed(per_layer) for t in lg] if param_grads else None
    return grads, (g if input_grad else None)


def update_running_stats(params: ModelParams, cache: ForwardCache, momentum: float = BN_MOMENTUM) -> None:
    """Fold the batch statistics of a train-mode pass into the running stats (in place)."""
    if not cache.train:
        raise ValueError("running stats can only be updated from a train-mode pass")
    for layer, c in zip(params.layers, cache.layers):
        if layer.spec.has_batchnorm:
            n = c.z.shape[0]
            layer.running_mean[:] = momentum * layer.running_mean + (1 - momentum) * c.batch_mean
            layer.running_var[:] = momentum * layer.running_var + (1 - momentum) * c.batch_var * n / (n - 1)


def log_sigmoid(a: np.ndarray) -> np.ndarray:
    """log(sigmoid(a)) = -softplus(-a), finite for every finite a."""
    a = np.asarray(a, dtype=np.float64)
    return np.minimum(a, 0.0) - np.log1p(np.exp(-np.abs(a)))


def sigmoid(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient")
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return [g.copy() for g in grads]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    @classmethod
    def zeros_like(cls, params: ModelParams, **hyper) -> "AdamState":
        tensors = params.trainable()
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors], **hyper)


def adam_step(params: ModelParams, grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to params and state."""
    tensors = params.trainable()
    if len(tensors) != len(grads) or any(t.shape != g.shape for t, g in zip(tensors, grads)):
        raise ValueError("gradient store does not match parameter shapes")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(
    params: ModelParams,
    loss_and_grads: Callable[[ModelParams], tuple[float, list[np.ndarray]]],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grads(params)`` must be deterministic and return the loss and
    gradients aligned with ``params.trainable()``.  The relative error of a
    component is ``|analytic - numeric| / max(|analytic|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    probe = params.copy()
    loss, analytic = loss_and_grads(probe)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    worst = 0.0
    for tensor, grad in zip(probe.trainable(), analytic):
        flat = tensor.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_and_grads(probe)[0]
            flat[i] = orig - h
            lm = loss_and_grads(probe)[0]
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError("non-finite loss")
            numeric = (lp - lm) / (2 * h)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), 1e-8)
            worst = max(worst, err)
    return worst


def serialize_params(params: ModelParams) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(params.layers))]
    for layer in params.layers:
        s = layer.spec
        flags = int(s.has_batchnorm) | (int(s.activation) << 1)
        parts.append(struct.pack("<III", s.in_dim, s.out_dim, flags))
    for layer in params.layers:
        for t in layer.tensors():
            parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize_params(data: bytes) -> ModelParams:
    data = bytes(data)
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint header")
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 16
    if len(data) < offset + 12 * n_layers:
        raise CheckpointError("truncated layer headers")
    specs = []
    for _ in range(n_layers):
        in_dim, out_dim, flags = struct.unpack_from("<III", data, offset)
        offset += 12
        try:
            specs.append(LayerSpec(in_dim, out_dim, bool(flags & 1), Activation((flags >> 1) & 3)))
        except ValueError as exc:
            raise CheckpointError(f"bad layer header: {exc}") from exc
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise CheckpointError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
    expected = offset + 8 * sum(s.out_dim * s.in_dim + 5 * s.out_dim for s in specs)
    if len(data) < expected:
        raise CheckpointError(f"truncated payload: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise CheckpointError(f"trailing bytes after payload: {len(data) - expected}")

    def take(count, shape):
        nonlocal offset
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        return arr

    layers = []
    for s in specs:
        W = take(s.out_dim * s.in_dim, (s.out_dim, s.in_dim))
        vecs = [take(s.out_dim, (s.out_dim,)) for _ in range(5)]
        layers.append(Layer(s, W, *vecs))
    return ModelParams(layers)
