"""Experiment configuration: sectioned INI files with typed, validated keys.

Every key has a default, so an empty file is a valid single-section run.
Unknown sections and keys are rejected before any compute happens.  Worker
override blocks are sections named ``worker.<k>`` holding a subset of the
``[gan]`` keys.

Example::

    [run]
    name = gap4
    seed = 1

    [data]
    kind = mog
    n = 2500

    [gap]
    n_workers = 4
    total_updates = 3000
    swap_every = 1epoch

    [worker.1]
    prior = normal
    lr_g = 1e-3
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .datasets import NoiseSchedule
from .game import PriorKind, WorkerConfig
from .orchestrator import ConfigError, GapConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _dims(s: str) -> tuple[int, ...]:
    dims = tuple(int(p) for p in s.replace(" ", "").split(",") if p)
    if not dims or min(dims) < 1:
        raise ValueError(f"expected comma-separated positive widths, got {s!r}")
    return dims


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.replace(" ", "").split(",") if p)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.replace(" ", "").split(",") if p)


def _opt_str(s: str) -> str | None:
    return s.strip() or None


@dataclass(frozen=True)
class SwapSpec:
    """``every_k_updates(K)``, ``every_epoch_fraction(f)`` or disabled."""
    updates: int | None = None
    epochs: float | None = None

    @classmethod
    def parse(cls, text: str) -> "SwapSpec":
        t = text.strip().lower()
        if t in ("", "none", "off", "never"):
            return cls()
        m = re.fullmatch(r"(\d+)\s*(upd|updates?)?", t)
        if m:
            return cls(updates=int(m.group(1)))
        m = re.fullmatch(r"([0-9]*\.?[0-9]+(?:e-?\d+)?)\s*(epochs?|ep)", t)
        if m:
            return cls(epochs=float(m.group(1)))
        raise ValueError(f"swap interval must look like '50upd', '0.5epoch' or 'none', got {text!r}")

    def __str__(self) -> str:
        if self.updates is not None:
            return f"{self.updates}upd"
        if self.epochs is not None:
            return f"{self.epochs:g}epoch"
        return "none"


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"name": (str, "run"), "seed": (int, 0)},
    "data": {
        "kind": (str, "mog"),  # mog | r15 | r15-like
        "n": (int, 2500),
        "component_std": (float, 0.05),
        "path": (_opt_str, None),
        "subset": (int, 0),  # 0 keeps every point
        "cluster_std": (float, 0.35),
        "data_seed": (int, 0),
    },
    "gap": {
        "n_workers": (int, 4),
        "total_updates": (int, 1000),
        "swap_every": (SwapSpec.parse, SwapSpec(epochs=1.0)),
        "batch_size": (int, 64),
        "val_fraction": (float, 0.2),
        "eval_every": (int, 0),  # 0 means once per epoch
        "diversify_priors": (_bool, True),
    },
    "gan": {
        "prior": (PriorKind, PriorKind.UNIFORM),
        "prior_dim": (int, 8),
        "g_hidden": (_dims, (128, 128, 128)),
        "d_hidden": (_dims, (128, 128, 128)),
        "lr_g": (float, 2e-4),
        "lr_d": (float, 2e-4),
        "beta1": (float, 0.5),
        "beta2": (float, 0.999),
        "clip_norm": (float, 1.0),
        "noise_sigma0": (float, 0.1),
        "noise_decay_until": (float, 0.5),
    },
    "eval": {
        "n_samples": (int, 2000),
        "coverage_samples": (int, 2000),
        "radius_multiplier": (float, 3.0),
        "min_count": (int, 20),
        "tail_fraction": (float, 0.5),
    },
    "sweep": {
        "frequencies": (_floats, (0.1, 0.3, 0.5, 0.7, 1.0)),
        "seeds": (_ints, (0, 1, 2)),
    },
}

_WORKER_SECTION = re.compile(r"worker\.(\d+)$")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    worker_overrides: dict[int, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def name(self) -> str:
        return self.values["run"]["name"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def with_updates(self, updates: dict[str, str]) -> "ExperimentConfig":
        """Copy with ``section.key -> text`` assignments applied and validated."""
        values = {s: dict(v) for s, v in self.values.items()}
        overrides = {k: dict(v) for k, v in self.worker_overrides.items()}
        for dotted, text in updates.items():
            section, _, key = dotted.rpartition(".")
            m = _WORKER_SECTION.match(section)
            if m:
                overrides.setdefault(int(m.group(1)), {})[key] = _parse_value("gan", key, text, section)
            else:
                values.setdefault(section, {})
                values[section][key] = _parse_value(section, key, text, section)
        cfg = ExperimentConfig(values, overrides)
        cfg.validate()
        return cfg

    # --- derived objects -------------------------------------------------

    def worker_config(self, gan: dict[str, Any] | None = None) -> WorkerConfig:
        g = dict(self.values["gan"], **(gan or {}))
        return WorkerConfig(prior=g["prior"], prior_dim=g["prior_dim"], g_hidden=g["g_hidden"],
                            d_hidden=g["d_hidden"], lr_g=g["lr_g"], lr_d=g["lr_d"], beta1=g["beta1"],
                            beta2=g["beta2"], clip_norm=g["clip_norm"],
                            noise=NoiseSchedule(g["noise_sigma0"], g["noise_decay_until"]))

    def gap_config(self) -> GapConfig:
        gap = self.values["gap"]
        swap: SwapSpec = gap["swap_every"]
        n = gap["n_workers"]
        base = self.worker_config()
        overrides = []
        for k in range(n):
            o = self.worker_overrides.get(k, {})
            full = self.worker_config(o)
            names = {_FIELD_FOR_KEY.get(key, key) for key in o}
            overrides.append({f: getattr(full, f) for f in sorted(names)})
        return GapConfig(n_workers=n, total_updates=gap["total_updates"], swap_every=swap.updates,
                         swap_every_epochs=swap.epochs, seed=self.seed, batch_size=gap["batch_size"],
                         val_fraction=gap["val_fraction"], eval_every=gap["eval_every"] or None,
                         worker=base, overrides=overrides, diversify_priors=gap["diversify_priors"])

    def validate(self) -> None:
        for section, keys in self.values.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key in keys:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
        d = self.values["data"]
        if d["kind"] not in ("mog", "r15", "r15-like"):
            raise ConfigError(f"data.kind must be mog, r15 or r15-like, got {d['kind']!r}")
        if d["kind"] == "r15" and not d["path"]:
            raise ConfigError("data.kind = r15 needs data.path")
        if d["subset"] < 0:
            raise ConfigError("data.subset must be >= 0")
        if d["component_std"] < 0 or d["cluster_std"] < 0:
            raise ConfigError("cluster standard deviations must be >= 0")
        for k in self.worker_overrides:
            if k >= self.values["gap"]["n_workers"]:
                raise ConfigError(f"[worker.{k}] refers to a worker outside 0..n_workers-1")
        e = self.values["eval"]
        if e["n_samples"] < 1 or e["coverage_samples"] < 1 or e["min_count"] < 0:
            raise ConfigError("eval sample counts must be positive")
        if e["radius_multiplier"] <= 0 or not 0 < e["tail_fraction"] <= 1:
            raise ConfigError("eval.radius_multiplier must be > 0 and eval.tail_fraction in (0, 1]")
        try:
            self.gap_config().validate()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    # --- text form -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section in SCHEMA:
            cp[section] = {k: _format(v) for k, v in self.values[section].items()}
        for k in sorted(self.worker_overrides):
            cp[f"worker.{k}"] = {kk: _format(v) for kk, v in self.worker_overrides[k].items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_FIELD_FOR_KEY = {"noise_sigma0": "noise", "noise_decay_until": "noise"}


def _format(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, PriorKind):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _parse_value(section: str, key: str, text: str, where: str | None = None) -> Any:
    where = where or section
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{where}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {where}.{key}")
    parser, _ = SCHEMA[section][key]
    try:
        return parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, origin: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    updates = {}
    for section in cp.sections():
        if section not in SCHEMA and not _WORKER_SECTION.match(section):
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, value in cp[section].items():
            updates[f"{section}.{key}"] = value
    return defaults().with_updates(updates)


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    if path is None:
        cfg = defaults()
    else:
        cfg = parse_config(Path(path).read_text(), str(path))
    return cfg.with_updates(overrides or {}) if overrides else cfg


def parse_assignments(items: list[str]) -> dict[str, str]:
    """``["gap.n_workers=2", ...]`` to a dict; rejects malformed entries."""
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def with_swap(cfg: ExperimentConfig, spec: SwapSpec) -> ExperimentConfig:
    values = {s: dict(v) for s, v in cfg.values.items()}
    values["gap"]["swap_every"] = spec
    out = replace(cfg, values=values)
    out.validate()
    return out
