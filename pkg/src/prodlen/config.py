"""Configuration dataclasses, YAML loading and config hashing.

A config file is YAML with a ``schema_version`` key and up to four
sections, all optional::

    schema_version: 1
    generator:   {n_prompts: 2500, d: 16, ...}
    train:       {epochs: 200, batch_size: 128, ...}
    experiment:  {scenario: heavy, R_train: 16, ...}
    theory:      {N: 50, d: 5, delta: 0.2, ...}

Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _check_range(name, lo_hi, *, low=None, high=None, low_open=False):
    lo, hi = lo_hi
    if lo > hi:
        raise ConfigError(name, f"range lower bound {lo} exceeds upper bound {hi}")
    for v in (lo, hi):
        if low is not None and (v < low or (low_open and v == low)):
            raise ConfigError(name, f"value {v} below allowed minimum {low}")
        if high is not None and v > high:
            raise ConfigError(name, f"value {v} above allowed maximum {high}")


@dataclass
class GeneratorConfig:
    """Synthetic prompt-conditioned length generator.

    Features are ``phi = feature_scale * g / sqrt(d)`` with ``g`` standard
    normal, projected onto the unit ball.  The body median of prompt ``i`` is
    ``link_a * exp(link_b * link_w . phi_i)``; ``link_w`` defaults to the unit
    vector ``ones(d) / sqrt(d)``.  Per-prompt body sigma, tail weight and tail
    shape are drawn uniformly from their ranges, and the Pareto tail starts at
    ``tail_xmin_ratio * body_median``.
    """

    n_prompts: int = 2500
    d: int = 16
    feature_scale: float = 1.0
    link_a: float = 200.0
    link_b: float = 1.5
    link_w: list[float] | None = None
    body_sigma_range: tuple[float, float] = (0.15, 0.35)
    tail_weight_range: tuple[float, float] = (0.15, 0.15)
    tail_alpha_range: tuple[float, float] = (1.6, 1.6)
    tail_xmin_ratio: float = 0.5
    max_len: int = 8192
    allow_infinite_mean: bool = False
    id_prefix: str = "p"

    def __post_init__(self):
        self.body_sigma_range = tuple(float(x) for x in self.body_sigma_range)
        self.tail_weight_range = tuple(float(x) for x in self.tail_weight_range)
        self.tail_alpha_range = tuple(float(x) for x in self.tail_alpha_range)
        if self.link_w is not None:
            self.link_w = [float(x) for x in self.link_w]

    def validate(self) -> "GeneratorConfig":
        if self.n_prompts < 1:
            raise ConfigError("n_prompts", "must be >= 1")
        if self.d < 1:
            raise ConfigError("d", "must be >= 1")
        if self.feature_scale <= 0:
            raise ConfigError("feature_scale", "must be positive")
        if self.link_a <= 0:
            raise ConfigError("link_a", "must be positive")
        if self.link_w is not None and len(self.link_w) != self.d:
            raise ConfigError("link_w", f"length {len(self.link_w)} does not match d={self.d}")
        _check_range("body_sigma_range", self.body_sigma_range, low=0.0, low_open=True)
        _check_range("tail_weight_range", self.tail_weight_range, low=0.0, high=1.0)
        _check_range("tail_alpha_range", self.tail_alpha_range, low=0.0, low_open=True)
        if not self.allow_infinite_mean and self.tail_alpha_range[0] <= 1.0:
            raise ConfigError(
                "tail_alpha_range",
                "tail_alpha <= 1 gives an infinite-mean tail; set allow_infinite_mean to request it",
            )
        if self.tail_xmin_ratio <= 0:
            raise ConfigError("tail_xmin_ratio", "must be positive")
        if self.max_len < 1:
            raise ConfigError("max_len", "must be >= 1")
        return self


@dataclass
class TrainConfig:
    mode: str = "prod-m"
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    hidden: int = 512

    def validate(self) -> "TrainConfig":
        if self.mode not in ("prod-m", "prod-d", "single-sample"):
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        for name in ("epochs", "batch_size", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", "must be positive")
        return self


@dataclass
class ExperimentConfig:
    scenario: str = "heavy"
    R_train: int = 16
    R_test: int = 16
    K: int = 20
    bin_policy: str = "equal-width"
    temperature_note: str = "0.8"
    trials: int = 8
    test_fraction: float = 0.2
    budget_B: int = 2000
    repeat_grid: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    seed: int = 0
    min_prompts: int = 32

    def validate(self) -> "ExperimentConfig":
        for name in ("R_train", "R_test", "trials", "budget_B", "min_prompts"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.K < 2:
            raise ConfigError("K", "must be >= 2")
        if self.bin_policy not in ("equal-width", "quantile"):
            raise ConfigError("bin_policy", f"unknown policy {self.bin_policy!r}")
        if not self.repeat_grid:
            raise ConfigError("repeat_grid", "must be non-empty")
        for k in self.repeat_grid:
            if not 1 <= k <= self.R_train:
                raise ConfigError("repeat_grid", f"entry {k} outside [1, R_train={self.R_train}]")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction", "must lie in (0, 1)")
        return self


@dataclass
class TheoryConfig:
    N: int = 50
    d: int = 5
    delta: float = 0.2
    lam: float = 1.0
    S: float = 1.0
    n_probes: int = 64
    trials: int = 1000
    r_grid: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    mc_trials: int = 100_000
    potential_streams: int = 100

    def validate(self) -> "TheoryConfig":
        if not 0 < self.delta < 1:
            raise ConfigError("delta", "must lie in (0, 1)")
        for name in ("N", "d", "n_probes", "trials", "mc_trials", "potential_streams"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.mc_trials < 10_000:
            raise ConfigError("mc_trials", "Monte Carlo checks need at least 10000 trials")
        if self.lam <= 0:
            raise ConfigError("lam", "must be positive")
        if self.S <= 0:
            raise ConfigError("S", "must be positive")
        return self


_SECTIONS = {
    "generator": GeneratorConfig,
    "train": TrainConfig,
    "experiment": ExperimentConfig,
    "theory": TheoryConfig,
}


def _build(cls, raw: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown key")
    try:
        return cls(**raw).validate()
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def load_config(path: str | Path | None) -> dict:
    """Load a YAML config file into validated section dataclasses.

    Missing sections get defaults.  ``None`` returns all defaults.
    """
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}, expected {SCHEMA_VERSION}")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    return {name: _build(cls, raw.get(name) or {}, name) for name, cls in _SECTIONS.items()}


def to_plain(obj):
    """Dataclasses/tuples/numpy scalars to JSON-ready builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def config_hash(*objs) -> str:
    payload = json.dumps([to_plain(o) for o in objs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
