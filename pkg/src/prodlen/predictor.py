"""Shared K-bin length classifier.

A two-layer perceptron ``softmax(W2 relu(W1 phi + b1) + b2)`` trained by
cross-entropy against either a one-hot target (median bin, or the bin of
a single sample) or a soft histogram target.  Gradients are written out by
hand.  Scalar predictions come from cumulative-median decoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import TrainConfig, config_hash
from .labelkit import BinGrid
from .rng import stream

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class PredictorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    grid: BinGrid
    loss_log: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h, d = self.W1.shape
        k = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (k, h) or self.b2.shape != (k,):
            raise ValueError("inconsistent parameter shapes")
        if k != self.grid.K:
            raise ValueError(f"output size {k} does not match grid K={self.grid.K}")

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def K(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "PredictorParams":
        return PredictorParams(**{n: a.copy() for n, a in self.arrays().items()}, grid=self.grid,
                               loss_log=list(self.loss_log), meta=dict(self.meta))


@dataclass
class PredictiveDistribution:
    probs: np.ndarray


def init_params(d: int, grid: BinGrid, hidden: int = 512, seed: int = 0) -> PredictorParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
    rng = stream(seed, "init")
    a1, a2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(hidden)
    return PredictorParams(
        W1=rng.uniform(-a1, a1, (hidden, d)),
        b1=rng.uniform(-a1, a1, hidden),
        W2=rng.uniform(-a2, a2, (grid.K, hidden)),
        b2=rng.uniform(-a2, a2, grid.K),
        grid=grid,
    )


def zero_params(d: int, grid: BinGrid, hidden: int = 512) -> PredictorParams:
    return PredictorParams(np.zeros((hidden, d)), np.zeros(hidden), np.zeros((grid.K, hidden)),
                           np.zeros(grid.K), grid)


def _logits(params: PredictorParams, X: np.ndarray):
    Z1 = X @ params.W1.T + params.b1
    H = np.maximum(Z1, 0.0)
    return Z1, H, H @ params.W2.T + params.b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def predict_proba(params: PredictorParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if X.shape[1] != params.d:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model d={params.d}")
    return np.exp(_log_softmax(_logits(params, X)[2]))


def forward(params: PredictorParams, phi) -> PredictiveDistribution:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    return PredictiveDistribution(predict_proba(params, phi[None, :])[0])


def _probs(q) -> np.ndarray:
    return np.asarray(q.probs if isinstance(q, PredictiveDistribution) else q, dtype=np.float64)


def loss_soft(q, hist) -> float:
    """Soft cross-entropy ``-sum p log q``."""
    p = np.asarray(hist, dtype=np.float64)
    qq = _probs(q)
    mask = p > 0
    return float(-(p[mask] * np.log(qq[mask])).sum())


def loss_hard(q, onehot) -> float:
    y = np.asarray(onehot)
    if y.ndim != 1 or np.count_nonzero(y) != 1 or y.max() != 1:
        raise ValueError("onehot target must hold exactly one 1")
    return loss_soft(q, y)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def batch_loss_and_grads(params: PredictorParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its exact gradients."""
    n = X.shape[0]
    Z1, H, Z2 = _logits(params, X)
    logq = _log_softmax(Z2)
    loss = float(-(Y * logq).sum() / n)
    # d loss / d logits = q * sum(y) - y; targets sum to 1
    dZ2 = (np.exp(logq) * Y.sum(axis=1, keepdims=True) - Y) / n
    dH = dZ2 @ params.W2
    dZ1 = dH * (Z1 > 0)
    grads = {
        "W2": dZ2.T @ H,
        "b2": dZ2.sum(axis=0),
        "W1": dZ1.T @ X,
        "b1": dZ1.sum(axis=0),
    }
    return loss, grads


def gradients(params: PredictorParams, phi, target, mode: str = "prod-d") -> dict:
    """Exact gradients of the selected loss for one example."""
    target = np.asarray(target, dtype=np.float64)
    if mode in ("prod-m", "single-sample", "hard"):
        if np.count_nonzero(target) != 1 or target.max() != 1:
            raise ValueError(f"{mode} expects a one-hot target")
    elif mode not in ("prod-d", "soft"):
        raise ValueError(f"unknown mode {mode!r}")
    phi = np.asarray(phi, dtype=np.float64)
    return batch_loss_and_grads(params, phi[None, :], target[None, :])[1]


def example_loss(params: PredictorParams, phi, target) -> float:
    return loss_soft(forward(params, phi), target)


class _Adam:
    def __init__(self, params: PredictorParams, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {n: np.zeros_like(a) for n, a in params.arrays().items()}
        self.v = {n: np.zeros_like(a) for n, a in params.arrays().items()}
        self.t = 0

    def step(self, params: PredictorParams, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n in PARAM_NAMES:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            getattr(params, n)[...] -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


class _SGD:
    def __init__(self, params: PredictorParams, lr: float):
        self.lr = lr

    def step(self, params: PredictorParams, grads: dict):
        for n in PARAM_NAMES:
            getattr(params, n)[...] -= self.lr * grads[n]


def train(phis, targets, grid: BinGrid, cfg: TrainConfig | None = None) -> PredictorParams:
    """Mini-batch training on ``(phis, targets)``.

    ``targets`` is an ``(n, K)`` matrix: one-hot rows for ``prod-m`` and
    ``single-sample``, histogram rows for ``prod-d``.  Shuffling and
    initialization derive from ``cfg.seed`` only, so identical inputs give a
    bit-identical ``loss_log`` (mean training loss per epoch).
    """
    cfg = (cfg or TrainConfig()).validate()
    X = np.asarray(phis, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if Y.shape != (X.shape[0], grid.K):
        raise ValueError(f"targets must have shape ({X.shape[0]}, {grid.K}), got {Y.shape}")
    if cfg.mode in ("prod-m", "single-sample") and not np.all((Y == 0) | (Y == 1)):
        raise ValueError(f"{cfg.mode} training needs one-hot targets")
    if np.any(Y < 0) or np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("target rows must be distributions")

    params = init_params(X.shape[1], grid, cfg.hidden, cfg.seed)
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    rng = stream(cfg.seed, "shuffle")
    n = X.shape[0]
    log = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = batch_loss_and_grads(params, X[idx], Y[idx])
            total += loss * idx.size
            opt.step(params, grads)
        log.append(total / n)
    params.loss_log = log
    params.meta = {"train_config": cfg.__dict__.copy(), "config_hash": config_hash(cfg), "n_train": n}
    return params


def decode_median(q, grid: BinGrid) -> float:
    """Scalar length where cumulative mass first reaches 0.5, linearly interpolated."""
    p = _probs(q)
    if p.shape[-1] != grid.K:
        raise ValueError("distribution size does not match the grid")
    return float(_kernels.decode_median_rows(p[None, :], grid.left, grid.decode_width)[0])


def decode_medians(probs: np.ndarray, grid: BinGrid) -> np.ndarray:
    return _kernels.decode_median_rows(np.atleast_2d(probs), grid.left, grid.decode_width)


def predict_lengths(params: PredictorParams, X) -> np.ndarray:
    return decode_medians(predict_proba(params, X), params.grid)


def save_params(params: PredictorParams, path) -> Path:
    """Write an ``.npz`` archive whose ``header`` entry is a JSON string."""
    path = Path(path)
    header = {
        "format": "prodlen-mlp/1",
        "shapes": {n: list(a.shape) for n, a in params.arrays().items()},
        "grid": params.grid.to_dict(),
        "loss_log": [repr(float(x)) for x in params.loss_log],
        "meta": params.meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **params.arrays())
    return path


def load_params(path) -> PredictorParams:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        arrays = {n: z[n].copy() for n in PARAM_NAMES}
    for n, shape in header["shapes"].items():
        if list(arrays[n].shape) != shape:
            raise ValueError(f"array {n} has shape {arrays[n].shape}, header says {shape}")
    return PredictorParams(**arrays, grid=BinGrid.from_dict(header["grid"]),
                           loss_log=[float(x) for x in header["loss_log"]], meta=header["meta"])
