"""Linear ridge surrogate on repeated-sampling median labels.

Lengths follow ``L = phi . theta_star + eta`` with symmetric,
``(1+epsilon)``-moment-bounded noise.  Each prompt contributes the median of
``r`` noisy lengths; a ridge fit on those medians is compared against the
confidence width ``beta_N * ||phi||_{V^-1}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .labelkit import sample_medians
from .lengthdist import SurrogateNoiseModel, draw_features
from .rng import derive_seed, stream


@dataclass
class RidgeEstimate:
    lam: float
    V: np.ndarray
    theta_hat: np.ndarray
    N: int
    b: np.ndarray = field(repr=False)
    _chol: tuple = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.V.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._chol is None:
            self._chol = linalg.cho_factor(self.V, lower=True)
        return linalg.cho_solve(self._chol, rhs)

    def residual(self) -> float:
        """``||V theta_hat - sum L phi||_2``."""
        return float(np.linalg.norm(self.V @ self.theta_hat - self.b))


@dataclass
class BoundParams:
    epsilon: float
    v: float
    delta: float
    S: float
    d: int
    N: int
    r: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.v <= 0 or self.S <= 0:
            raise ValueError("v and S must be positive")
        if self.d < 1 or self.N < 1 or self.r < 1:
            raise ValueError("d, N and r must be >= 1")


def ridge_fit(phis, labels, lam: float) -> RidgeEstimate:
    """Minimize ``lam ||theta||^2 + sum (phi_i . theta - L_i)^2`` by Cholesky."""
    X = np.atleast_2d(np.asarray(phis, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if X.shape[0] < 1:
        raise ValueError("need at least one observation")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    d = X.shape[1]
    V = lam * np.eye(d) + X.T @ X
    b = X.T @ y
    chol = linalg.cho_factor(V, lower=True)
    theta = linalg.cho_solve(chol, b)
    return RidgeEstimate(lam=float(lam), V=V, theta_hat=theta, N=X.shape[0], b=b, _chol=chol)


def uncertainty(est: RidgeEstimate, phi) -> np.ndarray | float:
    """Self-normalized norm ``sqrt(phi' V^-1 phi)``; rows of a 2-D input are handled jointly."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        return float(math.sqrt(max(0.0, phi @ est.solve(phi))))
    q = np.einsum("ij,ji->i", phi, est.solve(phi.T))
    return np.sqrt(np.maximum(q, 0.0))


def c_const(epsilon: float, v: float) -> float:
    return (4.0 * v) ** (1.0 / (1.0 + epsilon))


def rho_value(epsilon: float, v: float, N: int, delta: float) -> float:
    C = c_const(epsilon, v)
    return 2.0 * C * math.log(8.0 * N / delta) + 4.0 * C ** (-epsilon) * v


def rho_delta(p: BoundParams) -> float:
    return rho_value(p.epsilon, p.v, p.N, p.delta)


def beta_n(p: BoundParams, lam: float) -> float:
    """Confidence width multiplying ``||phi||_{V_N^-1}``."""
    C = c_const(p.epsilon, p.v)
    rho = rho_delta(p)
    growth = p.N ** ((1.0 - p.epsilon) / (1.0 + p.epsilon))
    inner = rho**2 * growth + 2.0 * C * rho * p.d * growth * math.log(1.0 + p.N / (lam * p.d))
    return math.sqrt(inner) + math.sqrt(lam) * p.S


def failure_budget(N: int, r: int, delta: float) -> float:
    """Failure probability ``delta + 4 N exp(-r/8)`` of the ridge bound."""
    return delta + 4.0 * N * math.exp(-r / 8.0)


def repeats_threshold(N: int, delta: float) -> float:
    """Smallest ``r`` for which the failure budget is at most ``2 delta``."""
    return 8.0 * math.log(4.0 * N / delta)


@dataclass
class SurrogateConfig:
    d: int = 5
    N: int = 50
    r: int = 16
    lam: float = 1.0
    S: float = 1.0
    delta: float = 0.2
    n_probes: int = 64
    noise: SurrogateNoiseModel = None
    theta_star: np.ndarray | None = None

    def __post_init__(self):
        if self.noise is None:
            self.noise = SurrogateNoiseModel.uniform(scale=1.0, epsilon=1.0)

    def bound_params(self) -> BoundParams:
        return BoundParams(self.noise.epsilon, self.noise.v, self.delta, self.S, self.d, self.N, self.r)


@dataclass
class TrialRecord:
    seed: int
    N: int
    r: int
    lam: float
    beta: float
    errors: np.ndarray
    bounds: np.ndarray

    @property
    def violated(self) -> np.ndarray:
        return self.errors > self.bounds

    @property
    def any_violation(self) -> bool:
        return bool(self.violated.any())

    def rows(self):
        for j, (e, b, v) in enumerate(zip(self.errors, self.bounds, self.violated)):
            yield {
                "seed": self.seed,
                "N": self.N,
                "r": self.r,
                "lambda": repr(self.lam),
                "probe_idx": j,
                "err": repr(float(e)),
                "bound": repr(float(b)),
                "violated": int(v),
            }


def draw_theta_star(seed: int, d: int, S: float) -> np.ndarray:
    u = stream(seed, "theta-star").standard_normal(d)
    return S * u / np.linalg.norm(u)


def surrogate_trial(config: SurrogateConfig, seed: int) -> TrialRecord:
    """One synthetic ridge fit on median labels, checked on fresh probes.

    Features, ``theta_star`` and probes depend only on ``seed``; noise
    depends on ``(seed, r)``, so runs differing only in ``r`` share a design.
    """
    d, N, r = config.d, config.N, config.r
    theta = config.theta_star if config.theta_star is not None else draw_theta_star(seed, d, config.S)
    phis = draw_features(stream(seed, "surrogate-features"), N, d)
    probes = draw_features(stream(seed, "surrogate-probes"), config.n_probes, d)
    eta = config.noise.draw(stream(seed, "surrogate-noise", r), (N, r))
    labels = sample_medians((phis @ theta)[:, None] + eta)
    est = ridge_fit(phis, labels, config.lam)
    beta = beta_n(config.bound_params(), config.lam)
    errors = np.abs(probes @ theta - probes @ est.theta_hat)
    bounds = beta * uncertainty(est, probes)
    return TrialRecord(seed=int(seed), N=N, r=r, lam=config.lam, beta=beta, errors=errors, bounds=bounds)


def run_trials(config: SurrogateConfig, n_trials: int, seed: int) -> list[TrialRecord]:
    return [surrogate_trial(config, derive_seed(seed, "trial", t)) for t in range(n_trials)]


def violation_summary(records: list[TrialRecord], level: float) -> dict:
    """Fraction of trials with any probe violation, against ``level`` plus 3 binomial SE.

    Pass ``2 * delta`` for the large-``r`` regime or ``failure_budget(...)``
    for the general statement.
    """
    n = len(records)
    viol = sum(rec.any_violation for rec in records)
    slack = 3.0 * math.sqrt(max(level * (1 - level), 0.0) / n)
    return {"trials": n, "violations": viol, "rate": viol / n, "level": level, "limit": level + slack,
            "passed": viol / n <= level + slack}


TRIAL_COLUMNS = ["seed", "N", "r", "lambda", "probe_idx", "err", "bound", "violated"]


def write_trials_csv(records: list[TrialRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRIAL_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerows(rec.rows())
