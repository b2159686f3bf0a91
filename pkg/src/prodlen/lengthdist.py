"""Synthetic prompt-conditioned output-length distributions.

Lengths come from a discretized lognormal body mixed with a Pareto tail,
clamped to ``[1, max_len]``.  The body median is a smooth function of the
prompt feature, so features carry the information a predictor needs.  The
module also holds the symmetric, moment-bounded noise models used by the
linear ridge surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .config import ConfigError, GeneratorConfig
from .rng import stream


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class ConditionalLengthDist:
    family: str
    body_median: float = 1.0
    body_sigma: float = 0.3
    tail_weight: float = 0.0
    tail_alpha: float = 2.0
    tail_xmin: float = 1.0
    max_len: int = 8192
    pmf: np.ndarray | None = None

    def __post_init__(self):
        if self.family == "discrete-pmf":
            if self.pmf is None:
                raise ValueError("discrete-pmf family needs an explicit pmf")
            pmf = np.asarray(self.pmf, dtype=np.float64)
            if pmf.ndim != 1 or pmf.shape[0] != self.max_len + 1:
                raise ValueError(f"pmf must have max_len + 1 = {self.max_len + 1} entries")
            if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
                raise ValueError("pmf must be non-negative and sum to 1 within 1e-12")
            self.pmf = pmf
        elif self.family != "lognormal-pareto-mix":
            raise ValueError(f"unknown family {self.family!r}")

    @classmethod
    def point_mass(cls, value: int, max_len: int | None = None) -> "ConditionalLengthDist":
        return cls.from_pmf({int(value): 1.0}, max_len=max_len)

    @classmethod
    def from_pmf(cls, pmf: dict, max_len: int | None = None) -> "ConditionalLengthDist":
        """Build a discrete-pmf distribution from ``{length: probability}``."""
        max_len = int(max_len if max_len is not None else max(pmf))
        arr = np.zeros(max_len + 1)
        for k, p in pmf.items():
            arr[int(k)] += float(p)
        return cls(family="discrete-pmf", max_len=max_len, pmf=arr)


@dataclass
class PromptInstance:
    id: str
    phi: np.ndarray
    dist: ConditionalLengthDist | None = None


@dataclass
class SamplePool:
    prompt_id: str
    lengths: np.ndarray
    seed: int
    clamped: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.lengths.ndim != 1 or self.lengths.size == 0:
            raise ValueError(f"pool for {self.prompt_id!r} must hold a non-empty list of lengths")
        if np.any(self.lengths < 0):
            raise ValueError(f"pool for {self.prompt_id!r} has negative lengths")
        if self.clamped is None:
            self.clamped = np.zeros(self.lengths.shape, dtype=bool)

    @property
    def r(self) -> int:
        return int(self.lengths.size)


def project_unit_ball(x: np.ndarray) -> np.ndarray:
    """Radially project rows with norm above 1 onto the ball.

    Projected rows are shrunk by a relative ``1e-12`` so their norm stays
    ``<= 1`` under any summation order; rows already inside are untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 1.0 - 1e-12, x / np.maximum(norms, 1e-300) * (1.0 - 1e-12), x)


def draw_features(rng: np.random.Generator, n: int, d: int, scale: float = 1.0) -> np.ndarray:
    """``n`` feature vectors ``scale * N(0, I/d)`` projected to the unit ball."""
    g = rng.standard_normal((n, d))
    return project_unit_ball(scale * g / math.sqrt(d))


def link_vector(config: GeneratorConfig) -> np.ndarray:
    if config.link_w is not None:
        return np.asarray(config.link_w, dtype=np.float64)
    return np.full(config.d, 1.0 / math.sqrt(config.d))


def body_median_of(config: GeneratorConfig, phis: np.ndarray) -> np.ndarray:
    return config.link_a * np.exp(config.link_b * (np.asarray(phis) @ link_vector(config)))


def make_dataset(config: GeneratorConfig, seed: int) -> list[PromptInstance]:
    """Generate ``config.n_prompts`` synthetic prompts.

    Identical ``(config, seed)`` pairs give bit-identical datasets.
    """
    config.validate()
    n, d = config.n_prompts, config.d
    phis = draw_features(stream(seed, "features"), n, d, config.feature_scale)
    u = stream(seed, "dist-params").random((n, 3))
    medians = body_median_of(config, phis)

    def from_range(lo_hi, col):
        lo, hi = lo_hi
        return lo + (hi - lo) * u[:, col]

    sigmas = from_range(config.body_sigma_range, 0)
    weights = from_range(config.tail_weight_range, 1)
    alphas = from_range(config.tail_alpha_range, 2)

    width = max(5, len(str(n - 1)))
    prompts = []
    for i in range(n):
        dist = ConditionalLengthDist(
            family="lognormal-pareto-mix",
            body_median=float(medians[i]),
            body_sigma=float(sigmas[i]),
            tail_weight=float(weights[i]),
            tail_alpha=float(alphas[i]),
            tail_xmin=float(config.tail_xmin_ratio * medians[i]),
            max_len=config.max_len,
        )
        prompts.append(PromptInstance(id=f"{config.id_prefix}{i:0{width}d}", phi=phis[i].copy(), dist=dist))
    return prompts


def _raw_draws(dist: ConditionalLengthDist, u: np.ndarray) -> np.ndarray:
    if dist.family == "discrete-pmf":
        cdf = np.cumsum(dist.pmf)
        idx = np.searchsorted(cdf, u[:, 0], side="right")
        return np.minimum(idx, dist.max_len).astype(np.float64)
    with np.errstate(divide="ignore"):
        body = dist.body_median * np.exp(dist.body_sigma * special.ndtri(u[:, 1]))
        tail = dist.tail_xmin * np.power(1.0 - u[:, 2], -1.0 / dist.tail_alpha)
    return np.where(u[:, 0] < dist.tail_weight, tail, body)


def sample_lengths(p: PromptInstance, r: int, seed: int) -> SamplePool:
    """Draw ``r`` i.i.d. integer lengths for prompt ``p``.

    Draw ``j`` consumes uniforms ``3j .. 3j+2`` of the prompt's own stream, so
    the first ``k`` draws of a pool of size ``r`` equal a pool of size ``k``
    under the same seed.
    """
    if p.dist is None:
        raise UnsupportedOperation(
            f"prompt {p.id!r} has no generating distribution (ingested trace); "
            "use its recorded lengths from the ingestion path instead of resampling"
        )
    if r < 1:
        raise ValueError("r must be >= 1")
    dist = p.dist
    u = stream(seed, "lengths", p.id).random((r, 3))
    raw = np.rint(_raw_draws(dist, u))
    clamped = (raw > dist.max_len) | (raw < 1)
    lengths = np.clip(raw, 1, dist.max_len).astype(np.int64)
    return SamplePool(prompt_id=p.id, lengths=lengths, seed=int(seed), clamped=clamped)


def sample_pools(prompts, r: int, seed: int) -> list[SamplePool]:
    return [sample_lengths(p, r, seed) for p in prompts]


# --------------------------------------------------------------------------
# surrogate noise
# --------------------------------------------------------------------------

_SHAPES = ("uniform", "student-t-symmetrized", "two-sided-pareto")


@dataclass
class SurrogateNoiseModel:
    """Symmetric noise ``s * |Z|`` with ``E|eta|^(1+epsilon) <= v``.

    ``params`` per shape: uniform ``{scale}``; student-t-symmetrized
    ``{df, scale}``; two-sided-pareto ``{alpha, xmin}``.  When ``v`` is
    omitted it is set to the exact moment.  Construction checks ``v``
    against both the closed-form moment and a fixed-seed Monte Carlo
    estimate (3 standard errors).
    """

    shape: str
    epsilon: float
    v: float | None = None
    params: dict = field(default_factory=dict)
    verify_draws: int = 200_000

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ConfigError("shape", f"unknown noise shape {self.shape!r}")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon", "must lie in (0, 1]")
        defaults = {
            "uniform": {"scale": 1.0},
            "student-t-symmetrized": {"df": 3.0, "scale": 1.0},
            "two-sided-pareto": {"alpha": 1.5, "xmin": 1.0},
        }[self.shape]
        self.params = {**defaults, **{k: float(v) for k, v in self.params.items()}}
        exact = self.moment()
        if not math.isfinite(exact):
            raise ConfigError("epsilon", f"E|eta|^{1 + self.epsilon} is infinite for {self.shape} {self.params}")
        if self.v is None:
            self.v = exact
        if self.v <= 0:
            raise ConfigError("v", "must be positive")
        if exact > self.v * (1 + 1e-12):
            raise ConfigError("v", f"moment {exact:.6g} exceeds configured bound {self.v:.6g}")
        if self.verify_draws:
            est, se = moment_estimate(sample_noise(self, self.verify_draws, seed=0x5EED), self.epsilon)
            if est > self.v + 3 * se:
                raise ConfigError("v", f"Monte Carlo moment {est:.6g} exceeds {self.v:.6g} + 3 SE")

    @classmethod
    def uniform(cls, scale=1.0, epsilon=1.0, v=None, **kw):
        return cls("uniform", epsilon, v, {"scale": scale}, **kw)

    @classmethod
    def student_t(cls, df=3.0, scale=1.0, epsilon=1.0, v=None, **kw):
        return cls("student-t-symmetrized", epsilon, v, {"df": df, "scale": scale}, **kw)

    @classmethod
    def two_sided_pareto(cls, alpha=1.5, xmin=1.0, epsilon=0.4, v=None, **kw):
        return cls("two-sided-pareto", epsilon, v, {"alpha": alpha, "xmin": xmin}, **kw)

    def moment(self) -> float:
        """Closed-form ``E|eta|^(1+epsilon)``."""
        p = 1.0 + self.epsilon
        if self.shape == "uniform":
            return self.params["scale"] ** p / (p + 1.0)
        if self.shape == "student-t-symmetrized":
            nu, s = self.params["df"], self.params["scale"]
            if p >= nu:
                return math.inf
            logm = (
                0.5 * p * math.log(nu)
                + math.lgamma((p + 1) / 2)
                + math.lgamma((nu - p) / 2)
                - 0.5 * math.log(math.pi)
                - math.lgamma(nu / 2)
            )
            return s**p * math.exp(logm)
        alpha, xm = self.params["alpha"], self.params["xmin"]
        if p >= alpha:
            return math.inf
        return alpha * xm**p / (alpha - p)

    def tail_prob(self, u: float) -> float:
        """Exact ``P(eta > u)``."""
        if u < 0:
            return 1.0 - self.tail_prob(-u) if u != 0 else 0.5
        if self.shape == "uniform":
            a = self.params["scale"]
            return 0.5 * max(0.0, 1.0 - u / a)
        if self.shape == "student-t-symmetrized":
            return float(stats.t.sf(u / self.params["scale"], self.params["df"]))
        alpha, xm = self.params["alpha"], self.params["xmin"]
        return 0.5 if u < xm else 0.5 * (u / xm) ** (-alpha)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        size = tuple(np.atleast_1d(size))
        if self.shape == "uniform":
            mag = self.params["scale"] * rng.random(size)
        elif self.shape == "student-t-symmetrized":
            mag = self.params["scale"] * np.abs(rng.standard_t(self.params["df"], size))
        else:
            mag = self.params["xmin"] * np.power(1.0 - rng.random(size), -1.0 / self.params["alpha"])
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return sign * mag


def sample_noise(m: SurrogateNoiseModel, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return m.draw(stream(seed, "noise", m.shape), n)


def moment_estimate(x: np.ndarray, epsilon: float) -> tuple[float, float]:
    """Sample mean of ``|x|^(1+epsilon)`` and its standard error."""
    y = np.abs(np.asarray(x, dtype=np.float64)) ** (1.0 + epsilon)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else 0.0
