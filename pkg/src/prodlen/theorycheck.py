"""Monte Carlo and exact checks of the bounds behind the ridge surrogate.

Each check returns a ``CheckResult``.  Monte Carlo slack is three standard
errors, always added to the bound side because every bound is an upper
bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .labelkit import sample_medians
from .lengthdist import SurrogateNoiseModel, moment_estimate
from .rng import stream
from .surrogate import c_const, rho_value


class PreconditionError(ValueError):
    pass


@dataclass
class CheckResult:
    name: str
    trials: int
    violations: int
    bound_value: float
    empirical_value: float
    passed: bool
    tolerance_note: str = ""
    vacuous: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def check_median_moment(noise: SurrogateNoiseModel, r: int, n_trials: int = 100_000, seed: int = 0) -> CheckResult:
    """``E|median of r draws|^(1+eps) <= 2v`` by Monte Carlo."""
    if r < 1:
        raise ValueError("r must be >= 1")
    if n_trials < 10_000:
        raise ValueError("median moment check needs at least 10^4 trials")
    eta = noise.draw(stream(seed, "median-moment", noise.shape, r), (n_trials, r))
    est, se = moment_estimate(sample_medians(eta), noise.epsilon)
    bound = 2.0 * noise.v
    return CheckResult(
        name=f"median_moment[{noise.shape},r={r}]",
        trials=n_trials,
        violations=int(est > bound),
        bound_value=bound,
        empirical_value=est,
        passed=est <= bound + 3 * se,
        tolerance_note=f"pass iff estimate <= 2v + 3 SE (SE={se:.3g})",
        details={"se": se, "v": noise.v, "epsilon": noise.epsilon},
    )


def check_median_tail(noise: SurrogateNoiseModel, u: float, r: int, n_trials: int = 100_000,
                      seed: int = 0) -> CheckResult:
    """``P(median of r > u) <= exp(-r/8)`` whenever ``P(X > u) <= 1/4``.

    The per-sample tail is measured on the same draws first; a value more
    than 3 SE above 1/4 raises ``PreconditionError``.
    """
    x = noise.draw(stream(seed, "median-tail", noise.shape, r), (n_trials, r))
    tail = float((x > u).mean())
    tail_se = binomial_se(tail, x.size)
    if tail - 3 * tail_se > 0.25:
        raise PreconditionError(f"per-sample tail P(X > {u}) measured at {tail:.4f} exceeds 1/4")
    exceed = sample_medians(x) > u
    freq = float(exceed.mean())
    se = binomial_se(freq, n_trials)
    bound = math.exp(-r / 8.0)
    return CheckResult(
        name=f"median_tail[{noise.shape},u={u:g},r={r}]",
        trials=n_trials,
        violations=int(exceed.sum()),
        bound_value=bound,
        empirical_value=freq,
        passed=freq <= bound + 3 * se,
        tolerance_note="pass iff frequency <= exp(-r/8) + 3 SE",
        details={"se": se, "per_sample_tail": tail, "per_sample_tail_se": tail_se},
    )


def check_potential(phis, lam: float) -> CheckResult:
    """Exact chain ``sum ||phi_i||^2_{V_{i-1}^-1} <= 2 log det ratio <= 2 d log(1 + N/(lam d))``.

    The first link needs every term to be at most 1; with unit-norm features
    that holds for ``lam >= 1``, and smaller ``lam`` can genuinely fail.
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=np.float64))
    n, d = phis.shape
    norms = np.linalg.norm(phis, axis=1)
    if np.any(norms > 1.0 + 1e-12):
        raise PreconditionError(f"feature norm {norms.max():.6g} exceeds 1")
    terms = _kernels.potential_terms(phis, lam)
    lhs = float(math.fsum(terms))
    V = lam * np.eye(d) + phis.T @ phis
    sign, logdet = np.linalg.slogdet(V)
    mid = 2.0 * (logdet - d * math.log(lam))
    rhs = 2.0 * d * math.log(1.0 + n / (lam * d))
    tol = 1e-9
    ok = lhs <= mid + tol and mid <= rhs + tol and sign > 0
    return CheckResult(
        name=f"potential[d={d},N={n},lambda={lam:g}]",
        trials=1,
        violations=int(not ok),
        bound_value=rhs,
        empirical_value=lhs,
        passed=bool(ok),
        tolerance_note="both links checked with 1e-9 slack on log-dets",
        details={"log_det_term": mid, "max_term": float(terms.max()) if n else 0.0},
    )


@dataclass
class ConcentrationConfig:
    N: int = 20
    r: int = 64
    delta: float = 0.2
    trials: int = 1000
    noise: SurrogateNoiseModel | None = None
    coeffs: np.ndarray | None = None

    def __post_init__(self):
        if self.noise is None:
            self.noise = SurrogateNoiseModel.uniform(epsilon=1.0)


def concentration_budget(N: int, r: int, delta: float) -> float:
    return delta / 2.0 + 2.0 * N * math.exp(-r / 8.0)


def check_concentration(kind: str, config: ConcentrationConfig, seed: int = 0) -> CheckResult:
    """Fixed-coefficient linear or quadratic concentration of median noises.

    linear: ``sum a_i m_i <= rho ||a||_{1+eps}``; quadratic:
    ``sum b_i^2 m_i^2 <= C rho ||b||_{1+eps}^2``, where ``m_i`` is the median
    of ``r`` noise draws.  Passes when the violation frequency is within
    ``delta/2 + 2 N exp(-r/8)`` plus 3 binomial SE.
    """
    if kind not in ("linear", "quadratic"):
        raise ValueError(f"unknown kind {kind!r}")
    if config.trials < 1000:
        raise ValueError("concentration checks need at least 1000 trials")
    N, r, delta, noise = config.N, config.r, config.delta, config.noise
    budget = concentration_budget(N, r, delta)
    if budget > 1.0:
        raise PreconditionError(f"violation budget {budget:.3g} exceeds 1; the inequality is vacuous at r={r}")
    eps, v = noise.epsilon, noise.v
    C = c_const(eps, v)
    rho = rho_value(eps, v, N, delta)
    p = 1.0 + eps
    coeffs = config.coeffs
    if coeffs is None:
        g = stream(seed, "coeffs", kind, N).standard_normal(N)
        coeffs = g if kind == "linear" else np.abs(g)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (N,):
        raise ValueError(f"need {N} coefficients")
    if kind == "quadratic" and np.any(coeffs < 0):
        raise ValueError("quadratic coefficients must be non-negative")
    norm = float(np.sum(np.abs(coeffs) ** p) ** (1.0 / p))
    eta = noise.draw(stream(seed, "concentration", kind, N, r), (config.trials, N, r))
    med = sample_medians(eta)
    if kind == "linear":
        lhs = med @ coeffs
        bound = rho * norm
    else:
        lhs = (med**2) @ (coeffs**2)
        bound = C * rho * norm**2
    viol = int((lhs > bound).sum())
    freq = viol / config.trials
    limit = budget + 3 * binomial_se(budget, config.trials)
    return CheckResult(
        name=f"concentration[{kind},N={N},r={r},delta={delta:g}]",
        trials=config.trials,
        violations=viol,
        bound_value=bound,
        empirical_value=float(lhs.max()),
        passed=freq <= limit,
        tolerance_note=f"violation frequency {freq:.4f} vs budget {budget:.4g} + 3 SE = {limit:.4g}",
        details={"rho": rho, "C": C, "budget": budget, "frequency": freq},
    )
