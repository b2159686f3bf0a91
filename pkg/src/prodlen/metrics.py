"""Evaluation: absolute-error risk, noise radius, baselines, tail diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .labelkit import sample_median
from .lengthdist import SamplePool


class AlignmentError(ValueError):
    pass


def _pmf_items(dist):
    """``(values, probs)`` lists from a dict, a ``(values, probs)`` pair, or a discrete-pmf distribution."""
    if isinstance(dist, dict):
        items = sorted(dist.items())
        return [int(k) for k, _ in items], [p for _, p in items]
    pmf = getattr(dist, "pmf", None)
    if pmf is not None:
        support = np.nonzero(pmf)[0]
        return support.tolist(), pmf[support].tolist()
    values, probs = dist
    return [int(v) for v in values], list(probs)


def point_risk(dist, a):
    """``E|L - a|`` summed exactly over the support (Fractions stay exact)."""
    values, probs = _pmf_items(dist)
    return sum(p * abs(v - a) for v, p in zip(values, probs))


def cdf_at(dist, a):
    values, probs = _pmf_items(dist)
    return sum(p for v, p in zip(values, probs) if v <= a)


def risk_difference_check(dist, a) -> tuple:
    """Both sides of ``R(a+1) - R(a) = 2 P(L <= a) - 1``."""
    lhs = point_risk(dist, a + 1) - point_risk(dist, a)
    rhs = 2 * cdf_at(dist, a) - 1
    return lhs, rhs


def bayes_median_oracle(dist, rtol: float = 1e-12) -> set:
    """Brute-force minimizers of ``point_risk`` over the integer hull of the support."""
    values, probs = _pmf_items(dist)
    if all(isinstance(p, Fraction) for p in probs):
        cand = range(min(values), max(values) + 1)
        risks = {a: point_risk((values, probs), a) for a in cand}
        best = min(risks.values())
        return {a for a, r in risks.items() if r == best}
    cand = np.arange(min(values), max(values) + 1)
    risks = _kernels.risk_curve(values, probs, cand)
    best = risks.min()
    return {int(a) for a in cand[risks <= best + rtol * max(1.0, abs(best))]}


def median_interval(dist) -> tuple[int, int]:
    """Smallest and largest integer medians, read off the CDF.

    ``m`` is a median when ``P(L <= m) >= 1/2`` and ``P(L >= m) >= 1/2``.
    """
    values, probs = _pmf_items(dist)
    half = Fraction(1, 2) if all(isinstance(p, Fraction) for p in probs) else 0.5
    cum = 0
    lo = None
    for v, p in zip(values, probs):
        cum += p
        if cum >= half:
            lo = v
            break
    cum = 0
    hi = None
    for v, p in zip(reversed(values), reversed(probs)):
        cum += p
        if cum >= half:
            hi = v
            break
    return lo, hi


def _lengths(pool) -> np.ndarray:
    return np.asarray(pool.lengths if isinstance(pool, SamplePool) else pool, dtype=np.float64)


def noise_radius(pool) -> float:
    """Mean absolute deviation of a pool from its sample median."""
    x = _lengths(pool)
    return float(np.mean(np.abs(x - sample_median(x))))


def max_to_median(pool) -> float:
    x = _lengths(pool)
    m = sample_median(x)
    if m == 0:
        raise ValueError("max-to-median ratio is undefined for a zero median")
    return float(x.max() / m)


def constant_median_baseline(train_targets, test_targets) -> float:
    """MAE of always predicting the train-split median."""
    test = np.asarray(test_targets, dtype=np.float64)
    if test.size == 0:
        raise ValueError("test_targets must be non-empty")
    return float(np.mean(np.abs(test - sample_median(train_targets))))


@dataclass
class EvalReport:
    mae: float
    per_prompt: list
    noise_radius: float | None = None
    baseline_mae: float | None = None
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "noise_radius": self.noise_radius,
            "baseline_mae": self.baseline_mae,
            "config_hash": self.config_hash,
            "n_prompts": len(self.per_prompt),
            **self.extra,
        }

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["prompt_id", "prediction", "target", "abs_err"])
                for row in self.per_prompt:
                    w.writerow([row["prompt_id"], repr(row["prediction"]), repr(row["target"]), repr(row["abs_err"])])


def evaluate(predictions: dict, targets: dict, *, noise_radius: float | None = None,
             baseline_mae: float | None = None, config_hash: str = "") -> EvalReport:
    """MAE of ``predictions`` against ``targets`` (both keyed by prompt id).

    Rows are sorted by prompt id and the mean is taken with ``math.fsum``,
    so the report does not depend on input ordering.
    """
    missing_pred = sorted(set(targets) - set(predictions))
    missing_tgt = sorted(set(predictions) - set(targets))
    if missing_pred or missing_tgt:
        raise AlignmentError(
            f"ids without prediction: {missing_pred[:10]}; ids without target: {missing_tgt[:10]}"
        )
    if not targets:
        raise ValueError("nothing to evaluate")
    rows = []
    for pid in sorted(targets):
        p, t = float(predictions[pid]), float(targets[pid])
        rows.append({"prompt_id": pid, "prediction": p, "target": t, "abs_err": abs(p - t)})
    mae = math.fsum(r["abs_err"] for r in rows) / len(rows)
    return EvalReport(mae=mae, per_prompt=rows, noise_radius=noise_radius, baseline_mae=baseline_mae,
                      config_hash=config_hash)
