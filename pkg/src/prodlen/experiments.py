"""Experiment protocols: benchmark, single-sample ablation, budget curves, theory suite.

Every protocol takes a ``LengthSource`` (synthetic prompts that can be
resampled, or ingested traces with fixed pools), derives all randomness
from one master seed by counter splitting, and returns a plain dict report
that serializes deterministically.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .config import ExperimentConfig, GeneratorConfig, TheoryConfig, TrainConfig, config_hash, to_plain
from .labelkit import BinGrid, make_bin_grid, pool_matrix_labels, sample_medians
from .lengthdist import PromptInstance, SurrogateNoiseModel, draw_features, make_dataset, sample_lengths
from .metrics import constant_median_baseline
from .predictor import predict_lengths, train
from .rng import derive_seed, stream
from .surrogate import (
    SurrogateConfig,
    failure_budget,
    repeats_threshold,
    run_trials,
    violation_summary,
)
from .theorycheck import (
    CheckResult,
    ConcentrationConfig,
    check_concentration,
    check_median_moment,
    check_median_tail,
    check_potential,
    concentration_budget,
)
from .traces import TraceRecord

SINGLE_SAMPLE_EXCLUSION = (
    "ProD-D is excluded under single-sample supervision: a single length per prompt "
    "cannot induce a non-degenerate distribution target"
)


class ProtocolError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data sources and splits
# --------------------------------------------------------------------------

@dataclass
class LengthSource:
    """Prompt ids and features plus a way to obtain length samples.

    Synthetic sources resample from each prompt's distribution; traced
    sources slice the recorded pools (``offset`` selects which recorded
    samples are used).
    """

    ids: list
    phis: np.ndarray
    scenario: str = "synthetic"
    prompts: list | None = None
    pools: list | None = None

    @classmethod
    def synthetic(cls, config: GeneratorConfig, seed: int, scenario: str = "synthetic") -> "LengthSource":
        prompts = make_dataset(config, seed)
        return cls(ids=[p.id for p in prompts], phis=np.stack([p.phi for p in prompts]),
                   scenario=scenario, prompts=prompts)

    @classmethod
    def from_traces(cls, records: list[TraceRecord], scenario: str = "traces") -> "LengthSource":
        missing = [r.prompt_id for r in records if r.phi is None]
        if missing:
            raise ProtocolError(f"{len(missing)} trace records lack phi (e.g. {missing[0]!r}); features are required")
        return cls(ids=[r.prompt_id for r in records], phis=np.array([r.phi for r in records], dtype=np.float64),
                   scenario=scenario, pools=[np.asarray(r.lengths, dtype=np.int64) for r in records])

    @property
    def n(self) -> int:
        return len(self.ids)

    def draw(self, rows, k: int, seed: int, offset: int = 0) -> np.ndarray:
        rows = list(rows)
        if self.prompts is not None:
            return np.stack([sample_lengths(self.prompts[i], k, seed).lengths for i in rows])
        out = np.empty((len(rows), k), dtype=np.int64)
        for j, i in enumerate(rows):
            pool = self.pools[i]
            if pool.size < offset + k:
                raise ProtocolError(
                    f"prompt {self.ids[i]!r} has {pool.size} recorded samples; protocol needs {offset + k}"
                )
            out[j] = pool[offset:offset + k]
        return out

    def min_pool(self, rows) -> int:
        if self.prompts is not None:
            return 1 << 30
        return min(self.pools[i].size for i in rows)


def split_indices(ids, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test split by hashed prompt id.

    Prompts are ranked by a BLAKE2b hash of their id and the first
    ``round(test_fraction * n)`` go to test; both index arrays keep the
    original order.
    """
    n = len(ids)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise ProtocolError(f"split of {n} prompts at test fraction {test_fraction} leaves an empty side")
    keys = sorted(range(n), key=lambda i: (hashlib.blake2b(ids[i].encode(), digest_size=8).digest(), ids[i]))
    test = np.sort(np.array(keys[:n_test]))
    train = np.sort(np.array(keys[n_test:]))
    return train, test


def budget_allocation(B: int, k: int) -> tuple[int, int]:
    """Unique prompts ``ceil(B/k)`` and total draws ``k * ceil(B/k)``."""
    if B < 1 or k < 1:
        raise ValueError("B and k must be >= 1")
    n = -(-B // k)
    return n, n * k


def _summary(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "values": [float(x) for x in arr],
    }


def pooled_std(a, b) -> float:
    sa = np.std(a, ddof=1) if len(a) > 1 else 0.0
    sb = np.std(b, ddof=1) if len(b) > 1 else 0.0
    return float(math.sqrt((sa**2 + sb**2) / 2.0))


def _pmap(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _fit_and_score(task: dict) -> dict:
    grid = BinGrid.from_dict(task["grid"])
    cfg = TrainConfig(**task["train"])
    params = train(task["X_train"], task["Y"], grid, cfg)
    pred = predict_lengths(params, task["X_test"])
    out = {"final_loss": float(params.loss_log[-1])}
    for name, target in task["targets"].items():
        out[name] = float(np.mean(np.abs(pred - target)))
    return out


def _task(X_train, Y, grid, train_cfg: TrainConfig, mode: str, seed: int, X_test, targets: dict) -> dict:
    tc = dict(train_cfg.__dict__, mode=mode, seed=int(seed))
    return {"X_train": X_train, "Y": Y, "grid": grid.to_dict(), "train": tc, "X_test": X_test, "targets": targets}


def _header(kind: str, source: LengthSource, exp: ExperimentConfig, train_cfg: TrainConfig,
            seed: int, trial_seeds, extra_cfg=None) -> dict:
    return {
        "kind": kind,
        "scenario": source.scenario,
        "config_hash": config_hash(exp, train_cfg, extra_cfg or {}),
        "master_seed": int(seed),
        "trial_seeds": [int(s) for s in trial_seeds],
        "temperature_note": exp.temperature_note,
        "experiment_config": to_plain(exp),
        "train_config": to_plain(train_cfg),
        "source_config": to_plain(extra_cfg or {}),
        "kernel_backend": _kernels.BACKEND,
    }


def _test_side(source: LengthSource, test_idx, exp: ExperimentConfig, seed: int):
    if source.min_pool(test_idx) < exp.R_test:
        raise ProtocolError(f"test prompts need >= R_test={exp.R_test} samples each")
    Lte = source.draw(test_idx, exp.R_test, derive_seed(seed, "test-pool"))
    med = sample_medians(Lte)
    radius = np.mean(np.abs(Lte - med[:, None]), axis=1)
    return Lte, med, radius


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def run_benchmark(source: LengthSource, exp: ExperimentConfig, train_cfg: TrainConfig | None = None,
                  seed: int | None = None, jobs: int = 1, source_config=None) -> dict:
    """Train ProD-M and ProD-D on ``R_train``-sample pools; score against test medians."""
    exp = exp.validate()
    train_cfg = (train_cfg or TrainConfig()).validate()
    seed = exp.seed if seed is None else seed
    train_idx, test_idx = split_indices(source.ids, exp.test_fraction)
    if source.min_pool(train_idx) < exp.R_train:
        raise ProtocolError(f"train prompts need >= R_train={exp.R_train} samples each")
    Ltr = source.draw(train_idx, exp.R_train, derive_seed(seed, "train-pool"))
    _, test_med, radius = _test_side(source, test_idx, exp, seed)
    grid = make_bin_grid(Ltr.ravel(), exp.K, exp.bin_policy)
    med, onehot, hist = pool_matrix_labels(Ltr, grid)

    trial_seeds = [derive_seed(seed, "trial", t) for t in range(exp.trials)]
    Xtr, Xte = source.phis[train_idx], source.phis[test_idx]
    targets = {"mae": test_med}
    tasks = []
    for s in trial_seeds:
        tasks.append(_task(Xtr, onehot, grid, train_cfg, "prod-m", s, Xte, targets))
        tasks.append(_task(Xtr, hist, grid, train_cfg, "prod-d", s, Xte, targets))
    results = _pmap(_fit_and_score, tasks, jobs)
    report = _header("benchmark", source, exp, train_cfg, seed, trial_seeds, source_config)
    report.update({
        "n_train": int(train_idx.size),
        "n_test": int(test_idx.size),
        "grid": grid.to_dict(),
        "train_samples": int(Ltr.size),
        "noise_radius": float(math.fsum(radius) / radius.size),
        "methods": {
            "constant-median": {"mean": constant_median_baseline(med, test_med), "std": 0.0},
            "prod-m": _summary([r["mae"] for r in results[0::2]]),
            "prod-d": _summary([r["mae"] for r in results[1::2]]),
        },
    })
    return report


def run_single_sample_ablation(source: LengthSource, exp: ExperimentConfig, train_cfg: TrainConfig | None = None,
                               seed: int | None = None, jobs: int = 1, methods=("prod-m",),
                               source_config=None) -> dict:
    """ProD-M trained on one length per prompt, a fresh draw per trial.

    Scored against the ``R_test``-sample median target and against a
    single fresh test label.
    """
    bad = [m for m in methods if m != "prod-m"]
    if bad:
        raise ProtocolError(f"cannot run {bad[0]!r} here. {SINGLE_SAMPLE_EXCLUSION}")
    exp = exp.validate()
    if exp.trials < 2:
        raise ProtocolError("the ablation needs at least 2 trials for mean and std")
    train_cfg = (train_cfg or TrainConfig()).validate()
    seed = exp.seed if seed is None else seed
    train_idx, test_idx = split_indices(source.ids, exp.test_fraction)
    _, test_med, _ = _test_side(source, test_idx, exp, seed)
    Xtr, Xte = source.phis[train_idx], source.phis[test_idx]
    trial_seeds = [derive_seed(seed, "trial", t) for t in range(exp.trials)]
    width_tr = source.min_pool(train_idx)
    width_te = source.min_pool(test_idx)

    tasks = []
    for t, s in enumerate(trial_seeds):
        L1 = source.draw(train_idx, 1, derive_seed(seed, "single-train", t), offset=t % width_tr)
        grid = make_bin_grid(L1.ravel(), exp.K, exp.bin_policy)
        _, onehot, _ = pool_matrix_labels(L1, grid)
        single_test = source.draw(test_idx, 1, derive_seed(seed, "single-test", t), offset=t % width_te)[:, 0]
        targets = {"median-target": test_med, "single-label": single_test.astype(np.float64)}
        tasks.append(_task(Xtr, onehot, grid, train_cfg, "single-sample", s, Xte, targets))
    results = _pmap(_fit_and_score, tasks, jobs)
    report = _header("ablation-single", source, exp, train_cfg, seed, trial_seeds, source_config)
    report.update({
        "n_train": int(train_idx.size),
        "n_test": int(test_idx.size),
        "train_samples": int(train_idx.size),
        "rows": [
            {"method": "prod-m", "supervision": "single-sample", "eval": ev, "trial": t, "mae": r[ev]}
            for ev in ("median-target", "single-label")
            for t, r in enumerate(results)
        ],
        "methods": {
            "prod-m": {
                ev: _summary([r[ev] for r in results]) for ev in ("median-target", "single-label")
            }
        },
    })
    return report


def run_budget_curve(source: LengthSource, exp: ExperimentConfig, train_cfg: TrainConfig | None = None,
                     seed: int | None = None, jobs: int = 1, source_config=None) -> dict:
    """Fixed training budget ``B``: ``ceil(B/k)`` prompts with ``k`` draws each.

    Prompt subsets are nested across ``k`` within a trial (a prefix of one
    seeded permutation), and synthetic draws are prefix-stable, so larger
    ``k`` sees a subset of smaller ``k``'s prompts.
    """
    exp = exp.validate()
    train_cfg = (train_cfg or TrainConfig()).validate()
    seed = exp.seed if seed is None else seed
    train_idx, test_idx = split_indices(source.ids, exp.test_fraction)
    B = exp.budget_B
    if B > train_idx.size:
        raise ProtocolError(f"budget B={B} exceeds the {train_idx.size} available train prompts")
    ks = sorted(set(exp.repeat_grid))
    for k in ks:
        n_k, _ = budget_allocation(B, k)
        if n_k < exp.min_prompts:
            raise ProtocolError(f"k={k} keeps only {n_k} prompts, below the trainable floor {exp.min_prompts}")
    if source.min_pool(train_idx) < max(ks):
        raise ProtocolError(f"train prompts need >= {max(ks)} samples each")
    _, test_med, _ = _test_side(source, test_idx, exp, seed)
    Xte = source.phis[test_idx]
    trial_seeds = [derive_seed(seed, "trial", t) for t in range(exp.trials)]

    tasks, keys = [], []
    for t, s in enumerate(trial_seeds):
        perm = stream(seed, "budget-perm", t).permutation(train_idx)
        draw_seed = derive_seed(seed, "budget", t)
        for k in ks:
            n_k, total = budget_allocation(B, k)
            rows = perm[:n_k]
            L = source.draw(rows, k, draw_seed)
            assert L.size == total
            grid = make_bin_grid(L.ravel(), exp.K, exp.bin_policy)
            _, onehot, hist = pool_matrix_labels(L, grid)
            Xtr = source.phis[rows]
            for method, Y in (("prod-m", onehot), ("prod-d", hist)):
                tasks.append(_task(Xtr, Y, grid, train_cfg, method, s, Xte, {"mae": test_med}))
                keys.append((method, k, t, n_k, int(L.size)))
    results = _pmap(_fit_and_score, tasks, jobs)
    rows = [
        {"method": m, "k": k, "trial": t, "n_prompts": n_k, "total_samples": tot, "mae": r["mae"]}
        for (m, k, t, n_k, tot), r in zip(keys, results)
    ]
    rows.sort(key=lambda r: (r["method"], r["k"], r["trial"]))
    curves = {}
    for m in ("prod-m", "prod-d"):
        curves[m] = {str(k): _summary([r["mae"] for r in rows if r["method"] == m and r["k"] == k]) for k in ks}
    report = _header("budget-curve", source, exp, train_cfg, seed, trial_seeds, source_config)
    report.update({"budget_B": B, "repeat_grid": ks, "n_test": int(test_idx.size), "rows": rows, "curves": curves})
    return report


def default_noise_models() -> dict:
    return {
        "uniform": SurrogateNoiseModel.uniform(scale=1.0, epsilon=1.0),
        "student-t-symmetrized": SurrogateNoiseModel.student_t(df=3.0, scale=1.0, epsilon=1.0),
        "two-sided-pareto": SurrogateNoiseModel.two_sided_pareto(alpha=1.5, xmin=1.0, epsilon=0.4),
    }


def potential_streams(n_streams: int, seed: int, max_d: int = 8, max_n: int = 500):
    """Random feature streams for the potential check; half are pushed onto the unit sphere."""
    rng = stream(seed, "potential-shapes")
    for s in range(n_streams):
        d = int(rng.integers(1, max_d + 1))
        n = int(rng.integers(1, max_n + 1))
        phis = draw_features(stream(seed, "potential", s), n, d)
        if s % 2 == 1:
            norms = np.linalg.norm(phis, axis=1, keepdims=True)
            phis = np.where(norms > 0, phis / np.maximum(norms, 1e-300), phis)
        yield phis


def surrogate_sweep(theory: TheoryConfig, seed: int, noise: SurrogateNoiseModel | None = None) -> list[CheckResult]:
    """Ridge bound validity across the repeat grid.

    A point whose failure budget ``delta + 4N exp(-r/8)`` is at least 1 is
    reported as vacuous.  Otherwise the allowed violation level is ``2 delta``
    when ``r >= 8 log(4N/delta)`` and the full budget below that.
    """
    noise = noise or SurrogateNoiseModel.uniform(scale=1.0, epsilon=1.0)
    thr = repeats_threshold(theory.N, theory.delta)
    out = []
    for r in theory.r_grid:
        budget = failure_budget(theory.N, r, theory.delta)
        name = f"ridge_bound[N={theory.N},r={r},delta={theory.delta:g}]"
        if budget >= 1.0:
            out.append(CheckResult(name=name, trials=0, violations=0, bound_value=budget, empirical_value=float("nan"),
                                   passed=True, vacuous=True,
                                   tolerance_note=f"failure budget {budget:.4g} >= 1; bound is vacuous"))
            continue
        cfg = SurrogateConfig(d=theory.d, N=theory.N, r=r, lam=theory.lam, S=theory.S, delta=theory.delta,
                              n_probes=theory.n_probes, noise=noise)
        recs = run_trials(cfg, theory.trials, derive_seed(seed, "sweep", r))
        level = 2 * theory.delta if r >= thr else budget
        summ = violation_summary(recs, level)
        out.append(CheckResult(
            name=name, trials=summ["trials"], violations=summ["violations"], bound_value=level,
            empirical_value=summ["rate"], passed=bool(summ["passed"]),
            tolerance_note=f"violation rate <= {'2*delta' if r >= thr else 'failure budget'} + 3 SE "
                           f"= {summ['limit']:.4g} (threshold r* = {thr:.2f})",
            details={"regime": "2delta" if r >= thr else "budget", "threshold_r": thr,
                     "max_ratio": float(max(np.max(rec.errors / rec.bounds) for rec in recs))},
        ))
    return out


def run_theory_suite(theory: TheoryConfig | None = None, seed: int = 0) -> list[CheckResult]:
    theory = (theory or TheoryConfig()).validate()
    results: list[CheckResult] = []
    models = default_noise_models()
    for shape, model in models.items():
        for r in (1, 5, 16):
            results.append(check_median_moment(model, r, theory.mc_trials, derive_seed(seed, "moment", shape, r)))

    tails = [check_median_tail(models["uniform"], 0.5, r, theory.mc_trials, derive_seed(seed, "tail", r))
             for r in (8, 16, 32)]
    results.extend(tails)
    f8, f32 = tails[0], tails[-1]
    slack = 3 * (f8.details["se"] + f32.details["se"])
    results.append(CheckResult(
        name="median_tail_monotone[r=8..32]", trials=theory.mc_trials, violations=0,
        bound_value=f8.empirical_value + slack, empirical_value=f32.empirical_value,
        passed=f32.empirical_value <= f8.empirical_value + slack,
        tolerance_note="frequency at r=32 <= frequency at r=8 + 3 SE each",
    ))

    pot = [check_potential(phis, theory.lam) for phis in potential_streams(theory.potential_streams, seed)]
    results.append(CheckResult(
        name=f"potential[{len(pot)} streams,lambda={theory.lam:g}]", trials=len(pot),
        violations=sum(not p.passed for p in pot), bound_value=max(p.bound_value for p in pot),
        empirical_value=max(p.empirical_value for p in pot), passed=all(p.passed for p in pot),
        tolerance_note="every stream satisfies both links with 1e-9 slack",
    ))

    conc_cfg = ConcentrationConfig(N=20, r=64, delta=theory.delta, trials=max(1000, theory.trials),
                                   noise=models["uniform"])
    for kind in ("linear", "quadratic"):
        if concentration_budget(conc_cfg.N, conc_cfg.r, conc_cfg.delta) > 1:
            continue
        results.append(check_concentration(kind, conc_cfg, derive_seed(seed, "concentration", kind)))

    results.extend(surrogate_sweep(theory, seed, models["uniform"]))
    return results


def theory_report(results: list[CheckResult], theory: TheoryConfig, seed: int) -> dict:
    return {
        "kind": "theory",
        "config_hash": config_hash(theory),
        "master_seed": int(seed),
        "theory_config": to_plain(theory),
        "kernel_backend": _kernels.BACKEND,
        "all_pass": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(to_plain(obj)), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _write_rows(path: Path, header: list, rows, seed=None) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if seed is not None:
                row = row[:1] + [seed] + row[1:]
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def emit_plot_data(report: dict, out_dir) -> list[Path]:
    """Tidy CSVs (one row per method/scenario/trial-or-k/metric) plus ``config.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = report["kind"]
    scen = report.get("scenario", "")
    h = report.get("config_hash", "")
    seed = report.get("master_seed", "")
    cols = ["config_hash", "master_seed", "method", "scenario", "trial", "k", "metric", "value"]
    files = []
    if kind == "benchmark":
        rows = []
        for m, summ in sorted(report["methods"].items()):
            vals = summ.get("values", [summ["mean"]])
            for t, v in enumerate(vals):
                rows.append([h, m, scen, t, "", "mae", v])
        files.append(_write_rows(out / "mae.csv", cols, rows, seed))
        files.append(_write_rows(out / "noise_radius.csv", cols,
                                 [[h, "noise-radius", scen, "", "", "noise_radius", report["noise_radius"]]], seed))
    elif kind == "ablation-single":
        rows = [[h, f"{r['method']}/{r['supervision']}", scen, r["trial"], "", f"mae[{r['eval']}]", r["mae"]]
                for r in report["rows"]]
        files.append(_write_rows(out / "ablation.csv", cols, rows, seed))
    elif kind == "budget-curve":
        rows = [[h, r["method"], scen, r["trial"], r["k"], "mae", r["mae"]] for r in report["rows"]]
        files.append(_write_rows(out / "budget_curve.csv", cols, rows, seed))
    elif kind == "theory":
        rows = [[h, c["name"], "theory", "", "", "empirical_value", c["empirical_value"]] for c in report["checks"]]
        rows += [[h, c["name"], "theory", "", "", "bound_value", c["bound_value"]] for c in report["checks"]]
        files.append(_write_rows(out / "theory.csv", cols, rows, seed))
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    meta = {k: v for k, v in report.items() if k not in ("rows", "methods", "curves", "checks")}
    files.append(write_json(meta, out / "config.json"))
    return files
