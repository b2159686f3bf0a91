"""``prodctl``: command-line harness for the length-supervision toolkit.

Global flags (``--config``, ``--seed``, ``--out``, ``--jobs``) are accepted
before or after the subcommand.  Protocol commands read prompts either from
a trace file (``--traces``) or from the synthetic generator described by the
config.  Every output file is written deterministically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, load_config, to_plain
from .experiments import (
    LengthSource,
    ProtocolError,
    emit_plot_data,
    run_benchmark,
    run_budget_curve,
    run_single_sample_ablation,
    run_theory_suite,
    split_indices,
    theory_report,
    write_json,
)
from .labelkit import DegenerateGridError, make_bin_grid, pool_matrix_labels
from .lengthdist import make_dataset, sample_pools
from .metrics import evaluate, max_to_median, noise_radius
from .predictor import decode_medians, load_params, predict_proba, save_params, train
from .rng import derive_seed
from .traces import TraceFormatError, ingest, prompts_to_traces, write_traces


def _global_parser(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=d(None), help="YAML config file (schema_version 1)")
    g.add_argument("--seed", type=int, default=d(None), help="master seed (overrides experiment.seed)")
    g.add_argument("--out", default=d("out"), help="output directory (default: out)")
    g.add_argument("--jobs", type=int, default=d(1), help="worker processes for trials (default: 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodctl", parents=[_global_parser(False)],
                                     description="Repeated-sampling length supervision: data, training, evaluation, checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_parser(True)]

    def add(name, help_):
        return sub.add_parser(name, parents=common, help=help_, description=help_)

    p = add("generate", "sample a synthetic dataset and write it as JSONL traces")
    p.add_argument("--samples", type=int, default=None, help="lengths per prompt (default: max(R_train, R_test))")

    p = add("ingest", "validate a JSONL trace file and write a summary")
    p.add_argument("traces")

    p = add("label", "build the bin grid and median/histogram labels for the train split")
    p.add_argument("--traces", default=None)

    p = add("train", "train one predictor on the train split")
    p.add_argument("--traces", default=None)
    p.add_argument("--mode", choices=["prod-m", "prod-d"], default=None)

    p = add("eval", "evaluate a saved model, or run the full benchmark when no model is given")
    p.add_argument("--traces", default=None)
    p.add_argument("--model", default=None)

    p = add("ablate-single", "single-sample supervision ablation")
    p.add_argument("--traces", default=None)
    p.add_argument("--method", action="append", default=None,
                   help="method to run (repeatable); only prod-m is valid here")

    p = add("budget-curve", "fixed-budget prompts-versus-repeats curve")
    p.add_argument("--traces", default=None)

    add("theory", "Monte Carlo and exact checks of the surrogate bound and its lemmas")

    p = add("emit-plots", "write tidy CSV plot data for a report JSON")
    p.add_argument("report")
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _context(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["experiment"].seed = args.seed
    cfg["seed"] = cfg["experiment"].seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg["out"] = out
    return cfg


def _source(ctx: dict, traces: str | None) -> LengthSource:
    scenario = ctx["experiment"].scenario
    if traces:
        return LengthSource.from_traces(ingest(traces), scenario=scenario)
    return LengthSource.synthetic(ctx["generator"].validate(), derive_seed(ctx["seed"], "dataset"), scenario=scenario)


def _source_cfg(ctx: dict, traces: str | None) -> dict:
    if traces:
        return {"traces_sha256": _file_hash(traces)}
    return {"generator": to_plain(ctx["generator"])}


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _train_pool(ctx, source: LengthSource):
    exp = ctx["experiment"]
    tr, te = split_indices(source.ids, exp.test_fraction)
    if source.min_pool(tr) < exp.R_train:
        raise ProtocolError(f"train prompts need >= R_train={exp.R_train} samples each")
    L = source.draw(tr, exp.R_train, derive_seed(ctx["seed"], "train-pool"))
    return tr, te, L


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args, ctx) -> int:
    gen, exp, seed = ctx["generator"], ctx["experiment"], ctx["seed"]
    r = args.samples or max(exp.R_train, exp.R_test)
    prompts = make_dataset(gen, derive_seed(seed, "dataset"))
    pools = sample_pools(prompts, r, derive_seed(seed, "generate"))
    h = config_hash(gen, r)
    records = prompts_to_traces(prompts, pools, {"config_hash": h, "seed": str(seed), "temperature": exp.temperature_note})
    path = write_traces(records, ctx["out"] / "traces.jsonl")
    ratios = [max_to_median(p.lengths) for p in pools]
    write_json({
        "kind": "generate", "config_hash": h, "master_seed": seed, "n_prompts": len(prompts), "samples_per_prompt": r,
        "generator": to_plain(gen), "clamped_samples": int(sum(int(p.clamped.sum()) for p in pools)),
        "max_to_median_median": float(np.median(ratios)), "traces": path.name,
    }, ctx["out"] / "generate.json")
    print(f"wrote {len(records)} prompts x {r} samples to {path}")
    return 0


def cmd_ingest(args, ctx) -> int:
    records = ingest(args.traces)
    lengths = [np.asarray(r.lengths) for r in records]
    dims = sorted({len(r.phi) for r in records if r.phi is not None})
    positive = [x for x in lengths if np.median(x) > 0]
    summary = {
        "kind": "ingest",
        "config_hash": config_hash({"sha256": _file_hash(args.traces)}),
        "master_seed": ctx["seed"],
        "source": Path(args.traces).name,
        "n_records": len(records),
        "phi_dim": dims[0] if dims else None,
        "with_phi": sum(r.phi is not None for r in records),
        "samples_min": int(min(x.size for x in lengths)) if records else 0,
        "samples_max": int(max(x.size for x in lengths)) if records else 0,
        "mean_noise_radius": float(np.mean([noise_radius(x) for x in lengths])) if records else None,
        "median_max_to_median": float(np.median([max_to_median(x) for x in positive])) if positive else None,
    }
    write_json(summary, ctx["out"] / "ingest.json")
    print(f"ingested {len(records)} records from {args.traces}")
    return 0


def cmd_label(args, ctx) -> int:
    exp = ctx["experiment"]
    source = _source(ctx, args.traces)
    tr, _, L = _train_pool(ctx, source)
    grid = make_bin_grid(L.ravel(), exp.K, exp.bin_policy)
    med, onehot, hist = pool_matrix_labels(L, grid)
    h = config_hash(exp, _source_cfg(ctx, args.traces))
    with open(ctx["out"] / "labels.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for j, i in enumerate(tr):
            fh.write(json.dumps({
                "prompt_id": source.ids[i], "median": float(med[j]), "median_bin": int(onehot[j].argmax()),
                "hist": [float(x) for x in hist[j]], "grid_id": grid.grid_id,
            }, sort_keys=True) + "\n")
    write_json({"kind": "label", "config_hash": h, "master_seed": ctx["seed"], "grid": grid.to_dict(),
                "n_prompts": int(tr.size), "samples_per_prompt": exp.R_train}, ctx["out"] / "grid.json")
    print(f"labelled {tr.size} prompts on a {grid.K}-bin grid ({grid.grid_id})")
    return 0


def cmd_train(args, ctx) -> int:
    exp, tcfg = ctx["experiment"], ctx["train"]
    if args.mode:
        tcfg.mode = args.mode
    tcfg.seed = derive_seed(ctx["seed"], "train")
    source = _source(ctx, args.traces)
    tr, _, L = _train_pool(ctx, source)
    grid = make_bin_grid(L.ravel(), exp.K, exp.bin_policy)
    _, onehot, hist = pool_matrix_labels(L, grid)
    params = train(source.phis[tr], onehot if tcfg.mode == "prod-m" else hist, grid, tcfg)
    params.meta.update({"experiment_config_hash": config_hash(exp, _source_cfg(ctx, args.traces)),
                        "master_seed": ctx["seed"]})
    path = save_params(params, ctx["out"] / "model.npz")
    print(f"trained {tcfg.mode} for {tcfg.epochs} epochs, final loss {params.loss_log[-1]:.6g}; saved {path}")
    return 0


def cmd_eval(args, ctx) -> int:
    exp = ctx["experiment"]
    source = _source(ctx, args.traces)
    if args.model is None:
        report = run_benchmark(source, exp, ctx["train"], ctx["seed"], args.jobs, _source_cfg(ctx, args.traces))
        write_json(report, ctx["out"] / "benchmark.json")
        for m, s in sorted(report["methods"].items()):
            print(f"{m:16s} MAE {s['mean']:.3f} +/- {s['std']:.3f}")
        print(f"{'noise radius':16s}     {report['noise_radius']:.3f}")
        return 0
    params = load_params(args.model)
    _, te = split_indices(source.ids, exp.test_fraction)
    if source.min_pool(te) < exp.R_test:
        raise ProtocolError(f"test prompts need >= R_test={exp.R_test} samples each")
    L = source.draw(te, exp.R_test, derive_seed(ctx["seed"], "test-pool"))
    targets = np.median(L, axis=1)
    probs = predict_proba(params, source.phis[te])
    preds = decode_medians(probs, params.grid)
    ids = [source.ids[i] for i in te]
    with open(ctx["out"] / "predictions.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for pid, q, m in zip(ids, probs, preds):
            fh.write(json.dumps({"prompt_id": pid, "probs": [float(x) for x in q], "decoded_median": float(m)}) + "\n")
    rep = evaluate(dict(zip(ids, preds)), dict(zip(ids, targets)),
                   noise_radius=float(np.mean([noise_radius(x) for x in L])),
                   config_hash=config_hash(exp, _source_cfg(ctx, args.traces), _file_hash(args.model)))
    rep.extra.update({"master_seed": ctx["seed"], "model": Path(args.model).name})
    rep.write(ctx["out"] / "eval.json", ctx["out"] / "eval.csv")
    print(f"MAE {rep.mae:.3f} on {len(ids)} test prompts (noise radius {rep.noise_radius:.3f})")
    return 0


def cmd_ablate(args, ctx) -> int:
    source = _source(ctx, args.traces)
    report = run_single_sample_ablation(source, ctx["experiment"], ctx["train"], ctx["seed"], args.jobs,
                                        methods=tuple(args.method or ["prod-m"]),
                                        source_config=_source_cfg(ctx, args.traces))
    write_json(report, ctx["out"] / "ablation.json")
    for ev, s in sorted(report["methods"]["prod-m"].items()):
        print(f"single-sample prod-m [{ev}] MAE {s['mean']:.3f} +/- {s['std']:.3f}")
    return 0


def cmd_budget(args, ctx) -> int:
    source = _source(ctx, args.traces)
    report = run_budget_curve(source, ctx["experiment"], ctx["train"], ctx["seed"], args.jobs,
                              _source_cfg(ctx, args.traces))
    write_json(report, ctx["out"] / "budget_curve.json")
    for m, curve in sorted(report["curves"].items()):
        pts = ", ".join(f"k={k}: {s['mean']:.2f}" for k, s in curve.items())
        print(f"{m}: {pts}")
    return 0


def cmd_theory(args, ctx) -> int:
    theory = ctx["theory"]
    results = run_theory_suite(theory, ctx["seed"])
    report = theory_report(results, theory, ctx["seed"])
    write_json(report, ctx["out"] / "theory.json")
    for r in results:
        status = "VACUOUS" if r.vacuous else ("PASS" if r.passed else "FAIL")
        print(f"{status:8s} {r.name}: empirical {r.empirical_value:.4g} vs bound {r.bound_value:.4g}")
    return 0 if report["all_pass"] else 1


def cmd_emit(args, ctx) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    files = emit_plot_data(report, ctx["out"])
    print("wrote " + ", ".join(sorted(f.name for f in files)))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-single": cmd_ablate,
    "budget-curve": cmd_budget,
    "theory": cmd_theory,
    "emit-plots": cmd_emit,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ctx = _context(args)
        return COMMANDS[args.command](args, ctx)
    except TraceFormatError as exc:
        print(f"prodctl: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ProtocolError, DegenerateGridError, OSError) as exc:
        print(f"prodctl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
