import json

import pytest

from prodlen.cli import build_parser, main

SMALL = """schema_version: 1
generator: {n_prompts: 120, d: 4}
train: {epochs: 3, hidden: 8}
experiment: {trials: 2, budget_B: 64, repeat_grid: [1, 2], min_prompts: 16}
theory: {trials: 100, mc_trials: 10000, potential_streams: 5}
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL)
    return str(p)


def _run(cfg, out, *argv):
    return main(["--config", cfg, "--seed", "5", "--out", str(out), *argv])


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _pipeline(cfg, out):
    codes = [
        _run(cfg, out, "generate"),
        _run(cfg, out, "ingest", str(out / "traces.jsonl")),
        _run(cfg, out, "label", "--traces", str(out / "traces.jsonl")),
        _run(cfg, out, "train", "--mode", "prod-d"),
        _run(cfg, out, "eval", "--model", str(out / "model.npz")),
        _run(cfg, out, "eval"),
        _run(cfg, out, "ablate-single"),
        _run(cfg, out, "budget-curve"),
        _run(cfg, out, "theory"),
        _run(cfg, out / "plots", "emit-plots", str(out / "benchmark.json")),
        _run(cfg, out / "curve", "emit-plots", str(out / "budget_curve.json")),
        _run(cfg, out / "th", "emit-plots", str(out / "theory.json")),
    ]
    return codes


def test_every_subcommand_is_deterministic(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _pipeline(cfg, a) == [0] * 12
    assert _pipeline(cfg, b) == [0] * 12
    sa, sb = _snapshot(a), _snapshot(b)
    assert sa.keys() == sb.keys()
    for name in sa:
        assert sa[name] == sb[name], name
    expected = {"traces.jsonl", "generate.json", "ingest.json", "labels.jsonl", "grid.json", "model.npz",
                "eval.json", "eval.csv", "predictions.jsonl", "benchmark.json", "ablation.json",
                "budget_curve.json", "theory.json", "plots/mae.csv", "plots/noise_radius.csv", "plots/config.json",
                "curve/budget_curve.csv", "curve/config.json", "th/theory.csv", "th/config.json"}
    assert expected <= set(sa)


def test_outputs_embed_hash_and_seed(cfg, tmp_path):
    _run(cfg, tmp_path, "eval")
    rep = json.loads((tmp_path / "benchmark.json").read_text())
    assert rep["master_seed"] == 5 and len(rep["trial_seeds"]) == 2 and rep["config_hash"]


def test_flags_after_subcommand(cfg, tmp_path):
    assert main(["generate", "--config", cfg, "--out", str(tmp_path), "--seed", "1", "--samples", "3"]) == 0
    first = (tmp_path / "traces.jsonl").read_text().splitlines()[0]
    assert len(json.loads(first)["lengths"]) == 3


def test_bad_traces_exit_code(cfg, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"prompt_id": "a", "lengths": []}\n')
    assert _run(cfg, tmp_path, "ingest", str(bad)) == 2
    assert "line 1" in capsys.readouterr().err


def test_ablation_prod_d_refused(cfg, tmp_path, capsys):
    assert _run(cfg, tmp_path, "ablate-single", "--method", "prod-d") == 2
    assert "non-degenerate" in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("experiment: {K: 1}\n")
    assert main(["--config", str(p), "--out", str(tmp_path), "theory"]) == 2
    assert "experiment.K" in capsys.readouterr().err


def test_help_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("generate", "ingest", "label", "train", "eval", "ablate-single", "budget-curve", "theory",
                "emit-plots"):
        assert cmd in text
