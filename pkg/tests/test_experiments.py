import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prodlen.config import ExperimentConfig, GeneratorConfig, TheoryConfig, TrainConfig
from prodlen.experiments import (
    SINGLE_SAMPLE_EXCLUSION,
    LengthSource,
    ProtocolError,
    budget_allocation,
    emit_plot_data,
    pooled_std,
    run_benchmark,
    run_budget_curve,
    run_single_sample_ablation,
    run_theory_suite,
    split_indices,
    theory_report,
    write_json,
)
from prodlen.metrics import noise_radius
from prodlen.rng import derive_seed
from prodlen.traces import TraceRecord

FAST = TrainConfig(epochs=8, hidden=16, batch_size=64)


@pytest.fixture(scope="module")
def source():
    return LengthSource.synthetic(GeneratorConfig(n_prompts=300, d=6), seed=4, scenario="heavy")


@pytest.fixture(scope="module")
def bench(source):
    return run_benchmark(source, ExperimentConfig(trials=2), FAST, seed=1)


class TestSplit:
    def test_exact_and_disjoint(self):
        ids = [f"p{i:05d}" for i in range(2500)]
        tr, te = split_indices(ids, 0.2)
        assert te.size == 500 and tr.size == 2000
        assert not set(tr) & set(te)

    def test_order_independent(self):
        ids = [f"x{i}" for i in range(50)]
        _, te = split_indices(ids)
        _, te2 = split_indices(ids[::-1])
        assert {ids[i] for i in te} == {ids[::-1][i] for i in te2}

    def test_empty_side(self):
        with pytest.raises(ProtocolError):
            split_indices(["a", "b"], 0.1)


class TestBudget:
    def test_b7473_k7(self):
        assert budget_allocation(7473, 7) == (1068, 7476)

    def test_k1(self):
        assert budget_allocation(7473, 1) == (7473, 7473)

    @given(st.integers(1, 10**6), st.integers(1, 64))
    def test_ceiling(self, B, k):
        n, total = budget_allocation(B, k)
        assert total == n * k and B <= total <= B + k - 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            budget_allocation(0, 3)


class TestBenchmark:
    def test_shape(self, bench):
        assert set(bench["methods"]) == {"constant-median", "prod-m", "prod-d"}
        assert len(bench["methods"]["prod-m"]["values"]) == 2
        assert bench["n_test"] == 60 and bench["temperature_note"] == "0.8"
        assert len(bench["trial_seeds"]) == 2 and len(bench["config_hash"]) == 16

    def test_noise_radius_definition(self, source, bench):
        _, te = split_indices(source.ids)
        L = source.draw(te, 16, derive_seed(1, "test-pool"))
        assert bench["noise_radius"] == pytest.approx(np.mean([noise_radius(x) for x in L]), rel=1e-12)

    def test_deterministic(self, source, bench):
        again = run_benchmark(source, ExperimentConfig(trials=2), FAST, seed=1)
        assert json.dumps(again, sort_keys=True) == json.dumps(bench, sort_keys=True)

    def test_jobs_do_not_change_results(self, source, bench):
        par = run_benchmark(source, ExperimentConfig(trials=2), FAST, seed=1, jobs=2)
        assert par["methods"] == bench["methods"]

    def test_easy_scenario_beats_constant(self):
        src = LengthSource.synthetic(GeneratorConfig(n_prompts=400, d=6, tail_weight_range=(0, 0)), seed=2)
        rep = run_benchmark(src, ExperimentConfig(trials=2), TrainConfig(epochs=40, hidden=32), seed=0)
        assert rep["methods"]["prod-m"]["mean"] <= rep["methods"]["constant-median"]["mean"]

    def test_insufficient_samples(self):
        recs = [TraceRecord(f"t{i}", [5] * 4, [0.1, 0.2]) for i in range(20)]
        with pytest.raises(ProtocolError, match="R_train"):
            run_benchmark(LengthSource.from_traces(recs), ExperimentConfig(), FAST)

    def test_traces_need_phi(self):
        with pytest.raises(ProtocolError, match="phi"):
            LengthSource.from_traces([TraceRecord("a", [1])])

    def test_traced_source(self):
        r = np.random.default_rng(0)
        recs = [TraceRecord(f"t{i}", r.integers(50, 500, 16).tolist(), r.uniform(-0.5, 0.5, 3).tolist())
                for i in range(60)]
        rep = run_benchmark(LengthSource.from_traces(recs), ExperimentConfig(trials=2), FAST)
        assert rep["train_samples"] == 48 * 16


class TestAblation:
    def test_prod_d_excluded(self, source):
        with pytest.raises(ProtocolError) as exc:
            run_single_sample_ablation(source, ExperimentConfig(), FAST, methods=("prod-d",))
        assert SINGLE_SAMPLE_EXCLUSION in str(exc.value)

    def test_needs_two_trials(self, source):
        with pytest.raises(ProtocolError):
            run_single_sample_ablation(source, ExperimentConfig(trials=1), FAST)

    def test_rows_per_mode(self, source):
        rep = run_single_sample_ablation(source, ExperimentConfig(trials=8), TrainConfig(epochs=2, hidden=8), seed=0)
        for ev in ("median-target", "single-label"):
            assert sum(r["eval"] == ev for r in rep["rows"]) == 8
            s = rep["methods"]["prod-m"][ev]
            assert len(s["values"]) == 8 and s["std"] > 0

    def test_gap_vanishes_without_tails(self):
        g = GeneratorConfig(n_prompts=600, d=8, tail_weight_range=(0, 0), body_sigma_range=(0.01, 0.01))
        src = LengthSource.synthetic(g, 1)
        exp, tc = ExperimentConfig(trials=4), TrainConfig(epochs=60, hidden=64)
        m = run_benchmark(src, exp, tc, 0)["methods"]["prod-m"]["values"]
        s = run_single_sample_ablation(src, exp, tc, 0)["methods"]["prod-m"]["median-target"]["values"]
        assert abs(np.mean(m) - np.mean(s)) < pooled_std(m, s)


class TestBudgetCurve:
    def test_shape_and_accounting(self, source):
        exp = ExperimentConfig(trials=2, budget_B=200, repeat_grid=[1, 2, 4, 8, 16], min_prompts=10)
        rep = run_budget_curve(source, exp, TrainConfig(epochs=2, hidden=8), seed=0)
        for m in ("prod-m", "prod-d"):
            for t in range(2):
                rows = [r for r in rep["rows"] if r["method"] == m and r["trial"] == t]
                assert len(rows) == 5
                for r in rows:
                    n, total = budget_allocation(200, r["k"])
                    assert r["n_prompts"] == n and r["total_samples"] == total

    def test_floor(self, source):
        with pytest.raises(ProtocolError, match="floor"):
            run_budget_curve(source, ExperimentConfig(budget_B=200, repeat_grid=[16]), FAST)

    def test_budget_exceeds_prompts(self, source):
        with pytest.raises(ProtocolError, match="exceeds"):
            run_budget_curve(source, ExperimentConfig(budget_B=10_000), FAST)


class TestEmit:
    def test_benchmark_files(self, bench, tmp_path):
        files = emit_plot_data(bench, tmp_path / "a")
        assert sorted(f.name for f in files) == ["config.json", "mae.csv", "noise_radius.csv"]
        emit_plot_data(bench, tmp_path / "b")
        for f in files:
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        head, *rows = (tmp_path / "a" / "mae.csv").read_text().splitlines()
        assert head.startswith("config_hash,master_seed")
        assert all(r.startswith(bench["config_hash"]) for r in rows)

    def test_round_trip_through_json(self, bench, tmp_path):
        write_json(bench, tmp_path / "r.json")
        loaded = json.loads((tmp_path / "r.json").read_text())
        emit_plot_data(loaded, tmp_path / "x")
        emit_plot_data(bench, tmp_path / "y")
        assert (tmp_path / "x" / "mae.csv").read_bytes() == (tmp_path / "y" / "mae.csv").read_bytes()

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data({"kind": "mystery"}, tmp_path)


@pytest.fixture(scope="module")
def results():
    return run_theory_suite(TheoryConfig(trials=200, mc_trials=20_000, potential_streams=20), seed=0)


class TestTheorySuite:
    def test_all_pass(self, results):
        assert all(r.passed for r in results)

    def test_vacuous_flagged(self, results):
        by = {r.name: r for r in results}
        assert by["ridge_bound[N=50,r=4,delta=0.2]"].vacuous
        live = by["ridge_bound[N=50,r=64,delta=0.2]"]
        assert not live.vacuous and live.details["regime"] == "2delta"
        assert live.details["threshold_r"] == pytest.approx(55.26, abs=0.01)

    def test_report(self, results, tmp_path):
        rep = theory_report(results, TheoryConfig(), 0)
        assert rep["all_pass"]
        write_json(rep, tmp_path / "t.json")
        assert "NaN" not in (tmp_path / "t.json").read_text()
        names = {c["name"] for c in rep["checks"]}
        assert sum(n.startswith("median_moment") for n in names) == 9
