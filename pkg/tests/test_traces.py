import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prodlen.config import GeneratorConfig
from prodlen.lengthdist import make_dataset, sample_pools
from prodlen.traces import TraceFormatError, TraceRecord, ingest, prompts_to_traces, write_traces


def _write(tmp_path, lines):
    p = tmp_path / "t.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_three_valid_lines(tmp_path):
    p = _write(tmp_path, [json.dumps({"prompt_id": f"q{i}", "phi": [0.1, 0.2], "lengths": [1, 2, 3]})
                          for i in range(3)])
    recs = ingest(p)
    assert [r.prompt_id for r in recs] == ["q0", "q1", "q2"]


def test_empty_lengths_names_line(tmp_path):
    p = _write(tmp_path, ['{"prompt_id": "a", "lengths": [4]}', '{"prompt_id": "b", "lengths": []}'])
    with pytest.raises(TraceFormatError, match="line 2"):
        ingest(p)


def test_mixed_dimension(tmp_path):
    p = _write(tmp_path, ['{"prompt_id": "a", "phi": [0, 0, 0, 0], "lengths": [4]}',
                          '{"prompt_id": "b", "phi": [0, 0, 0, 0, 0], "lengths": [4]}'])
    with pytest.raises(TraceFormatError, match="dimension"):
        ingest(p)


@pytest.mark.parametrize("line, msg", [
    ('{"prompt_id": "a"}', "missing lengths"),
    ('{"prompt_id": "a", "lengths": [1.5]}', "non-integer"),
    ('{"prompt_id": "a", "lengths": ["3"]}', "non-integer"),
    ('{"prompt_id": "a", "lengths": [-1]}', "negative"),
    ('{"prompt_id": "a", "lengths": [true]}', "non-integer"),
    ('not json', "malformed"),
    ('{"lengths": [1]}', "prompt_id"),
    ('{"prompt_id": "a", "lengths": [1], "phi": ["x"]}', "phi"),
])
def test_bad_lines(tmp_path, line, msg):
    with pytest.raises(TraceFormatError, match=msg):
        ingest(_write(tmp_path, ['{"prompt_id": "ok", "lengths": [1]}', line]))


def test_all_problems_reported(tmp_path):
    p = _write(tmp_path, ['{"prompt_id": "a", "lengths": []}', '{"prompt_id": "a", "lengths": [1]}',
                          '{"prompt_id": "a", "lengths": [2]}'])
    with pytest.raises(TraceFormatError) as exc:
        ingest(p)
    assert len(exc.value.problems) == 2
    assert "duplicate" in exc.value.problems[1]


@given(st.lists(st.lists(st.integers(0, 10**6), min_size=1, max_size=10), min_size=1, max_size=10))
def test_round_trip(tmp_path_factory, pools):
    recs = [TraceRecord(f"id{i}", xs, [0.5, -0.25], {"k": "v"}) for i, xs in enumerate(pools)]
    path = write_traces(recs, tmp_path_factory.mktemp("rt") / "x.jsonl")
    assert ingest(path) == recs


def test_from_prompts(tmp_path):
    ps = make_dataset(GeneratorConfig(n_prompts=4, d=3), 0)
    pools = sample_pools(ps, 5, 1)
    recs = prompts_to_traces(ps, pools, {"src": "synthetic"})
    back = ingest(write_traces(recs, tmp_path / "s.jsonl"))
    assert [r.lengths for r in back] == [p.lengths.tolist() for p in pools]
    np.testing.assert_array_equal(back[0].phi, ps[0].phi)
    assert back[0].meta["src"] == "synthetic" and back[0].meta["family"] == "lognormal-pareto-mix"
