"""Numba and numpy kernel paths must agree."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prodlen import _kernels as K

lengths_2d = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
    elements=st.integers(0, 5000).map(float),
)


def test_backend_name_matches_flag():
    assert K.BACKEND == ("numba" if K.HAS_NUMBA else "numpy")
    for name in K.KERNELS:
        assert getattr(K, name) is getattr(K, ("nb_" if K.HAS_NUMBA else "np_") + name)


@given(lengths_2d)
def test_median_rows_agree(a):
    np.testing.assert_array_equal(K.nb_median_rows(a), K.np_median_rows(a))
    np.testing.assert_array_equal(K.np_median_rows(a), np.median(a, axis=1))


def test_median_rows_3d():
    a = np.arange(24, dtype=float).reshape(2, 3, 4)
    np.testing.assert_array_equal(K.np_median_rows(a), np.median(a, axis=-1))
    np.testing.assert_array_equal(K.nb_median_rows(a), np.median(a, axis=-1))


@given(hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 200)),
       st.lists(st.floats(1, 50), min_size=1, max_size=8))
def test_bin_index_agree(values, widths):
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    a = K.nb_bin_index(values, edges)
    b = K.np_bin_index(values, edges)
    np.testing.assert_array_equal(a, b)
    assert np.all((b >= 0) & (b < len(widths)))


def test_bin_index_edge_goes_right():
    edges = np.array([0.0, 10.0, 20.0])
    for fn in (K.nb_bin_index, K.np_bin_index):
        np.testing.assert_array_equal(fn(np.array([0.0, 9.999, 10.0, 20.0, 1e9]), edges), [0, 0, 1, 1, 1])


@given(hnp.arrays(np.int64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=10),
                  elements=st.integers(0, 6)))
def test_bin_counts_agree(idx):
    a = K.nb_bin_counts(idx, 7)
    b = K.np_bin_counts(idx, 7)
    np.testing.assert_array_equal(a, b)
    assert np.all(b.sum(axis=1) == idx.shape[1])


@given(st.integers(1, 6), st.integers(1, 40), st.floats(0.05, 5.0), st.integers(0, 2**31))
def test_potential_terms_agree(d, n, lam, seed):
    phis = np.random.default_rng(seed).uniform(-1, 1, (n, d)) / np.sqrt(d)
    np.testing.assert_allclose(K.nb_potential_terms(phis, lam), K.np_potential_terms(phis, lam), rtol=1e-12, atol=1e-14)


def test_potential_terms_direct(rng):
    phis = rng.uniform(-1, 1, (30, 4)) / 2
    lam = 0.7
    V = lam * np.eye(4)
    ref = []
    for p in phis:
        ref.append(p @ np.linalg.solve(V, p))
        V += np.outer(p, p)
    np.testing.assert_allclose(K.potential_terms(phis, lam), ref, rtol=1e-10)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=8),
                  elements=st.floats(0.001, 1.0)))
def test_decode_agree(raw):
    probs = raw / raw.sum(axis=1, keepdims=True)
    k = probs.shape[1]
    left = np.arange(k) * 10.0
    width = np.full(k, 10.0)
    np.testing.assert_allclose(K.nb_decode_median_rows(probs, left, width),
                               K.np_decode_median_rows(probs, left, width), rtol=0, atol=1e-9)


@given(st.lists(st.integers(0, 30), min_size=1, max_size=6, unique=True), st.integers(0, 2**31))
def test_risk_curve_agree(support, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(len(support)))
    cand = np.arange(0, 31)
    a = K.nb_risk_curve(np.array(support), p, cand)
    b = K.np_risk_curve(np.array(support), p, cand)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    ref = [sum(pi * abs(s - c) for s, pi in zip(support, p)) for c in cand]
    np.testing.assert_allclose(b, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not K.HAS_NUMBA, reason="numba unavailable")
def test_env_flag_selects_numpy(tmp_path):
    import os
    import subprocess
    import sys

    env = dict(os.environ, PRODLEN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import prodlen._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
