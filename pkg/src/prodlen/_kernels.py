"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``PRODLEN_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are
importable directly as ``nb_<name>`` / ``np_<name>`` so tests and the
benchmark can compare them; the public ``<name>`` aliases point at the
selected backend.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("PRODLEN_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by PRODLEN_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


BACKEND = "numba" if HAS_NUMBA else "numpy"


# --------------------------------------------------------------------------
# row medians (midpoint rule for even counts)
# --------------------------------------------------------------------------

def np_median_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return np.median(a, axis=-1)


@njit(cache=True)
def _nb_median_rows_2d(a):
    n, r = a.shape
    out = np.empty(n)
    buf = np.empty(r)
    h = r // 2
    for i in range(n):
        for j in range(r):
            buf[j] = a[i, j]
        buf.sort()
        if r % 2 == 1:
            out[i] = buf[h]
        else:
            out[i] = (buf[h - 1] + buf[h]) / 2.0
    return out


def nb_median_rows(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    lead = a.shape[:-1]
    flat = a.reshape(-1, a.shape[-1])
    return _nb_median_rows_2d(flat).reshape(lead)


# --------------------------------------------------------------------------
# bin membership: half-open [left, right), indices clipped into the last bin
# --------------------------------------------------------------------------

def np_bin_index(values, edges):
    values = np.asarray(values, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    k = edges.shape[0] - 1
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.minimum(idx, k - 1).astype(np.int64)


@njit(cache=True)
def _nb_bin_index_1d(values, edges):
    k = edges.shape[0] - 1
    out = np.empty(values.shape[0], dtype=np.int64)
    for i in range(values.shape[0]):
        v = values[i]
        lo = 0
        hi = k + 1
        # first index with edges[idx] > v
        while lo < hi:
            mid = (lo + hi) // 2
            if edges[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        j = lo - 1
        if j > k - 1:
            j = k - 1
        out[i] = j
    return out


def nb_bin_index(values, edges):
    values = np.ascontiguousarray(values, dtype=np.float64)
    edges = np.ascontiguousarray(edges, dtype=np.float64)
    return _nb_bin_index_1d(values.ravel(), edges).reshape(values.shape)


# --------------------------------------------------------------------------
# per-row bin counts
# --------------------------------------------------------------------------

def np_bin_counts(idx, k):
    idx = np.asarray(idx, dtype=np.int64)
    n = idx.shape[0]
    out = np.zeros((n, k), dtype=np.int64)
    rows = np.repeat(np.arange(n), idx.shape[1])
    np.add.at(out, (rows, idx.ravel()), 1)
    return out


@njit(cache=True)
def _nb_bin_counts(idx, k):
    n, r = idx.shape
    out = np.zeros((n, k), dtype=np.int64)
    for i in range(n):
        for j in range(r):
            out[i, idx[i, j]] += 1
    return out


def nb_bin_counts(idx, k):
    return _nb_bin_counts(np.ascontiguousarray(idx, dtype=np.int64), int(k))


# --------------------------------------------------------------------------
# sequential self-normalized norms ||phi_i||^2_{V_{i-1}^{-1}}
# --------------------------------------------------------------------------

def np_potential_terms(phis, lam):
    phis = np.asarray(phis, dtype=np.float64)
    n, d = phis.shape
    vinv = np.eye(d) / lam
    out = np.empty(n)
    for i in range(n):
        x = phis[i]
        vx = vinv @ x
        q = float(x @ vx)
        out[i] = q
        vinv -= np.outer(vx, vx) / (1.0 + q)
    return out


@njit(cache=True)
def _nb_potential_terms(phis, lam):
    n, d = phis.shape
    vinv = np.zeros((d, d))
    for a in range(d):
        vinv[a, a] = 1.0 / lam
    out = np.empty(n)
    vx = np.empty(d)
    for i in range(n):
        for a in range(d):
            s = 0.0
            for b in range(d):
                s += vinv[a, b] * phis[i, b]
            vx[a] = s
        q = 0.0
        for a in range(d):
            q += phis[i, a] * vx[a]
        out[i] = q
        scale = 1.0 / (1.0 + q)
        for a in range(d):
            for b in range(d):
                vinv[a, b] -= vx[a] * vx[b] * scale
    return out


def nb_potential_terms(phis, lam):
    return _nb_potential_terms(np.ascontiguousarray(phis, dtype=np.float64), float(lam))


# --------------------------------------------------------------------------
# cumulative-median decoding of K-bin distributions
# --------------------------------------------------------------------------

def np_decode_median_rows(probs, left, width):
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    cum = np.cumsum(probs, axis=1)
    k = probs.shape[1]
    kstar = np.minimum((cum < 0.5).sum(axis=1), k - 1)
    rows = np.arange(probs.shape[0])
    before = np.where(kstar > 0, cum[rows, np.maximum(kstar - 1, 0)], 0.0)
    q = probs[rows, kstar]
    return left[kstar] + (0.5 - before) / q * width[kstar]


@njit(cache=True)
def _nb_decode_median_rows(probs, left, width):
    n, k = probs.shape
    out = np.empty(n)
    for i in range(n):
        kstar = k - 1
        before = 0.0
        c = 0.0
        for j in range(k - 1):
            if c + probs[i, j] >= 0.5:
                kstar = j
                break
            c += probs[i, j]
        before = c
        out[i] = left[kstar] + (0.5 - before) / probs[i, kstar] * width[kstar]
    return out


def nb_decode_median_rows(probs, left, width):
    probs = np.ascontiguousarray(np.atleast_2d(probs), dtype=np.float64)
    return _nb_decode_median_rows(
        probs,
        np.ascontiguousarray(left, dtype=np.float64),
        np.ascontiguousarray(width, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# absolute-error risk of every candidate against a finite pmf
# --------------------------------------------------------------------------

def np_risk_curve(support, probs, candidates):
    support = np.asarray(support, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    return np.abs(support[None, :] - candidates[:, None]) @ probs


@njit(cache=True)
def _nb_risk_curve(support, probs, candidates):
    out = np.empty(candidates.shape[0])
    for c in range(candidates.shape[0]):
        s = 0.0
        a = candidates[c]
        for j in range(support.shape[0]):
            s += abs(support[j] - a) * probs[j]
        out[c] = s
    return out


def nb_risk_curve(support, probs, candidates):
    return _nb_risk_curve(
        np.ascontiguousarray(support, dtype=np.float64),
        np.ascontiguousarray(probs, dtype=np.float64),
        np.ascontiguousarray(candidates, dtype=np.float64),
    )


KERNELS = ("median_rows", "bin_index", "bin_counts", "potential_terms", "decode_median_rows", "risk_curve")

if HAS_NUMBA:
    median_rows = nb_median_rows
    bin_index = nb_bin_index
    bin_counts = nb_bin_counts
    potential_terms = nb_potential_terms
    decode_median_rows = nb_decode_median_rows
    risk_curve = nb_risk_curve
else:
    median_rows = np_median_rows
    bin_index = np_bin_index
    bin_counts = np_bin_counts
    potential_terms = np_potential_terms
    decode_median_rows = np_decode_median_rows
    risk_curve = np_risk_curve
