"""Supervision targets from repeated length samples.

Two targets share one bin grid: the median label (one-hot on the bin of
the sample median) and the empirical histogram of all samples.  Bins are
half-open ``[left, right)``; when ``open_last`` is set the last bin also
absorbs everything at or beyond its nominal right edge.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels
from .lengthdist import SamplePool


class DegenerateGridError(ValueError):
    pass


class OutOfGridError(ValueError):
    pass


@dataclass(frozen=True)
class BinGrid:
    """``K`` ordered bins over length space.

    ``edges`` has ``K + 1`` strictly increasing entries; ``edges[K]`` may be
    ``inf``, which forces ``open_last``.  ``merged_from`` records the
    requested ``K`` when a quantile grid had to merge duplicate edges.
    """

    edges: tuple
    open_last: bool = True
    merged_from: int | None = None

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ValueError("a bin grid needs at least two edges")
        if edges[0] < 0 or not np.isfinite(edges[0]):
            raise ValueError("edges[0] must be finite and >= 0")
        if any(not b > a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly increasing")
        if any(np.isinf(e) for e in edges[1:-1]):
            raise ValueError("only the last edge may be infinite")
        if np.isinf(edges[-1]):
            object.__setattr__(self, "open_last", True)
            if len(edges) < 3:
                raise ValueError("an unbounded last bin needs a finite neighbour to borrow its width")

    @property
    def K(self) -> int:
        return len(self.edges) - 1

    @property
    def edges_array(self) -> np.ndarray:
        return np.asarray(self.edges)

    @property
    def left(self) -> np.ndarray:
        return self.edges_array[:-1]

    @property
    def decode_width(self) -> np.ndarray:
        """Bin widths used for interpolation; an infinite last bin borrows its neighbour's."""
        w = np.diff(self.edges_array)
        if np.isinf(w[-1]):
            w[-1] = w[-2]
        return w

    @property
    def grid_id(self) -> str:
        payload = json.dumps({"edges": list(self.edges), "open_last": self.open_last})
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def index(self, values) -> np.ndarray:
        """Bin index of each value; raises ``OutOfGridError`` for uncovered values."""
        values = np.asarray(values, dtype=np.float64)
        if np.any(values < self.edges[0]):
            bad = values[values < self.edges[0]].min()
            raise OutOfGridError(f"length {bad} lies below the first edge {self.edges[0]}")
        if not self.open_last and np.any(values > self.edges[-1]):
            bad = values[values > self.edges[-1]].max()
            raise OutOfGridError(f"length {bad} lies above the closed last edge {self.edges[-1]}")
        return _kernels.bin_index(values, self.edges_array)

    def to_dict(self) -> dict:
        return {
            "grid_id": self.grid_id,
            "edges": [e if np.isfinite(e) else "inf" for e in self.edges],
            "open_last": self.open_last,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinGrid":
        edges = [float(e) for e in d["edges"]]
        return cls(edges=tuple(edges), open_last=bool(d.get("open_last", True)))


@dataclass
class MedianLabel:
    prompt_id: str
    median_length: float
    onehot: np.ndarray

    @property
    def bin(self) -> int:
        return int(np.argmax(self.onehot))


@dataclass
class DistLabel:
    prompt_id: str
    hist: np.ndarray
    counts: np.ndarray

    def exact(self) -> list[Fraction]:
        """Histogram entries as exact ratios ``count / r``."""
        r = int(self.counts.sum())
        return [Fraction(int(c), r) for c in self.counts]


def sample_median(lengths) -> float:
    """Sample median; even counts take the midpoint of the two middle values."""
    x = np.sort(np.asarray(lengths, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("median of an empty list is undefined")
    h = n // 2
    return float(x[h]) if n % 2 else float((x[h - 1] + x[h]) / 2.0)


def sample_medians(lengths) -> np.ndarray:
    """Row-wise ``sample_median`` of an ``(n, r)`` matrix."""
    return _kernels.median_rows(np.asarray(lengths, dtype=np.float64))


def make_bin_grid(train_lengths, K: int, policy: str = "equal-width") -> BinGrid:
    """Build a grid from training lengths.

    ``equal-width`` spans ``[0, p99]`` (inverted-CDF 99th percentile, widened
    to ``max + 1`` when all lengths coincide) with an open last bin.
    ``quantile`` places edges at linearly interpolated empirical quantiles,
    merging duplicates, which can reduce ``K`` (see ``merged_from``).
    """
    x = np.asarray(train_lengths, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("train_lengths must be non-empty")
    if K < 2:
        raise ValueError("K must be >= 2")
    if policy == "equal-width":
        bin_max = float(np.percentile(x, 99, method="inverted_cdf"))
        if x.min() == x.max() or bin_max <= 0:
            bin_max = float(x.max()) + 1.0
        return BinGrid(edges=tuple(np.linspace(0.0, bin_max, K + 1)), open_last=True)
    if policy == "quantile":
        if x.min() == x.max():
            raise DegenerateGridError(f"all {x.size} training lengths equal {x[0]:g}; quantile grid is degenerate")
        edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, K + 1)))
        merged = K if edges.size - 1 < K else None
        return BinGrid(edges=tuple(edges), open_last=True, merged_from=merged)
    raise ValueError(f"unknown grid policy {policy!r}")


def project_histogram(pool: SamplePool, grid: BinGrid) -> DistLabel:
    idx = grid.index(pool.lengths)
    counts = _kernels.bin_counts(idx[None, :], grid.K)[0]
    return DistLabel(prompt_id=pool.prompt_id, hist=counts / pool.r, counts=counts)


def make_median_label(pool: SamplePool, grid: BinGrid) -> MedianLabel:
    grid.index(pool.lengths)
    med = sample_median(pool.lengths)
    onehot = np.zeros(grid.K)
    onehot[int(grid.index([med])[0])] = 1.0
    return MedianLabel(prompt_id=pool.prompt_id, median_length=med, onehot=onehot)


def label_record(pool: SamplePool, grid: BinGrid) -> dict:
    """JSONL-ready ``{prompt_id, median, hist, grid_id}`` record."""
    med = make_median_label(pool, grid)
    dist = project_histogram(pool, grid)
    return {
        "prompt_id": pool.prompt_id,
        "median": med.median_length,
        "median_bin": med.bin,
        "hist": dist.hist.tolist(),
        "grid_id": grid.grid_id,
    }


def pool_matrix_labels(lengths: np.ndarray, grid: BinGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized labels for an ``(n, r)`` length matrix.

    Returns medians ``(n,)``, median one-hots ``(n, K)`` and histograms ``(n, K)``.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    idx = grid.index(lengths)
    hist = _kernels.bin_counts(idx, grid.K) / lengths.shape[1]
    med = sample_medians(lengths)
    onehot = np.zeros((lengths.shape[0], grid.K))
    onehot[np.arange(lengths.shape[0]), grid.index(med)] = 1.0
    return med, onehot, hist
