"""Time the numba kernels against their numpy fallbacks.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel runs once untimed (JIT warm-up), then the best of ``--repeat``
runs is reported for both paths.  Outputs of the two paths are compared.
"""

import argparse
import time

import numpy as np

from prodlen import _kernels as K


def cases(scale: float, rng: np.random.Generator):
    n = max(1, int(2000 * scale))
    lengths = rng.integers(1, 5000, size=(n, 16)).astype(np.float64)
    edges = np.linspace(0, 4000, 21)
    idx = K.np_bin_index(lengths, edges)
    phis = rng.normal(size=(max(1, int(500 * scale)), 8)) / 4
    probs = rng.dirichlet(np.ones(20), size=n)
    left, width = edges[:-1], np.diff(edges)
    support = np.sort(rng.choice(5000, size=50, replace=False))
    p = rng.dirichlet(np.ones(50))
    cand = np.arange(0, 5000)
    return {
        "median_rows": (lengths,),
        "bin_index": (lengths.ravel(), edges),
        "bin_counts": (idx, 20),
        "potential_terms": (phis, 1.0),
        "decode_median_rows": (probs, left, width),
        "risk_curve": (support, p, cand),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not K.HAS_NUMBA:
        print("numba unavailable or disabled; both columns time the numpy path")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':22s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>9s}  match")
    for name, a in cases(args.scale, rng).items():
        nb, npf = getattr(K, "nb_" + name), getattr(K, "np_" + name)
        nb(*a)
        t_np, out_np = best_of(npf, a, args.repeat)
        t_nb, out_nb = best_of(nb, a, args.repeat)
        match = np.allclose(out_np, out_nb, rtol=1e-10, atol=1e-10)
        print(f"{name:22s} {1e3 * t_np:12.3f} {1e3 * t_nb:12.3f} {t_np / t_nb:8.2f}x  {match}")


if __name__ == "__main__":
    main()
