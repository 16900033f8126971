#!/usr/bin/env python3
"""Compare the compiled and pure-Python kernel backends.

Times ``pair_counts`` on synthetic cascades of growing size and
``smo_solve`` on dual problems of growing order, and checks that both
backends return the same answer.

    python benchmarks/bench_kernels.py [--repeats N] [--quick]
"""

import argparse
import sys
import timeit

import numpy as np

from psmdetect import _kernels, synth
from psmdetect.action_log import build_index
from psmdetect.causal_metrics import view_stats


def pair_case(size, seed=1):
    cfg = synth.SynthConfig(seed=seed, n_users=max(1000, 2 * size), n_messages=200, viral_fraction=0.5,
                            viral_size_range=(size, size), normal_size_range=(size // 2, size // 2))
    records, _ = synth.generate(cfg)
    st = view_stats(build_index(records, size, 0.5))
    arr = st.arrays
    tracked = np.zeros(arr.n_users, dtype=bool)
    tracked[st.pairs // arr.n_users] = True
    tracked[st.pairs % arr.n_users] = True
    return (arr.offsets, arr.uid, arr.times, arr.viral, tracked, st.pairs, arr.n_users)


def smo_case(n, seed=0):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(size=(n, 4)) + 0.3 * y[:, None]
    Q = np.outer(y, y) * (X @ X.T)
    return (Q, y, 0.6, 1e-6, 10**6)


def bench(fn, args, repeats):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)

    backends = _kernels.backends()
    if "cython" not in backends:
        print("compiled backend not built; only the python backend is timed", file=sys.stderr)
    names = sorted(backends)

    sizes = [50, 100] if args.quick else [50, 100, 200, 400]
    orders = [100, 200] if args.quick else [100, 200, 400, 800]

    print(f"{'kernel':<12}{'size':>6}" + "".join(f"{n + ' [ms]':>16}" for n in names) + f"{'speedup':>10}")
    for label, make, grid, fn_name in (("pair_counts", pair_case, sizes, "pair_counts"),
                                       ("smo_solve", smo_case, orders, "smo_solve")):
        for size in grid:
            case = make(size)
            results = [getattr(backends[n], fn_name)(*case) for n in names]
            for r in results[1:]:
                for a, b in zip(results[0][:2], r[:2]):
                    np.testing.assert_array_equal(a, b)
            times = [bench(getattr(backends[n], fn_name), case, args.repeats) for n in names]
            speed = times[names.index("python")] / times[names.index("cython")] if "cython" in names else 1.0
            print(f"{label:<12}{size:>6}" + "".join(f"{1e3 * t:>16.2f}" for t in times) + f"{speed:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
