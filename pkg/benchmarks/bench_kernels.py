"""Compare the compiled kernels with the pure-Python reference.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from piml import _kernels_py
from piml.graph.calculus import random_graph

try:
    from piml import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    for n in (20, 50, 100):
        a = rng.normal(size=(n, n))
        yield f"jacobi_eigh n={n}", "jacobi_eigh", (a + a.T,)
    for n, p in ((100, 0.1), (300, 0.05)):
        g = random_graph(n, p, rng)
        yield f"triangles n={n} E={g.num_edges}", "triangles", (g.n, g.edges)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>8s}  same")
    for label, name, a in cases(rng):
        ref = getattr(_kernels_py, name)
        t_py = best_of(ref, a, args.repeat)
        if _kernels is None:
            print(f"{label:32s} {t_py:12.4f} {'n/a':>13s}")
            continue
        fast = getattr(_kernels, name)
        t_c = best_of(fast, a, args.repeat)
        r1, r2 = ref(*a), fast(*a)
        same = all(np.array_equal(x, y) for x, y in zip(r1, r2)) if isinstance(r1, tuple) else np.array_equal(r1, r2)
        print(f"{label:32s} {t_py:12.4f} {t_c:13.5f} {t_py / t_c:8.1f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
