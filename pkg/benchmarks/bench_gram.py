"""Compare the compiled and NumPy Gram-sum backends.

    python3 benchmarks/bench_gram.py [--repeat 3] [--sizes 500x16 2000x64 2000x1024]

Each size ``NxD`` times one ``gram_sum`` of two N-patch bags in D dimensions
(the cross term of one MMD^2 evaluation) and checks the backends agree.
"""

import argparse
import time

import numpy as np

from wsimmd._backend import BACKENDS


def parse_size(text):
    n, d = text.lower().split("x")
    return int(n), int(d)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        value = fn()
        times.append(time.perf_counter() - t0)
    return min(times), value


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", type=parse_size,
                    default=[(500, 16), (2000, 16), (2000, 64), (1000, 512), (2000, 1024)])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--block", type=int, default=256)
    ap.add_argument("--sigma", type=float, default=10.0)
    args = ap.parse_args(argv)

    names = sorted(BACKENDS)
    if "cython" not in BACKENDS:
        print("compiled backend not built; timing the NumPy fallback only")
    scale = 1.0 / (4.0 * args.sigma ** 2)
    rng = np.random.default_rng(0)
    header = f"{'size':>12} " + " ".join(f"{n + ' (s)':>14}" for n in names)
    if len(names) == 2:
        header += f" {'speedup':>9} {'rel diff':>10}"
    print(header)
    for n, d in args.sizes:
        a = rng.standard_normal((n, d))
        b = rng.standard_normal((n, d)) + 0.1
        results = {name: best_time(lambda f=BACKENDS[name]: f(a, b, scale, args.block), args.repeat)
                   for name in names}
        row = f"{n:>6}x{d:<5} " + " ".join(f"{results[k][0]:>14.4f}" for k in names)
        if len(names) == 2:
            (tc, vc), (tp, vp) = results["cython"], results["python"]
            row += f" {tp / tc:>8.2f}x {abs(vc - vp) / abs(vp):>10.1e}"
        print(row)


if __name__ == "__main__":
    main()
