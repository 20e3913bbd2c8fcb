"""Time every kernel under both backends.

    python benchmarks/bench_kernels.py [--repeat 5]

The numba column excludes compilation (one warm-up call first). Each row
also checks that the two backends agree on the benchmark input.
"""

import argparse
import time

import numpy as np

from salmonkit import _kernels
from salmonkit.gtgen import gaussian_kernel


def cases(rng):
    k = gaussian_kernel(20.0)
    n = 400
    yield "splat_gaussian", (768, 1024, rng.integers(0, 1024, n), rng.integers(0, 768, n),
                             rng.integers(1, 4, n).astype(np.float64), k)
    r = rng.random(400)
    yield "tau_counts", (r, rng.random(400), 1e-9)
    yield "tau_combined_counts", (r, rng.random((3, 400)), 1e-9)
    bins = rng.integers(0, 256, 1024 * 768)
    yield "label_histograms", (bins, rng.integers(0, 6, bins.size), 256, 6)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    backends = [b for b in ("numpy", "numba") if b in _kernels.IMPLEMENTATIONS]
    print(f"{'kernel':<22}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + f"{'speedup':>10}  agree")
    for name, kargs in cases(rng):
        outs, times = {}, {}
        for b in backends:
            fn = _kernels.IMPLEMENTATIONS[b][name]
            outs[b] = fn(*kargs)  # warm-up, compiles numba
            times[b] = best_of(fn, kargs, args.repeat)
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        agree = same(outs["numpy"], outs["numba"]) if "numba" in outs else True
        print(f"{name:<22}" + "".join(f"{times[b] * 1e3:>14.2f}" for b in backends)
              + f"{speed:>9.1f}x  {agree}")


if __name__ == "__main__":
    main()
