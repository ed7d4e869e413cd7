"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--size 641] [--repeat 20]

Prints best-of-repeat timings per kernel and the max absolute difference
between the two backends.
"""

import argparse
import math
import timeit

import numpy as np

from atsbsde.kernels import backend, compiled_available
from atsbsde.timegrid import truncation_radius


def inputs(size, h=0.01):
    rng = np.random.default_rng(7)
    src = np.linspace(-3.0, 3.0, size)
    tgt = np.linspace(-3.2, 3.2, size + 2)
    edges = 0.5 * (tgt[1:] + tgt[:-1])
    std = np.full(size, math.sqrt(h))
    sig = np.ones(size)
    v = rng.standard_normal(size + 2)
    w = rng.standard_normal(size + 2)
    return src, std, sig, tgt, edges, v, w, h


def bench(size, repeat):
    src, std, sig, tgt, edges, v, w, h = inputs(size)
    R = truncation_radius(h)
    mods = {"python": backend("python")}
    if compiled_available():
        mods["compiled"] = backend("compiled")
    results = {}
    for name, mod in mods.items():
        P = mod.gauss_cell_probs(src, std, edges)
        H = mod.clamped_weights(src, sig, tgt, R, h)
        calls = {
            "gauss_cell_probs": lambda: mod.gauss_cell_probs(src, std, edges),
            "clamped_weights": lambda: mod.clamped_weights(src, sig, tgt, R, h),
            "weighted_sums": lambda: mod.weighted_sums(P, v, w, H),
        }
        results[name] = ({k: min(timeit.repeat(f, number=1, repeat=repeat)) for k, f in calls.items()},
                         (P, H, mod.weighted_sums(P, v, w, H)))
    print(f"size {size} x {size + 2}, best of {repeat}")
    print(f"{'kernel':<18}" + "".join(f"{n:>14}" for n in results) + ("       speedup" if len(results) == 2 else ""))
    for k in results["python"][0]:
        ts = [results[n][0][k] for n in results]
        line = f"{k:<18}" + "".join(f"{t * 1e3:>11.3f} ms" for t in ts)
        if len(ts) == 2:
            line += f"{ts[0] / ts[1]:>13.1f}x"
        print(line)
    if "compiled" in results:
        a, b = results["python"][1], results["compiled"][1]
        diff = max(float(np.max(np.abs(a[0] - b[0]))), float(np.max(np.abs(a[1] - b[1]))),
                   float(np.max(np.abs(a[2][0] - b[2][0]))), float(np.max(np.abs(a[2][1] - b[2][1]))))
        print(f"max |python - compiled| = {diff:.3e}")
    else:
        print("compiled kernels not built; python fallback only")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=641)
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()
    bench(a.size, a.repeat)
