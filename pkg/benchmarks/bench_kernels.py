"""Time the numba and numpy kernel backends on pipeline-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once untimed (numba compiles on first call) and then
timed over ``--repeat`` runs; the best time is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ptcomplete.kernels import BACKENDS


def _cases(rng):
    cloud = rng.standard_normal((2048, 3))
    anchors = rng.standard_normal((128, 3))
    dense = rng.standard_normal((2048, 3))
    dist = rng.random((640, 640))
    values = rng.standard_normal((1, 640, 64)).astype(np.float32)
    nbrs = rng.integers(0, 640, size=(1, 640, 16))
    grad = rng.standard_normal((1, 640, 64)).astype(np.float32)
    return {
        "fps 2048->512": lambda k: k.fps(cloud, 512, 0),
        "knn_direct 128x2048 k16": lambda k: k.knn_direct(anchors, cloud, 16),
        "topk_rows 640x640 k16": lambda k: k.topk_rows(dist, 16),
        "nn_search 2048x2048": lambda k: k.nn_search(dense, cloud),
        "gather_max 640x16x64": lambda k: k.gather_max(values, nbrs),
        "scatter_max_grad": lambda k: k.scatter_max_grad(grad, k.gather_max(values, nbrs)[1], 640),
    }


def best_time(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(args.seed))
    names = [n for n in ("numpy", "numba") if n in BACKENDS]
    print(f"{'kernel':<28}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases.items():
        t = {n: best_time(lambda: fn(BACKENDS[n]), args.repeat) for n in names}
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{label:<28}" + "".join(f"{t[n] * 1e3:>12.3f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
