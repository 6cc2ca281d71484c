"""Time the numba and numpy attention kernels on training-sized batches.

    python benchmarks/bench_kernels.py --batch 24 --nodes 20 --heads 8 --width 8

Prints the median wall time of each kernel per path and checks that the two
paths agree.
"""

import argparse
import statistics
import time

import numpy as np

from skan import _kernels


def make_inputs(rng, B, H, n, m, density=0.3):
    src = rng.normal(size=(B, H, n, m))
    dst = rng.normal(size=(B, H, n, m))
    rel = rng.normal(size=(B, H, n, n, m))
    adj = rng.random((B, n, n)) < density
    adj = adj | adj.transpose(0, 2, 1)
    mask = adj | np.eye(n, dtype=bool)[None]
    att = rng.normal(size=(H, m))
    return src, dst, rel, mask, att


def timeit(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batch", type=int, default=24)
    ap.add_argument("--nodes", type=int, default=20)
    ap.add_argument("--heads", type=int, default=8)
    ap.add_argument("--width", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not _kernels.USE_NUMBA:
        print("numba unavailable or disabled (SKAN_NUMBA=0); timing numpy only")
    rng = np.random.default_rng(args.seed)
    src, dst, rel, mask, att = make_inputs(rng, args.batch, args.heads, args.nodes, args.width)
    paths = [False] + ([True] if _kernels.USE_NUMBA else [])
    results = {}
    for use in paths:
        gamma = _kernels.attention_forward(src, dst, rel, mask, att, 0.2, use_numba=use)
        g = rng.normal(size=gamma.shape)
        _kernels.attention_backward(g, gamma, src, dst, rel, mask, att, 0.2, use_numba=use)  # warm-up / jit
        fwd = timeit(lambda: _kernels.attention_forward(src, dst, rel, mask, att, 0.2, use_numba=use), args.repeat)
        bwd = timeit(
            lambda: _kernels.attention_backward(g, gamma, src, dst, rel, mask, att, 0.2, use_numba=use), args.repeat
        )
        results["numba" if use else "numpy"] = (fwd, bwd, gamma)

    print(f"B={args.batch} n={args.nodes} H={args.heads} m={args.width}, median of {args.repeat}")
    print(f"{'path':8}{'forward ms':>12}{'backward ms':>13}")
    for name, (fwd, bwd, _) in results.items():
        print(f"{name:8}{fwd * 1e3:12.3f}{bwd * 1e3:13.3f}")
    if len(results) == 2:
        diff = np.abs(results["numba"][2] - results["numpy"][2]).max()
        f = results["numpy"][0] / results["numba"][0]
        b = results["numpy"][1] / results["numba"][1]
        print(f"speed-up forward {f:.2f}x, backward {b:.2f}x; max |gamma difference| {diff:.2e}")


if __name__ == "__main__":
    main()
