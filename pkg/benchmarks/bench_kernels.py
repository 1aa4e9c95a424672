"""Time the numba kernels against the pure-numpy fallback.

Runs each dispatched kernel on training-sized inputs plus one
end-to-end taped forward/backward, under both backends, and prints a
table of best-of-N wall times.  Usage:

    python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]
"""

import argparse
import time

import numpy as np

from proxslim import Hyperparams, gen_synthetic, init_state, tiny_vgg
from proxslim import kernels
from proxslim.network import loss_and_grads
from proxslim.report import render_table


def best_of(fn, repeat):
    fn()  # warmup (first numba call compiles)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(batch):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, 8, 14, 14))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    y = kernels.conv2d_fwd(x, w, b)
    dy = rng.normal(size=y.shape)
    px = rng.normal(size=(batch, 16, 12, 12))
    pooled = kernels.softmax_pool_fwd(px, 2, 10.0)
    pdy = rng.normal(size=pooled.shape)
    _, idx = kernels.max_pool_fwd(px, 2)
    return [
        ("conv2d_fwd", lambda: kernels.conv2d_fwd(x, w, b)),
        ("conv2d_bwd_input", lambda: kernels.conv2d_bwd_input(dy, w, 14, 14)),
        ("conv2d_bwd_weights", lambda: kernels.conv2d_bwd_weights(x, dy, 3, 3)),
        ("softmax_pool_fwd", lambda: kernels.softmax_pool_fwd(px, 2, 10.0)),
        ("softmax_pool_bwd",
         lambda: kernels.softmax_pool_bwd(px, pooled, pdy, 2, 10.0)),
        ("max_pool_fwd", lambda: kernels.max_pool_fwd(px, 2)),
        ("max_pool_bwd", lambda: kernels.max_pool_bwd(pdy, idx, 2, 12, 12)),
    ]


def end_to_end(batch):
    data = gen_synthetic(4, max(batch // 4, 1), dims=(3, 14, 14), seed=0)
    net = tiny_vgg()
    state = init_state(net, 0)
    return ("loss_and_grads (tiny_vgg)", lambda: loss_and_grads(
        net, state.w, state.gamma, data.x, data.y))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20,
                        help="timing repetitions per case (best is kept)")
    parser.add_argument("--batch", type=int, default=32,
                        help="batch size for the kernel inputs")
    args = parser.parse_args(argv)

    if not kernels.numba_available():
        parser.error("numba is not installed; nothing to compare")

    rows = []
    cases = kernel_cases(args.batch) + [end_to_end(args.batch)]
    for name, fn in cases:
        row = {"kernel": name}
        for backend in ("numpy", "numba"):
            with kernels.use_backend(backend):
                row[backend] = best_of(fn, args.repeat)
        row["speedup"] = row["numpy"] / row["numba"]
        row["numpy"] = f"{row['numpy'] * 1e3:.3f} ms"
        row["numba"] = f"{row['numba'] * 1e3:.3f} ms"
        row["speedup"] = f"{row['speedup']:.2f}x"
        rows.append(row)

    print(f"batch={args.batch} repeat={args.repeat} "
          f"(best of N, numba warmup excluded)")
    print(render_table(rows), end="")


if __name__ == "__main__":
    main()
