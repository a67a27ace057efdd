"""Time the compiled and pure-numpy 3x3 convolution backends.

    python benchmarks/bench_conv.py [--batch 16] [--size 64] [--repeat 5]

Shapes follow a trunk layer of the default model (62 -> 64 channels) and the
first layer (1 -> 64).  Prints the best-of-``repeat`` wall time per backend.
"""

import argparse
import time

import numpy as np

from ardn import tensor_core
from ardn.tensor_core import ConvParams, conv2d_backward, conv2d_forward


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = tensor_core.available_backends()
    rs = np.random.default_rng(0)
    rows = []
    for cin in (1, 62):
        for dtype in (np.float32, np.float64):
            x = rs.standard_normal((args.batch, cin, args.size, args.size)).astype(dtype)
            p = ConvParams(rs.standard_normal((64, cin, 3, 3)).astype(dtype), np.zeros(64, dtype))
            g = rs.standard_normal((args.batch, 64, args.size, args.size)).astype(dtype)
            times = {}
            for name in backends:
                tensor_core.set_backend(name)
                conv2d_forward(x, p)  # warm up
                fwd = best_time(lambda: conv2d_forward(x, p), args.repeat)
                bwd = best_time(lambda: conv2d_backward(g, x, p), args.repeat)
                times[name] = (fwd, bwd)
            rows.append((cin, np.dtype(dtype).name, times))
    tensor_core.set_backend(backends[0])

    print(f"batch {args.batch}, {args.size}x{args.size}, 64 output channels, best of {args.repeat}")
    head = f"{'in ch':>5}  {'dtype':>7}  " + "  ".join(f"{b + ' fwd':>14}  {b + ' bwd':>14}" for b in backends)
    if len(backends) > 1:
        head += f"  {'speedup':>8}"
    print(head)
    for cin, dt, times in rows:
        line = f"{cin:>5}  {dt:>7}  " + "  ".join(
            f"{times[b][0] * 1e3:>11.1f} ms  {times[b][1] * 1e3:>11.1f} ms" for b in backends)
        if len(backends) > 1:
            line += f"  {sum(times['python']) / sum(times['compiled']):>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
