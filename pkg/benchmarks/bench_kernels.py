"""Timing of the compiled kernels against their pure-Python twins.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
called on the shapes it sees during training or encoding of a 416x240 frame.
"""

import argparse
import time

import numpy as np

from deepframe import _fallback

try:
    from deepframe import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def coder_workload(mod, bits, ctxs):
    enc = mod.ArithmeticEncoder(64)
    for c, b in zip(ctxs, bits):
        enc.encode_bin(c, b)
    return enc.finish()


def cases(rng):
    x = rng.random((16, 24, 24, 32))
    cols = rng.random((16 * 24 * 24, 9 * 32))
    padded = rng.random((16, 28, 28, 3))
    fv = rng.random((16, 24, 24, 5))
    fh = rng.random((16, 24, 24, 5))
    grad = rng.random((16, 24, 24, 3))
    cur = rng.integers(0, 256, (240, 416), dtype=np.uint8)
    ref = rng.integers(0, 256, (240 + 64, 416 + 64), dtype=np.uint8)
    bits = [int(b) for b in rng.random(50000) < 0.2]
    ctxs = [int(c) for c in rng.integers(0, 64, 50000)]
    return {
        "im2col 16x24x24x32 k3": lambda m: m.im2col(x, 3),
        "col2im 16x24x24x32 k3": lambda m: m.col2im(cols, 16, 24, 24, 32, 3),
        "local_conv_forward 16x24x24 C5": lambda m: m.local_conv_forward(padded, fv, fh),
        "local_conv_backward 16x24x24 C5": lambda m: m.local_conv_backward(padded, fv, fh, grad),
        "sad_surface 416x240 +-24": lambda m: m.sad_surface(cur, ref, 32, 16, 24),
        "arithmetic coder 50k bins": lambda m: coder_workload(m, bits, ctxs),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':34s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        t_py = best_of(lambda: fn(_fallback), args.repeat)
        t_c = best_of(lambda: fn(compiled), args.repeat)
        print(f"{name:34s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
