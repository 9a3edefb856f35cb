"""Time the compiled kernels against the numpy fallback on desk-scale shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from onn.engine import _kernels_py as py

try:
    from onn.engine import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    # batch 8, first and last conv of the desk CNN
    x1 = rng.random((8, 32, 32, 16), dtype=np.float32)
    x3 = rng.random((8, 8, 8, 64), dtype=np.float32)
    c1 = py.im2col(x1, 3, 3, 1)
    c3 = py.im2col(x3, 3, 3, 1)
    pool_in = rng.random((8, 16, 32, 32), dtype=np.float32)
    _, arg = py.maxpool2x2_forward(pool_in)
    g_pool = rng.random((8, 16, 16, 16), dtype=np.float32)
    xd = rng.random((8, 1024), dtype=np.float32)
    wd = rng.random((1024, 128), dtype=np.float32)
    bd = rng.random(128, dtype=np.float32)
    return {
        "im2col 8x32x32x16": lambda k: k.im2col(x1, 3, 3, 1),
        "im2col 8x8x8x64": lambda k: k.im2col(x3, 3, 3, 1),
        "col2im 8x32x32x16": lambda k: k.col2im(c1, 8, 32, 32, 16, 3, 3, 1),
        "col2im 8x8x8x64": lambda k: k.col2im(c3, 8, 8, 8, 64, 3, 3, 1),
        "maxpool fwd 8x16x32x32": lambda k: k.maxpool2x2_forward(pool_in),
        "maxpool bwd 8x16x32x32": lambda k: k.maxpool2x2_backward(g_pool, arg),
        "dense fwd 8x1024x128": lambda k: k.dense_forward(xd, wd, bd),
    }


def best_ms(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s}{'python ms':>11s}{'compiled ms':>13s}{'speedup':>9s}")
    for name, call in cases(rng).items():
        t_py = best_ms(lambda: call(py), args.repeat)
        if compiled is None:
            print(f"{name:26s}{t_py:11.3f}{'n/a':>13s}")
            continue
        t_c = best_ms(lambda: call(compiled), args.repeat)
        print(f"{name:26s}{t_py:11.3f}{t_c:13.3f}{t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
