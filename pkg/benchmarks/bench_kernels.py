"""Time the im2col / col2im kernels and a full conv forward/backward on both backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from fvlab import _kernels as K

CASES = [  # (batch, channels, size, out channels, kernel, stride, pad)
    (32, 3, 32, 16, 3, 1, 1),
    (32, 16, 32, 32, 3, 2, 1),
    (16, 32, 16, 64, 5, 1, 2),
]


def best_of(fn, repeat):
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if K.HAS_NUMBA else [])
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'kernel':<10}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for n, c, s, co, k, st, p in CASES:
        x = rng.standard_normal((n, c, s, s))
        w = rng.standard_normal((co, c, k, k))
        out = K.conv2d_forward(x, w, st, p, backend="numpy")
        g = rng.standard_normal(out.shape)
        cols = K.im2col(x, k, k, st, p, backend="numpy")
        jobs = {
            "im2col": lambda b: K.im2col(x, k, k, st, p, backend=b),
            "col2im": lambda b: K.col2im(cols, x.shape, k, k, st, p, backend=b),
            "conv fwd": lambda b: K.conv2d_forward(x, w, st, p, backend=b),
            "conv bwd": lambda b: K.conv2d_backward(g, x, w, st, p, backend=b),
        }
        label = f"{n}x{c}x{s}x{s} k{k} s{st} -> {co}"
        for name, job in jobs.items():
            t = {b: best_of(lambda: job(b), args.repeat) for b in backends}
            speed = f"{t['numpy'] / t['numba']:>9.2f}x" if "numba" in t else ""
            print(f"{label:<28}{name:<10}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends) + speed)
            label = ""


if __name__ == "__main__":
    main()
