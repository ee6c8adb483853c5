#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the patch-rearrangement and pooling primitives on training-shaped
tensors, plus a full U-Net forward/backward step through each backend.

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from forestseg import kernels
from forestseg.nn import ops
from forestseg.nn.autodiff import Tensor, backward
from forestseg.nn.models import ModelConfig, build_model
from forestseg.nn.optim import Adam


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(repeats):
    rng = np.random.default_rng(0)
    cases = [
        ("im2col 16x32x64x64 k3", lambda x: kernels.im2col(x, 3, 3, 1, 1),
         rng.standard_normal((16, 32, 64, 64)).astype(np.float32)),
        ("maxpool 16x32x64x64", lambda x: kernels.maxpool2x2(x),
         rng.standard_normal((16, 32, 64, 64)).astype(np.float32)),
    ]
    dcols = rng.standard_normal((16, 64 * 64, 32 * 9)).astype(np.float32)
    cases.append(
        ("col2im 16x32x64x64 k3", lambda c: kernels.col2im(c, 64, 64, 3, 3, 1, 1), dcols)
    )
    rows = []
    for name, fn, arg in cases:
        times = {}
        for backend in sorted(kernels._BACKENDS):
            kernels.set_backend(backend)
            times[backend] = timeit(lambda: fn(arg), repeats)
        rows.append((name, times))
    return rows


def bench_training_step(repeats):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 2, 64, 64)).astype(np.float32)
    y = (rng.random((8, 1, 64, 64)) < 0.7).astype(np.float32)

    def step_factory():
        model = build_model(
            ModelConfig(arch="unet", in_channels=2, base_width=16, depth=3, seed=0)
        )
        opt = Adam(model.named_parameters(), lr=1e-3)

        def step():
            opt.zero_grad()
            loss = ops.weighted_bce_loss(model(Tensor(x)), y, 0.3, 0.7)
            backward(loss)
            opt.step()

        return step

    times = {}
    for backend in sorted(kernels._BACKENDS):
        kernels.set_backend(backend)
        times[backend] = timeit(step_factory(), repeats)
    return [("unet fwd+bwd step 8x2x64x64 (bw16,d3)", times)]


def report(rows):
    backends = sorted(kernels._BACKENDS)
    header = f"{'case':44s}" + "".join(f"{b:>12s}" for b in backends)
    if "cython" in backends and "numpy" in backends:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for name, times in rows:
        line = f"{name:44s}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in times and "numpy" in times:
            line += f"{times['numpy'] / times['cython']:>9.2f}x"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if not kernels.HAVE_EXTENSION:
        print("note: compiled extension unavailable; timing the fallback only")
    rows = bench_primitives(args.repeats) + bench_training_step(args.repeats)
    report(rows)


if __name__ == "__main__":
    main()
