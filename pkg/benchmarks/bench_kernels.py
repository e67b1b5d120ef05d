#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the numpy fallback.

Times the three hot kernels on training-sized shapes plus one short
training run per backend. Run after `python setup.py build_ext --inplace`
or an editable install.
"""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from polypgen.kernels import available_backends  # noqa: E402


def timeit(fn, *args, repeat=200):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    cases = {
        "conv3x3_forward  9->32 @ 8x8": (
            "conv3x3_forward",
            (rng.standard_normal((9, 8, 8)), rng.standard_normal((32, 9, 3, 3)),
             rng.standard_normal(32)),
        ),
        "conv3x3_backward 32->32 @ 8x8": (
            "conv3x3_backward",
            (rng.standard_normal((32, 8, 8)), rng.standard_normal((32, 32, 3, 3)),
             rng.standard_normal((32, 8, 8))),
        ),
        "pairwise_sqdist  64x64 @ C=8": (
            "pairwise_sqdist",
            (rng.standard_normal((64, 8)), rng.standard_normal((64, 8))),
        ),
    }
    impls = available_backends()
    print(f"{'kernel':34}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, (fn_name, args) in cases.items():
        times = {name: timeit(getattr(mod, fn_name), *args) for name, mod in impls.items()}
        row = f"{label:34}" + "".join(f"{times[name] * 1e6:12.1f}us" for name in impls)
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:9.1f}x"
        print(row)


def bench_training():
    from polypgen.diffusion.train import TrainConfig, train
    from polypgen.synth import SynthConfig, generate_dataset

    samples = generate_dataset(SynthConfig(count=16, resolution=(32, 32), seed=1))
    cfg = TrainConfig(steps=30, seed=1)
    print()
    for name in available_backends():
        os.environ["POLYPGEN_BACKEND"] = name
        # a fresh interpreter would re-select; emulate by reloading kernels
        # (the model looks the functions up through the module at call time)
        import importlib

        import polypgen.kernels as k

        importlib.reload(k)
        start = time.perf_counter()
        train(samples, cfg)
        print(f"train 30 steps @ 32x32, backend={name:9}: {time.perf_counter() - start:6.2f}s")
    os.environ.pop("POLYPGEN_BACKEND", None)


if __name__ == "__main__":
    bench_kernels()
    bench_training()
