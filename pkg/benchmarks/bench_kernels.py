#!/usr/bin/env python3
"""Time the jitted kernels against the pure-numpy fallbacks.

Runs each hot kernel at small and model-sized shapes, then one full
training epoch with the package's kernel bindings swapped to each path.
Numeric agreement between the paths is asserted along the way.

Usage: python benchmarks/bench_kernels.py [--repeats N]
(The package itself selects its path via the MEMSTAGE_NUMBA env flag;
this script compares both in one process.)
"""

import argparse
import time

import numpy as np

from memstage import _kernels
from memstage.data import SyntheticConfig, generate_synthetic, prepare_splits
from memstage.training import TrainConfig, train


def time_fn(fn, args, repeats):
    fn(*args)  # warm-up (and jit compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(200):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / 200)
    return best


def kernel_cases(rng, n_hidden, width):
    n_in = n_hidden
    x = rng.normal(size=n_in)
    h = rng.normal(size=n_hidden)
    c = rng.normal(size=n_hidden)
    wx = rng.normal(size=(4 * n_hidden, n_in))
    wh = rng.normal(size=(4 * n_hidden, n_hidden))
    b = rng.normal(size=4 * n_hidden)
    _, _, gi, gf, go, gg = _kernels.PURE["lstm_forward"](x, h, c, wx, wh, b)
    slots = rng.normal(size=(8, width))
    strengths = rng.normal(size=8)
    key = rng.normal(size=width)
    _, w = _kernels.PURE["memory_read_forward"](slots, 8, strengths, key, False)
    m_old = rng.normal(size=width)
    proj = rng.normal(size=(width, n_hidden))
    gate_w = rng.normal(size=(2 * width, n_hidden + width))
    gate_b = rng.normal(size=2 * width)
    _, r, v, a = _kernels.PURE["memory_write_forward"](m_old, h, proj, gate_w, gate_b)
    de = rng.normal(size=width)
    return {
        "lstm_forward": (x, h, c, wx, wh, b),
        "lstm_backward": (rng.normal(size=n_hidden), rng.normal(size=n_hidden),
                          x, h, c, gi, gf, go, gg, c, wx, wh),
        "memory_read_forward": (slots, 8, strengths, key, False),
        "memory_read_backward": (slots, 8, strengths, key, w, de, False),
        "memory_write_forward": (m_old, h, proj, gate_w, gate_b),
        "memory_write_backward": (de, m_old, h, r, v, a, proj, gate_w),
    }


def bench_kernels(repeats):
    print(f"{'kernel':24s} {'shape':>10s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    rng = np.random.default_rng(0)
    for n_hidden, width, tag in ((16, 16, "small"), (128, 128, "model")):
        cases = kernel_cases(rng, n_hidden, width)
        for name, args in cases.items():
            pure = _kernels.PURE[name]
            jit = _kernels.JITTED[name]
            out_pure, out_jit = pure(*args), jit(*args)
            if not isinstance(out_pure, tuple):
                out_pure, out_jit = (out_pure,), (out_jit,)
            for a, b in zip(out_pure, out_jit):
                np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
            t_pure = time_fn(pure, args, repeats)
            t_jit = time_fn(jit, args, repeats)
            print(f"{name:24s} {tag:>10s} {t_pure * 1e6:9.2f}u {t_jit * 1e6:9.2f}u "
                  f"{t_pure / t_jit:7.2f}x")


def bench_training_epoch():
    cohort = generate_synthetic(SyntheticConfig(n_patients=60, seed=0))
    train_c, val_c, _ = prepare_splits(cohort, seed=0)
    config = TrainConfig(mode="unsupervised", epochs=3, batch_size=32, hidden_size=32,
                         latent_size=32, memory_slots=8, memory_width=32,
                         learning_rate=1e-3, kl_anneal_steps=2000, clusters=3, seed=0)
    names = list(_kernels.PURE)
    timings = {}
    results = {}
    for label, table in (("numpy", _kernels.PURE), ("numba", _kernels.JITTED)):
        for name in names:
            setattr(_kernels, name, table[name])
        t0 = time.perf_counter()
        params, records = train(config, train_c.sequences, val_c.sequences)
        timings[label] = time.perf_counter() - t0
        results[label] = records[-1].loss.total
    # restore the env-selected bindings
    active = _kernels.JITTED if _kernels.USING_NUMBA else _kernels.PURE
    for name in names:
        setattr(_kernels, name, active[name])
    drift = abs(results["numpy"] - results["numba"]) / max(abs(results["numpy"]), 1e-12)
    print(f"\ntraining (3 epochs, 36 patients): numpy {timings['numpy']:.2f}s, "
          f"numba {timings['numba']:.2f}s, speedup {timings['numpy'] / timings['numba']:.2f}x")
    print(f"final-loss relative difference between paths: {drift:.2e}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    if not _kernels.USING_NUMBA:
        print("numba path unavailable (MEMSTAGE_NUMBA=0 or numba missing); nothing to compare")
        return
    bench_kernels(args.repeats)
    bench_training_epoch()


if __name__ == "__main__":
    main()
