#!/usr/bin/env python3
"""Benchmark the compiled chain kernels against the pure-numpy fallback.

Covers the two hot inner loops (banded chain propagation and segment-mean
pooling) at representative sizes, plus a whole forward/backward step of the
reduced model on both backends.

Usage:
    python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from gvit import kernels
from gvit.graph import SensorGraph, build_chain_adjacency, normalize_adjacency
from gvit.model import GViTConfig, GViTModel, pool_segments
from gvit.tensor import backward
from gvit.train import rmse_loss


def make_graph(n):
    rng = np.random.default_rng(n)
    return SensorGraph(
        features=rng.normal(size=(n, 16)),
        targets=np.array([0.4, 0.6]),
        targets_ppm=np.array([200.0, 12.0]),
        composition="A+B",
        group="co_ethylene",
        meta={"source": "bench"},
    )


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def bench_tridiag(repeats):
    print(f"{'tridiag_matmul':<24}{'N':>8}{'C':>6}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for n, c in [(300, 16), (300, 48), (4351, 16), (4351, 48), (20000, 48)]:
        a_hat = normalize_adjacency(build_chain_adjacency(n))
        x = np.random.default_rng(0).normal(size=(n, c))
        times = {}
        for name in kernels.available_backends():
            impl = kernels.get_impl(name)
            times[name] = _time(lambda: impl.tridiag_matmul(
                a_hat.sub, a_hat.diag, a_hat.sup, x), repeats)
        _report_row("", n, c, times)


def bench_pool(repeats):
    print(f"\n{'pool_forward':<24}{'N':>8}{'M':>6}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for n, m in [(5, 300), (600, 64), (600, 300), (4351, 300)]:
        starts, ends = pool_segments(n, m)
        starts = starts.astype(np.int64)
        ends = ends.astype(np.int64)
        x = np.random.default_rng(0).normal(size=(n, 48))
        times = {}
        for name in kernels.available_backends():
            impl = kernels.get_impl(name)
            times[name] = _time(lambda: impl.pool_forward(x, starts, ends), repeats)
        _report_row("", n, m, times)


def bench_training_step(repeats):
    print(f"\n{'forward+backward':<24}{'N':>8}{'':>6}{'python':>12}{'compiled':>12}{'speedup':>10}")
    cfg = GViTConfig(gcn_layers=3, gcn_filters=16, d_model=48, pooled_nodes=64,
                     encoder_blocks=4, attention_heads=4, seed=0)
    model = GViTModel(cfg, group="co_ethylene")
    for n in (60, 600, 4351):
        g = make_graph(n)
        times = {}
        for name in kernels.available_backends():
            kernels.use(name)

            def step():
                loss = rmse_loss(model.forward(g), np.array([[0.4, 0.6]]))
                backward(loss)

            times[name] = _time(step, max(3, repeats // 10))
        _report_row("", n, "", times)
    kernels.use("compiled" if "compiled" in kernels.available_backends() else "python")


def _report_row(label, a, b, times):
    py = times.get("python", np.nan)
    cy = times.get("compiled", np.nan)
    speedup = py / cy if cy == cy and cy > 0 else float("nan")
    print(f"{label:<24}{a:>8}{b:>6}{py * 1e3:>10.3f}ms{cy * 1e3:>10.3f}ms{speedup:>9.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    print(f"backends available: {kernels.available_backends()}")
    if "compiled" not in kernels.available_backends():
        print("compiled extension not built; timing the fallback only")
    bench_tridiag(args.repeats)
    bench_pool(args.repeats)
    bench_training_step(args.repeats)


if __name__ == "__main__":
    main()
