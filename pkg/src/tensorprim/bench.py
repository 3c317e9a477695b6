"""Micro-benchmarks: wall times, derived FLOP rates, and the deterministic
scratch-memory comparison between planned and naive equation evaluation.

Timings are hardware-dependent and never gate anything; the only asserted
facts are that differently-fused evaluations produce identical bits before
being timed, and that the planner's scratch footprint never exceeds naive
materialisation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import contraction as gemm_engine, equation as eqn, kernels
from .dtypes import DType
from .tensor import TensorDesc, alloc, from_array, to_array


@dataclass
class BenchResult:
    name: str
    median_s: float
    min_s: float
    gflops: float
    extra: dict

    def row(self) -> dict:
        return {"name": self.name, "median_s": self.median_s, "min_s": self.min_s,
                "gflops": self.gflops, **self.extra}


def _time(fn, repeats: int) -> tuple[float, float]:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[len(times) // 2], times[0]


def bench_brgemm(m: int = 64, n: int = 64, k: int = 64, count: int = 16,
                 dtype: DType = DType.FP32, repeats: int = 5, threads: int = 1,
                 seed: int = 0) -> BenchResult:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, k * count)).astype(np.float32)
    b = rng.standard_normal((k, n * count)).astype(np.float32)
    if dtype is DType.BF16:
        from .dtypes import fp32_to_bf16_rne
        a, b = fp32_to_bf16_rne(a), fp32_to_bf16_rne(b)
    af = np.asarray(a, order="F").reshape(-1, order="F").copy()
    bf = np.asarray(b, order="F").reshape(-1, order="F").copy()
    acc = DType.FP32
    spec = gemm_engine.GemmSpec(m, n, k, m, k, m, in_dtype=dtype, out_dtype=acc)
    batch = gemm_engine.BrgemmBatch.stride(af, bf, k * m, n * k, count)
    c = alloc(TensorDesc(m, n, m, acc))
    med, mn = _time(lambda: gemm_engine.brgemm(spec, batch, c, threads=threads), repeats)
    flops = 2.0 * m * n * k * count
    checksum = float(np.sum(np.array(c.as2d(), dtype=np.float64)))
    return BenchResult(f"brgemm-{dtype.value}-{m}x{n}x{k}x{count}", med, mn,
                       flops / med / 1e9, {"threads": threads, "checksum": checksum})


def bench_fc(m_b: int = 4, n_b: int = 4, k_b: int = 4, bm: int = 32, bn: int = 32,
             bk: int = 32, repeats: int = 5, threads: int = 1, seed: int = 0) -> BenchResult:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(m_b * k_b * bk * bm).astype(np.float32)
    b = rng.standard_normal(n_b * k_b * bn * bk).astype(np.float32)
    c = alloc(TensorDesc(bm, n_b * m_b * bn, bm, DType.FP32))
    spec = kernels.FcSpec(m_b, n_b, k_b, bm, bn, bk, activation=None)
    med, mn = _time(lambda: kernels.fc_forward(spec, a, b, c, threads=threads), repeats)
    flops = 2.0 * (m_b * bm) * (n_b * bn) * (k_b * bk)
    checksum = float(np.sum(np.array(c.as2d(), dtype=np.float64)))
    return BenchResult(f"fc-{m_b * bm}x{n_b * bn}x{k_b * bk}", med, mn,
                       flops / med / 1e9, {"threads": threads, "checksum": checksum})


def bench_softmax(s1: int = 64, s2: int = 8, s3: int = 64, repeats: int = 5,
                  seed: int = 0) -> list[BenchResult]:
    rng = np.random.default_rng(seed)
    spec = kernels.SoftmaxSpec(s1, s2, s3)
    x = from_array(rng.random((s1, s2 * s3), dtype=np.float32))
    results = []
    outs = {}
    p1, p2 = kernels._softmax_trees(s1, s3, DType.FP32)
    fused_bytes = p1.temp_bytes + p2.temp_bytes
    naive_bytes = p1.naive_bytes + p2.naive_bytes
    for name, strategy in (("buffered", eqn.Buffered()),
                           ("hybrid", eqn.Hybrid(16, 16))):
        y = alloc(TensorDesc(s1, s2 * s3, s1, DType.FP32))
        med, mn = _time(lambda: kernels.softmax(spec, x, y, strategy=strategy), repeats)
        outs[name] = to_array(y)
        checksum = float(np.sum(outs[name].astype(np.float64)))
        results.append(BenchResult(f"softmax-{name}-{s1}x{s2}x{s3}", med, mn,
                                   float("nan"),
                                   {"checksum": checksum,
                                    "plan_temp_bytes": fused_bytes,
                                    "naive_temp_bytes": naive_bytes}))
    # identical outputs are a precondition for comparing the timings at all
    ref = next(iter(outs.values()))
    for name, arr in outs.items():
        if arr.tobytes() != ref.tobytes():
            raise AssertionError(f"softmax strategy {name} diverged; refusing to time")
    assert fused_bytes <= naive_bytes
    return results
