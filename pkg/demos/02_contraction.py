"""Batch-reduce matrix contraction: addressing variants, mixed precision,
and the bit-accurate BF16 emulation path.

Run with:  python demos/02_contraction.py
"""

import numpy as np

from tensorprim import (
    ALayout, BrgemmBatch, ComputePath, DType, GemmSpec, TensorDesc,
    alloc, brgemm, from_array, gemm, to_array, vnni_pack_a,
)
from tensorprim.dtypes import fp32_to_bf16_rne


def colmajor(x):
    return np.asarray(x, order="F").reshape(-1, order="F").copy()


rng = np.random.default_rng(0)
M, N, K, COUNT = 8, 8, 8, 4

print("== C = beta*C + sum_i A_i x B_i, three ways of naming the blocks ==")
a = rng.standard_normal((M, K * COUNT)).astype(np.float32)
b = rng.standard_normal((K, N * COUNT)).astype(np.float32)
af, bf = colmajor(a), colmajor(b)
spec = GemmSpec(M, N, K, M, K, M, in_dtype=DType.FP32, out_dtype=DType.FP32)

outs = {}
batches = {
    "address": BrgemmBatch.address([(af, i * K * M) for i in range(COUNT)],
                                   [(bf, i * N * K) for i in range(COUNT)]),
    "offset": BrgemmBatch.offset(af, bf, [i * K * M for i in range(COUNT)],
                                 [i * N * K for i in range(COUNT)]),
    "stride": BrgemmBatch.stride(af, bf, K * M, N * K, COUNT),
}
for name, batch in batches.items():
    c = alloc(TensorDesc(M, N, M, DType.FP32))
    brgemm(spec, batch, c)
    outs[name] = to_array(c)
print("address == offset == stride bitwise:",
      outs["address"].tobytes() == outs["offset"].tobytes() == outs["stride"].tobytes())

print("\n== duplicating a batch entry doubles the result exactly ==")
one = alloc(TensorDesc(M, N, M, DType.FP32))
gemm(spec, (af, 0), (bf, 0), one)
two = alloc(TensorDesc(M, N, M, DType.FP32))
brgemm(spec, BrgemmBatch.address([(af, 0)] * 2, [(bf, 0)] * 2), two)
print("2x bitwise:", (2.0 * to_array(one)).tobytes() == to_array(two).tobytes())

print("\n== BF16 inputs widen exactly; emulation is bit-accurate ==")
abf = fp32_to_bf16_rne(rng.standard_normal((M, K)).astype(np.float32))
bbf = fp32_to_bf16_rne(rng.standard_normal((K, N)).astype(np.float32))
res = {}
for path in (ComputePath.NATIVE, ComputePath.EMULATED_SPLIT):
    spec_bf = GemmSpec(M, N, K, M, K, M, in_dtype=DType.BF16, out_dtype=DType.FP32,
                       compute_path=path)
    c = alloc(TensorDesc(M, N, M, DType.FP32))
    gemm(spec_bf, (colmajor(abf), 0), (colmajor(bbf), 0), c)
    res[path] = to_array(c)
print("native == mask/shift emulation bitwise:",
      res[ComputePath.NATIVE].tobytes() == res[ComputePath.EMULATED_SPLIT].tobytes())

print("\n== the VNNI pair layout changes addressing, not results ==")
spec_v = GemmSpec(M, N, K, M, K, M, in_dtype=DType.BF16, out_dtype=DType.FP32,
                  a_layout=ALayout.VNNI)
cv = alloc(TensorDesc(M, N, M, DType.FP32))
gemm(spec_v, (vnni_pack_a(abf, 2), 0), (colmajor(bbf), 0), cv)
print("vnni == plain bitwise:",
      to_array(cv).tobytes() == res[ComputePath.NATIVE].tobytes())

print("\n== INT8 accumulates in INT32 without saturation ==")
ai = rng.integers(-128, 128, size=(4, 300), dtype=np.int8)
bi = rng.integers(-128, 128, size=(300, 4), dtype=np.int8)
ci = alloc(TensorDesc(4, 4, 4, DType.INT32))
gemm(GemmSpec(4, 4, 300, 4, 300, 4, in_dtype=DType.INT8, out_dtype=DType.INT32),
     (colmajor(ai), 0), (colmajor(bi), 0), ci)
print("int32 result:\n", np.array(ci.as2d()))
print("matches widening reference:",
      np.array_equal(np.array(ci.as2d()),
                     ai.astype(np.int32) @ bi.astype(np.int32)))
