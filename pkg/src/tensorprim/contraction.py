"""GEMM and batch-reduce GEMM via a portable blocked microkernel.

The contraction C = beta*C + sum_i A_i x B_i runs as an output-stationary
blocked loop nest: C is tiled m_b x n_b, each tile's accumulator is loaded
once, every (A_i, B_i) pair contributes rank-1 updates in ascending batch
order then ascending k, and the accumulator is stored (with at most one
datatype conversion) at the end.  The per-element accumulation order is
therefore fixed regardless of blocking or thread count, which makes all
results bit-reproducible and lets the three batch addressing variants be
compared bitwise.

BF16 and INT8 inputs widen exactly to FP32 / INT32 before the multiply;
the optional EMULATED_SPLIT path reconstructs the FP32 operands from the
packed pair layout with mask/shift arithmetic instead (odd halves by
zero-masking, even halves by a left shift), which is bit-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import enum
from typing import Sequence

import numpy as np

from .dtypes import DType, bf16_to_fp32
from .tensor import TensorError, TensorView

_ITEM = {DType.FP64: np.float64, DType.FP32: np.float32, DType.BF16: np.uint16,
         DType.INT8: np.int8, DType.INT32: np.int32}


class ALayout(enum.Enum):
    PLAIN = "plain"
    VNNI = "vnni"


class ComputePath(enum.Enum):
    NATIVE = "native"
    EMULATED_SPLIT = "emulated_split"


@dataclass(frozen=True)
class GemmSpec:
    m: int
    n: int
    k: int
    lda: int
    ldb: int
    ldc: int
    in_dtype: DType = DType.FP32
    out_dtype: DType = DType.FP32
    beta: float = 0.0
    a_layout: ALayout = ALayout.PLAIN
    compute_path: ComputePath = ComputePath.NATIVE

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise TensorError("GEMM extents must be positive")
        if self.in_dtype not in (DType.FP64, DType.FP32, DType.BF16, DType.INT8):
            raise TensorError(f"unsupported input dtype {self.in_dtype}")
        want_out = self.acc_dtype
        if self.out_dtype is not want_out:
            raise TensorError(f"output dtype must be {want_out} for {self.in_dtype} inputs")
        if self.a_layout is ALayout.PLAIN and self.lda < self.m:
            raise TensorError("lda < M")
        if self.ldb < self.k:
            raise TensorError("ldb < K")
        if self.ldc < self.m:
            raise TensorError("ldc < M")
        if self.compute_path is ComputePath.EMULATED_SPLIT and self.in_dtype is not DType.BF16:
            raise TensorError("EMULATED_SPLIT applies to BF16 inputs")

    @property
    def acc_dtype(self) -> DType:
        if self.in_dtype is DType.FP64:
            return DType.FP64
        if self.in_dtype is DType.INT8:
            return DType.INT32
        return DType.FP32

    @property
    def alpha(self) -> int:
        return 4 if self.in_dtype is DType.INT8 else 2


@dataclass(frozen=True)
class BlockingParams:
    m_b: int
    n_b: int
    k_b: int

    def __post_init__(self):
        if min(self.m_b, self.n_b, self.k_b) < 1:
            raise TensorError("blocking factors must be positive")


# FP32 microkernel shape is C_{64x6}; other dtypes scale m_b by 32/width
DEFAULT_BLOCKING = {
    DType.FP64: BlockingParams(32, 6, 64),
    DType.FP32: BlockingParams(64, 6, 64),
    DType.BF16: BlockingParams(128, 6, 64),
    DType.INT8: BlockingParams(256, 6, 64),
}


class BatchKind(enum.Enum):
    ADDRESS = "address"
    OFFSET = "offset"
    STRIDE = "stride"


Ref = tuple[np.ndarray, int]  # (flat buffer, element offset)


def _as_ref(x) -> Ref:
    if isinstance(x, TensorView):
        return (x.primary, 0)
    if isinstance(x, np.ndarray):
        return (x, 0)
    buf, off = x
    if isinstance(buf, TensorView):
        buf = buf.primary
    return (buf, int(off))


@dataclass(frozen=True, eq=False)
class BrgemmBatch:
    """The (A_i, B_i) block sequence in one of three addressing variants.

    All variants describe the same abstract sequence; blocks may alias each
    other (but never the output).
    """

    kind: BatchKind
    a_refs: tuple[Ref, ...]
    b_refs: tuple[Ref, ...]

    @property
    def n(self) -> int:
        return len(self.a_refs)

    @staticmethod
    def address(a_refs: Sequence, b_refs: Sequence) -> "BrgemmBatch":
        a = tuple(_as_ref(r) for r in a_refs)
        b = tuple(_as_ref(r) for r in b_refs)
        if len(a) != len(b):
            raise TensorError(f"batch length mismatch: {len(a)} A blocks, {len(b)} B blocks")
        return BrgemmBatch(BatchKind.ADDRESS, a, b)

    @staticmethod
    def offset(a_base, b_base, a_offsets: Sequence[int], b_offsets: Sequence[int]) -> "BrgemmBatch":
        if len(a_offsets) != len(b_offsets):
            raise TensorError("offset batch length mismatch")
        ab, ao = _as_ref(a_base)
        bb, bo = _as_ref(b_base)
        a = tuple((ab, ao + int(o)) for o in a_offsets)
        b = tuple((bb, bo + int(o)) for o in b_offsets)
        return BrgemmBatch(BatchKind.OFFSET, a, b)

    @staticmethod
    def stride(a_base, b_base, stride_a: int, stride_b: int, count: int) -> "BrgemmBatch":
        ab, ao = _as_ref(a_base)
        bb, bo = _as_ref(b_base)
        a = tuple((ab, ao + i * int(stride_a)) for i in range(count))
        b = tuple((bb, bo + i * int(stride_b)) for i in range(count))
        return BrgemmBatch(BatchKind.STRIDE, a, b)


# ---------------------------------------------------------------------------
# operand loading
# ---------------------------------------------------------------------------

def _strided2d(buf: np.ndarray, off: int, rows: int, cols: int, ld: int) -> np.ndarray:
    need = off + ld * (cols - 1) + rows
    if off < 0 or need > buf.size:
        raise TensorError(f"block exceeds buffer: need {need}, have {buf.size}")
    s = buf.strides[0]
    return np.lib.stride_tricks.as_strided(buf[off:], shape=(rows, cols),
                                           strides=(s, ld * s))


def _widen(a: np.ndarray, in_dtype: DType) -> np.ndarray:
    if in_dtype is DType.BF16:
        return bf16_to_fp32(a)
    if in_dtype is DType.INT8:
        return a.astype(np.int32)
    return a


def _load_a(spec: GemmSpec, ref: Ref) -> np.ndarray:
    """A block as a widened logical (M, K) array."""
    buf, off = ref
    if spec.a_layout is ALayout.PLAIN:
        block = _strided2d(buf, off, spec.m, spec.k, spec.lda)
        if spec.compute_path is ComputePath.EMULATED_SPLIT:
            return _widen_emulated(_pack_pairs(block), spec.m, spec.k)
        return _widen(block, spec.in_dtype)
    # VNNI layout [K/alpha][M][alpha]
    al = spec.alpha
    groups = -(-spec.k // al)
    if off < 0 or buf.size - off < groups * spec.m * al:
        raise TensorError("VNNI block exceeds buffer")
    grid = buf[off:off + groups * spec.m * al].reshape(groups, spec.m, al)
    if spec.compute_path is ComputePath.EMULATED_SPLIT:
        return _widen_emulated(grid, spec.m, spec.k)
    logical = grid.transpose(1, 0, 2).reshape(spec.m, groups * al)[:, :spec.k]
    return _widen(logical, spec.in_dtype)


def _pack_pairs(block: np.ndarray) -> np.ndarray:
    """Plain BF16 (M, K) patterns -> pair grid (ceil(K/2), M, 2), zero tail."""
    m, k = block.shape
    groups = -(-k // 2)
    grid = np.zeros((groups, m, 2), dtype=np.uint16)
    grid[:, :, 0] = block[:, 0::2].T
    if k > 1:
        grid[:k // 2, :, 1] = block[:, 1::2].T
    return grid


def _widen_emulated(grid: np.ndarray, m: int, k: int) -> np.ndarray:
    """Reconstruct FP32 operands from packed BF16 pairs with mask/shift
    arithmetic: the even (low-half) element by an unmasked load plus a 32-bit
    left shift, the odd (high-half) element by zero-masking the low 16 bits."""
    groups = grid.shape[0]
    lanes = grid.reshape(-1).copy()  # fresh buffer: aligned for the u32 view
    u32 = lanes.view(np.uint32)      # one lane per pair
    even = (u32 << np.uint32(16)).view(np.float32).reshape(groups, m)
    odd = (u32 & np.uint32(0xFFFF0000)).view(np.float32).reshape(groups, m)
    out = np.empty((m, groups * 2), dtype=np.float32)
    out[:, 0::2] = even.T
    out[:, 1::2] = odd.T
    return out[:, :k]


def vnni_pack_a(a_patterns: np.ndarray, alpha: int) -> np.ndarray:
    """Plain (M, K) A into the [K/alpha][M][alpha] flat layout, zero-padded
    tail group; element (m, k) lands at group k//alpha, row m, slot k%alpha."""
    if alpha not in (2, 4):
        raise TensorError("alpha must be 2 (16-bit) or 4 (8-bit)")
    m, k = a_patterns.shape
    groups = -(-k // alpha)
    padded = np.zeros((m, groups * alpha), dtype=a_patterns.dtype)
    padded[:, :k] = a_patterns
    return np.ascontiguousarray(padded.reshape(m, groups, alpha).transpose(1, 0, 2)).reshape(-1)


def vnni_unpack_a(flat: np.ndarray, alpha: int, m: int, k: int) -> np.ndarray:
    """Inverse of :func:`vnni_pack_a` (drops tail padding)."""
    groups = -(-k // alpha)
    grid = flat[:groups * m * alpha].reshape(groups, m, alpha)
    return grid.transpose(1, 0, 2).reshape(m, groups * alpha)[:, :k]


# ---------------------------------------------------------------------------
# the kernel
# ---------------------------------------------------------------------------

def brgemm(spec: GemmSpec, batch: BrgemmBatch, c: TensorView,
           blocking: BlockingParams | None = None, threads: int = 1) -> None:
    """C = beta*C + sum_i A_i x B_i with bitwise-fixed accumulation order.

    Per output element: each batch entry's contribution is summed from zero
    along ascending k, and the entry partials are then folded onto beta*C in
    ascending batch order.  The per-entry grouping makes exact-arithmetic
    identities hold exactly in floating point too (duplicating a batch entry
    doubles the result bitwise; a negated duplicate cancels to exact zero),
    and the order is independent of blocking and thread count.
    """
    if (c.desc.rows, c.desc.cols) != (spec.m, spec.n):
        raise TensorError(f"C must be {spec.m}x{spec.n}")
    if c.desc.dtype is not spec.out_dtype:
        raise TensorError(f"C dtype {c.desc.dtype} != {spec.out_dtype}")
    if c.desc.ld != spec.ldc:
        raise TensorError("C ld mismatch")
    for buf, _ in (*batch.a_refs, *batch.b_refs):
        if np.may_share_memory(c.primary, buf):
            raise TensorError("C must not alias any batch input")

    blk = blocking or DEFAULT_BLOCKING[spec.in_dtype]
    m_b = min(blk.m_b, spec.m)
    n_b = min(blk.n_b, spec.n)
    k_b = min(blk.k_b, spec.k)

    a_blocks = [_load_a(spec, ref) for ref in batch.a_refs]
    b_blocks = [_widen(_strided2d(buf, off, spec.k, spec.n, spec.ldb), spec.in_dtype)
                for buf, off in batch.b_refs]
    cw = c.as2d()
    acc_np = _ITEM[spec.acc_dtype]

    tiles = [(im, in_) for in_ in range(0, spec.n, n_b) for im in range(0, spec.m, m_b)]

    def run_tile(tile):
        im, in_ = tile
        mh = min(m_b, spec.m - im)
        nh = min(n_b, spec.n - in_)
        cc = cw[im:im + mh, in_:in_ + nh]
        if spec.beta == 0.0:
            acc = np.zeros((mh, nh), dtype=acc_np)
        elif spec.beta == 1.0:
            acc = cc.astype(acc_np, copy=True)
        else:
            acc = cc.astype(acc_np, copy=True) * acc_np(spec.beta)
        with np.errstate(all="ignore"):
            for i in range(batch.n):
                at = a_blocks[i][im:im + mh, :]
                bt = b_blocks[i][:, in_:in_ + nh]
                part = np.zeros((mh, nh), dtype=acc_np)
                for k0 in range(0, spec.k, k_b):
                    for k in range(k0, min(k0 + k_b, spec.k)):
                        part += at[:, k:k + 1] * bt[k:k + 1, :]
                acc += part
        cc[:, :] = acc

    if threads <= 1 or len(tiles) == 1:
        for t in tiles:
            run_tile(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_tile, tiles))


def gemm(spec: GemmSpec, a, b, c: TensorView,
         blocking: BlockingParams | None = None, threads: int = 1) -> None:
    """Single contraction C = beta*C + A x B (a one-entry batch)."""
    batch = BrgemmBatch.address([_as_ref(a)], [_as_ref(b)])
    brgemm(spec, batch, c, blocking=blocking, threads=threads)


def spec_for_views(a: TensorView, b: TensorView, c: TensorView, beta: float = 0.0,
                   a_layout: ALayout = ALayout.PLAIN,
                   compute_path: ComputePath = ComputePath.NATIVE) -> GemmSpec:
    """Build a GemmSpec from plain (non-VNNI) operand views."""
    return GemmSpec(m=a.desc.rows, n=b.desc.cols, k=a.desc.cols,
                    lda=a.desc.ld, ldb=b.desc.ld, ldc=c.desc.ld,
                    in_dtype=a.desc.dtype, out_dtype=c.desc.dtype, beta=beta,
                    a_layout=a_layout, compute_path=compute_path)


def matmul(a: TensorView, b: TensorView, out: TensorView) -> None:
    """Binary MatMul: GEMM with beta = 0."""
    if a.desc.cols != b.desc.rows:
        raise TensorError(f"matmul inner dims {a.desc.cols} != {b.desc.rows}")
    spec = spec_for_views(a, b, out, beta=0.0)
    gemm(spec, a, b, out)
