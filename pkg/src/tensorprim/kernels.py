"""Composite deep-learning kernels assembled exclusively from the primitive
operators, the contraction engine and equation plans.

Nothing in this module touches tensor elements directly: all bulk math goes
through dispatched primitives or planned equations, and the only arithmetic
here is scalar glue (per-row statistics folding) on values read back one at a
time.  A source audit test enforces that no array library is imported.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math
from typing import Optional, Sequence

from . import equation as eqn
from .dtypes import DType
from .contraction import BrgemmBatch, GemmSpec, brgemm
from .ops import (
    BinaryKind,
    ReduceAxis,
    ReduceOp,
    ReduceSpec,
    TernaryKind,
    TransformKind,
    TransformSpec,
    UnaryKind,
    apply_binary,
    apply_ternary,
    apply_unary,
    transform,
)
from .tensor import (
    Bcast,
    SplitTensor,
    TensorDesc,
    TensorError,
    TensorView,
    alloc,
    broadcast,
)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SoftmaxSpec:
    """s2 independent softmax instances over s1 x s3 slices."""
    s1: int
    s2: int
    s3: int


_softmax_plans: dict[tuple, tuple] = {}


def _softmax_trees(s1: int, s3: int, dtype: DType):
    key = (s1, s3, dtype)
    hit = _softmax_plans.get(key)
    if hit is not None:
        return hit
    d = TensorDesc(s1, s3, s1, dtype)
    # numerator tree: exp(X - max(X)), the max broadcast over the slice
    b = eqn.TreeBuilder([d])
    mx = b.unary(UnaryKind.REDUCE, b.leaf(0),
                 reduce=ReduceSpec(ReduceAxis.ALL, ReduceOp.MAX))
    shifted = b.binary(BinaryKind.SUB, b.leaf(0), mx)
    t1 = b.tree(b.unary(UnaryKind.EXP, shifted))
    # normalisation tree: X' * reciprocal(sum(X'))
    b2 = eqn.TreeBuilder([t1.root.out_desc])
    sm = b2.unary(UnaryKind.REDUCE, b2.leaf(0),
                  reduce=ReduceSpec(ReduceAxis.ALL, ReduceOp.SUM))
    t2 = b2.tree(b2.binary(BinaryKind.MUL, b2.leaf(0),
                           b2.unary(UnaryKind.RECIPROCAL, sm)))
    plans = (eqn.create_execution_plan(eqn.assign_register_score(t1)),
             eqn.create_execution_plan(eqn.assign_register_score(t2)))
    _softmax_plans[key] = plans
    return plans


def softmax(spec: SoftmaxSpec, x: TensorView, y: TensorView,
            strategy: eqn.EvalStrategy | None = None) -> None:
    """Slice-wise softmax: each of the s2 instances is normalised over its
    whole s1 x s3 slice (max subtraction, exp, reciprocal-sum scaling)."""
    if (x.desc.rows, x.desc.cols) != (spec.s1, spec.s2 * spec.s3):
        raise TensorError("softmax input must be s1 x (s2*s3)")
    if (y.desc.rows, y.desc.cols) != (x.desc.rows, x.desc.cols):
        raise TensorError("softmax output shape mismatch")
    p1, p2 = _softmax_trees(spec.s1, spec.s3, x.desc.dtype)
    strategy = strategy or eqn.Buffered()
    scratch = alloc(p1.out_desc.contiguous())
    for j in range(spec.s2):
        xs = x.col_block(j * spec.s3, spec.s3)
        ys = y.col_block(j * spec.s3, spec.s3)
        eqn.evaluate(p1, strategy, [xs], scratch)
        eqn.evaluate(p2, strategy, [scratch], ys)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

_scaling_plans: dict[tuple, eqn.ExecPlan] = {}


def _scaling_plan(rows: int, cols: int, dtype: DType) -> eqn.ExecPlan:
    """Y = (m' * X + v') * G + B as one equation of two cascading FMADDs;
    m', v' broadcast per row (channel), G, B per the caller's layout."""
    key = (rows, cols, dtype)
    hit = _scaling_plans.get(key)
    if hit is not None:
        return hit
    x = TensorDesc(rows, cols, rows, dtype)
    colv = TensorDesc(rows, cols, rows, DType.FP32, Bcast.COL)
    b = eqn.TreeBuilder([x, colv, colv, colv, colv])
    inner = b.ternary(TernaryKind.MULADD, b.leaf(0), b.leaf(1), b.leaf(2))
    root = b.ternary(TernaryKind.MULADD, inner, b.leaf(3), b.leaf(4))
    plan = eqn.create_execution_plan(eqn.assign_register_score(b.tree(root)))
    _scaling_plans[key] = plan
    return plan


def _col_vec(rows: int) -> TensorView:
    return alloc(TensorDesc(rows, 1, rows, DType.FP32))


def _as_col_bcast(v: TensorView, rows: int, cols: int) -> TensorView:
    return broadcast(v, Bcast.COL, rows, cols)


def layernorm(x: TensorView, g: TensorView, b: TensorView, eps: float,
              out: TensorView, mean_out: TensorView | None = None,
              var_out: TensorView | None = None) -> None:
    """Per-row layer normalisation with optional affine scaling.

    Row statistics come from a sum-reduce and a squared-sum-reduce; the two
    scalars per row are folded into scale/shift vectors in glue code and the
    actual scaling is one equation of two cascading multiply-adds:
    (X - mu) * rstd * G + B.
    """
    rows, cols = x.desc.rows, x.desc.cols
    if cols < 2:
        raise TensorError("layernorm needs a feature dimension of at least 2")
    if eps <= 0:
        raise TensorError("eps must be positive")
    for v, name in ((g, "G"), (b, "B")):
        if (v.desc.rows, v.desc.cols) != (rows, cols):
            raise TensorError(f"{name} must broadcast to the input shape")

    m = _col_vec(rows)
    v2 = _col_vec(rows)
    apply_unary(UnaryKind.REDUCE, x, m,
                reduce_spec=ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM))
    apply_unary(UnaryKind.REDUCE, x, v2,
                reduce_spec=ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM, squared=True))

    scale = _col_vec(rows)
    shift = _col_vec(rows)
    for i in range(rows):
        mu = m.item(i, 0) / cols
        var = v2.item(i, 0) / cols - mu * mu
        rstd = 1.0 / math.sqrt(var + eps)
        scale.set_item(i, 0, rstd)
        shift.set_item(i, 0, -mu * rstd)
        if mean_out is not None:
            mean_out.set_item(i, 0, mu)
        if var_out is not None:
            var_out.set_item(i, 0, var)

    plan = _scaling_plan(rows, cols, x.desc.dtype)
    eqn.evaluate(plan, eqn.Buffered(),
                 [x, _as_col_bcast(scale, rows, cols), _as_col_bcast(shift, rows, cols),
                  g, b], out)


class NormMode:
    BATCHNORM = "batchnorm"
    GROUPNORM = "groupnorm"


def norm_scaling(x: TensorView, m_prime: TensorView | None, v_prime: TensorView | None,
                 g: TensorView, b: TensorView, mode: str, out: TensorView,
                 groups: int = 1, eps: float = 1e-5) -> None:
    """Channel scaling Y = (m' * X + v') * G + B as two chained multiply-adds.

    The layout is channels x rest: every per-channel vector broadcasts along
    the columns.  BATCHNORM takes m', v' as inputs; GROUPNORM(g) derives them
    from group statistics of x (g must divide the channel count).
    """
    rows, cols = x.desc.rows, x.desc.cols
    if mode == NormMode.GROUPNORM:
        if rows % groups != 0:
            raise TensorError(f"groups {groups} does not divide channels {rows}")
        m = _col_vec(rows)
        v2 = _col_vec(rows)
        apply_unary(UnaryKind.REDUCE, x, m,
                    reduce_spec=ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM))
        apply_unary(UnaryKind.REDUCE, x, v2,
                    reduce_spec=ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM, squared=True))
        m_prime = _col_vec(rows)
        v_prime = _col_vec(rows)
        per_group = rows // groups
        n_elems = per_group * cols
        for gi in range(groups):
            s = ss = 0.0
            for c in range(gi * per_group, (gi + 1) * per_group):
                s += m.item(c, 0)
                ss += v2.item(c, 0)
            mu = s / n_elems
            var = ss / n_elems - mu * mu
            rstd = 1.0 / math.sqrt(var + eps)
            for c in range(gi * per_group, (gi + 1) * per_group):
                m_prime.set_item(c, 0, rstd)
                v_prime.set_item(c, 0, -mu * rstd)
    elif mode != NormMode.BATCHNORM:
        raise TensorError(f"unknown norm mode {mode!r}")
    if m_prime is None or v_prime is None:
        raise TensorError("batchnorm needs m' and v' vectors")

    plan = _scaling_plan(rows, cols, x.desc.dtype)
    mp = m_prime if m_prime.desc.bcast is Bcast.COL else _as_col_bcast(m_prime, rows, cols)
    vp = v_prime if v_prime.desc.bcast is Bcast.COL else _as_col_bcast(v_prime, rows, cols)
    gg = g if (g.desc.rows, g.desc.cols) == (rows, cols) else _as_col_bcast(g, rows, cols)
    bb = b if (b.desc.rows, b.desc.cols) == (rows, cols) else _as_col_bcast(b, rows, cols)
    eqn.evaluate(plan, eqn.Buffered(), [x, mp, vp, gg, bb], out)


# ---------------------------------------------------------------------------
# split SGD
# ---------------------------------------------------------------------------

def split_sgd_step(weights: SplitTensor, grad: TensorView, lr: float) -> None:
    """One SGD step on hi/lo split FP32 weights: pack, W -= lr * grad,
    unpack.  Bitwise identical to plain FP32 SGD on the packed values."""
    rows, cols = weights.rows, weights.cols
    if (grad.desc.rows, grad.desc.cols) != (rows, cols):
        raise TensorError("gradient shape mismatch")
    w = alloc(TensorDesc(rows, cols, rows, DType.FP32))
    apply_binary(BinaryKind.PACK, weights.hi, weights.lo, w)

    lr_view = alloc(TensorDesc(1, 1, 1, DType.FP32))
    lr_view.set_item(0, 0, lr)
    apply_ternary(TernaryKind.NMULADD, grad,
                  broadcast(lr_view, Bcast.SCALAR, rows, cols), w, w)

    weights.hi.secondary = weights.lo.primary  # unpack fills lo in place
    apply_unary(UnaryKind.UNPACK, w, weights.hi)
    weights.hi.secondary = None


# ---------------------------------------------------------------------------
# sparse embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingSpec:
    rows: int      # number of table entries
    length: int    # feature length per entry


def embedding_gather_reduce(spec: EmbeddingSpec, table: TensorView,
                            indices: Sequence[int], out: TensorView) -> None:
    """Multi-hot lookup: out = sum of the indexed table entries, accumulated
    in index order without materialising the gathered entries.

    The table stores one entry per column (feature dimension contiguous).
    """
    if (table.desc.rows, table.desc.cols) != (spec.length, spec.rows):
        raise TensorError("table must be length x rows (one entry per column)")
    if (out.desc.rows, out.desc.cols) != (spec.length, 1):
        raise TensorError("output must be length x 1")
    for p in indices:
        if not 0 <= int(p) < spec.rows:
            raise IndexError(f"embedding index {p} out of range")
    apply_unary(UnaryKind.ZERO, None, out)
    for p in indices:
        apply_binary(BinaryKind.ADD, out, table.col_block(int(p), 1), out)


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FcSpec:
    """Blocked fully-connected layer:
    A[M_b][K_b][b_k][b_m] x B[N_b][K_b][b_n][b_k] -> C[N_b][M_b][b_n][b_m]."""
    m_b: int
    n_b: int
    k_b: int
    bm: int
    bn: int
    bk: int
    activation: Optional[UnaryKind] = None


def fc_forward(spec: FcSpec, a_buf, b_buf, c: TensorView, threads: int = 1) -> None:
    """Per output block: stride-based batch contraction over the K blocks
    (stride_A = bk*bm, stride_B = bn*bk), then the optional activation fused
    on the just-computed block."""
    bm, bn, bk = spec.bm, spec.bn, spec.bk
    if (c.desc.rows, c.desc.cols) != (bm, spec.n_b * spec.m_b * bn) or c.desc.ld != bm:
        raise TensorError("C must be a contiguous bm x (N_b*M_b*bn) block container")
    gspec = GemmSpec(m=bm, n=bn, k=bk, lda=bm, ldb=bk, ldc=bm,
                     in_dtype=DType.FP32, out_dtype=DType.FP32, beta=0.0)
    a_stride = bk * bm
    b_stride = bn * bk

    def run_block(job):
        ib_n, ib_m = job
        off_a = ib_m * (spec.k_b * a_stride)
        off_b = ib_n * (spec.k_b * b_stride)
        cblk = c.col_block((ib_n * spec.m_b + ib_m) * bn, bn)
        batch = BrgemmBatch.stride((a_buf, off_a), (b_buf, off_b),
                                   a_stride, b_stride, spec.k_b)
        brgemm(gspec, batch, cblk)
        if spec.activation is not None:
            apply_unary(spec.activation, cblk, cblk)

    jobs = [(ib_n, ib_m) for ib_n in range(spec.n_b) for ib_m in range(spec.m_b)]
    if threads <= 1:
        for j in jobs:
            run_block(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, jobs))


# ---------------------------------------------------------------------------
# 1D dilated convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DilatedConvSpec:
    in_channels: int     # C
    out_channels: int    # K
    width: int           # W (input positions)
    out_width: int       # Q (output positions)
    taps: int            # S (filter size)
    dilation: int        # d
    block_q: int = 8     # output-position block

    def __post_init__(self):
        if self.out_width + (self.taps - 1) * self.dilation > self.width:
            raise TensorError("output width exceeds the dilated receptive field")


def dilated_conv1d_forward(spec: DilatedConvSpec, inp: TensorView,
                           weights: TensorView, out: TensorView) -> None:
    """Forward pass: transpose the weights once, then per position block run
    an address-based batch contraction over the filter taps, with the input
    pointers at dilated offsets pos + s*d.

    ``inp`` is C x W (one column per position); ``weights`` is (C*S) x K with
    row s*C + c holding tap s of input channel c; ``out`` is K x Q.
    """
    c_ch, k_ch, s_taps, d = spec.in_channels, spec.out_channels, spec.taps, spec.dilation
    if (inp.desc.rows, inp.desc.cols) != (c_ch, spec.width):
        raise TensorError("input must be C x W")
    if (weights.desc.rows, weights.desc.cols) != (c_ch * s_taps, k_ch):
        raise TensorError("weights must be (C*S) x K")
    if (out.desc.rows, out.desc.cols) != (k_ch, spec.out_width):
        raise TensorError("output must be K x Q")

    wt = alloc(TensorDesc(k_ch, c_ch * s_taps, k_ch, weights.desc.dtype))
    transform(weights, TransformSpec(TransformKind.TRANSPOSE), wt)

    for pos in range(0, spec.out_width, spec.block_q):
        bq = min(spec.block_q, spec.out_width - pos)
        a_refs = [(wt.primary, s * c_ch * k_ch) for s in range(s_taps)]
        b_refs = [(inp.primary, (pos + s * d) * inp.desc.ld) for s in range(s_taps)]
        gspec = GemmSpec(m=k_ch, n=bq, k=c_ch, lda=k_ch, ldb=inp.desc.ld,
                         ldc=out.desc.ld, in_dtype=wt.desc.dtype,
                         out_dtype=out.desc.dtype, beta=0.0)
        brgemm(gspec, BrgemmBatch.address(a_refs, b_refs), out.col_block(pos, bq))


# ---------------------------------------------------------------------------
# binary-reduce aggregation
# ---------------------------------------------------------------------------

def binary_reduce_aggregate(table0: TensorView, table1: TensorView,
                            idx0: Sequence[int], idx1: Sequence[int],
                            binary: BinaryKind, reduce_op: ReduceOp,
                            out: TensorView) -> None:
    """Feature aggregation: running reduce over i of
    binary(table0[:, idx0[i]], table1[:, idx1[i]]), fused (no gathered
    columns are materialised), accumulated in index order."""
    if len(idx0) != len(idx1):
        raise TensorError("index lists must have equal length")
    if table0.desc.rows != table1.desc.rows:
        raise TensorError("feature lengths differ")
    if (out.desc.rows, out.desc.cols) != (table0.desc.rows, 1):
        raise TensorError("output must be feature-length x 1")
    if reduce_op not in (ReduceOp.SUM, ReduceOp.MAX, ReduceOp.MIN):
        raise TensorError("reduce must be SUM, MAX or MIN")
    for p in idx0:
        if not 0 <= int(p) < table0.desc.cols:
            raise IndexError("idx0 out of bounds")
    for p in idx1:
        if not 0 <= int(p) < table1.desc.cols:
            raise IndexError("idx1 out of bounds")

    fold = {ReduceOp.SUM: BinaryKind.ADD, ReduceOp.MAX: BinaryKind.MAX,
            ReduceOp.MIN: BinaryKind.MIN}[reduce_op]
    tmp = alloc(TensorDesc(table0.desc.rows, 1, table0.desc.rows, out.desc.dtype))
    if reduce_op is ReduceOp.SUM:
        apply_unary(UnaryKind.ZERO, None, out)
        start = 0
    else:
        if not idx0:
            raise TensorError("MIN/MAX aggregation needs at least one index pair")
        apply_binary(binary, table0.col_block(int(idx0[0]), 1),
                     table1.col_block(int(idx1[0]), 1), out)
        start = 1
    for i in range(start, len(idx0)):
        apply_binary(binary, table0.col_block(int(idx0[i]), 1),
                     table1.col_block(int(idx1[i]), 1), tmp)
        apply_binary(fold, out, tmp, out)
