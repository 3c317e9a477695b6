import math

import numpy as np
import pytest

from tensorprim import (
    Approx,
    Bcast,
    BinaryKind,
    CmpOp,
    DType,
    GatherMode,
    InvalidSpecError,
    KernelSpec,
    PrngState,
    ReduceAxis,
    ReduceOp,
    ReduceSpec,
    TensorDesc,
    TensorError,
    TernaryKind,
    TransformKind,
    TransformSpec,
    UnaryKind,
    alloc,
    apply_binary,
    apply_ternary,
    apply_unary,
    broadcast,
    dispatch,
    from_array,
    gather_scatter,
    reduce,
    replicate_cols,
    shuffle_network_transpose,
    strided_load,
    strided_store,
    to_array,
    transform,
)
from tensorprim.ops import vnni_pack, vnni_unpack
from tensorprim.tensor import bool_to_mask, mask_to_bool

from util import bits_equal


def D(m, n, dtype=DType.FP32):
    return TensorDesc(m, n, m, dtype)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def test_dispatch_add_kernel():
    spec = KernelSpec(BinaryKind.ADD, (D(4, 4), D(4, 4)))
    kern = dispatch(spec)
    a = from_array(np.ones((4, 4), dtype=np.float32))
    b = from_array(np.full((4, 4), 2.0, dtype=np.float32))
    out = alloc(kern.out_desc)
    kern(a, b, out=out)
    assert np.all(to_array(out) == 3.0)


def test_dispatch_caches_by_spec_equality():
    s1 = KernelSpec(UnaryKind.RELU, (D(2, 2),))
    s2 = KernelSpec(UnaryKind.RELU, (D(2, 2),))
    assert dispatch(s1) is dispatch(s2)


def test_dispatch_distinct_approx_flags():
    pade = dispatch(KernelSpec(UnaryKind.TANH, (D(1, 8),), approx=Approx.PADE78))
    mmx = dispatch(KernelSpec(UnaryKind.TANH, (D(1, 8),), approx=Approx.MINIMAX16))
    assert pade is not mmx
    x = from_array(np.linspace(-2, 2, 8, dtype=np.float32).reshape(1, 8))
    o1, o2 = alloc(D(1, 8)), alloc(D(1, 8))
    pade(x, out=o1)
    mmx(x, out=o2)
    assert not bits_equal(to_array(o1), to_array(o2))  # different approximations
    assert np.allclose(to_array(o1), to_array(o2), atol=3e-3)


def test_dispatch_gather_without_indices_is_invalid():
    with pytest.raises(InvalidSpecError) as e:
        dispatch(KernelSpec(UnaryKind.GATHER, (D(4, 4),)))
    assert e.value.code == "flag"


def test_dispatch_shape_error_code():
    with pytest.raises(InvalidSpecError) as e:
        dispatch(KernelSpec(BinaryKind.MATMUL, (D(4, 3), D(4, 4))))
    assert e.value.code == "shape"


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------

def test_square_example():
    x = from_array(np.array([[1, -2], [3, 0]], dtype=np.float32))
    out = alloc(D(2, 2))
    apply_unary(UnaryKind.SQUARE, x, out)
    assert to_array(out).tolist() == [[1, 4], [9, 0]]


def test_relu_with_mask_example():
    x = from_array(np.array([[-1.0, 2.0]], dtype=np.float32))
    out = alloc(D(1, 2))
    apply_unary(UnaryKind.RELU, x, out, bitmask_output=True)
    assert to_array(out).tolist() == [[0.0, 2.0]]
    assert mask_to_bool(out.secondary, 1, 2).tolist() == [[False, True]]


def test_exp_at_one_matches_reference():
    x = from_array(np.array([[1.0]], dtype=np.float32))
    out = alloc(D(1, 1))
    apply_unary(UnaryKind.EXP, x, out)
    assert abs(out.item() / math.e - 1.0) <= 3e-4
    assert abs(out.item() - 2.7182817) < 1e-3


def test_identity_converts_dtype():
    x = from_array(np.array([[1.25, -3.0]], dtype=np.float32))
    out = alloc(D(1, 2, DType.FP64))
    apply_unary(UnaryKind.IDENTITY, x, out)
    assert to_array(out).dtype == np.float64
    assert to_array(out).tolist() == [[1.25, -3.0]]


def test_zero_ignores_input():
    out = alloc(D(2, 2), fill=7.0)
    apply_unary(UnaryKind.ZERO, None, out)
    assert np.all(to_array(out) == 0.0)


def test_inc_dec_sqrt_reciprocal_rsqrt():
    x = from_array(np.array([[4.0, 16.0]], dtype=np.float32))
    for kind, want in [(UnaryKind.INC, [5.0, 17.0]), (UnaryKind.DEC, [3.0, 15.0]),
                       (UnaryKind.SQRT, [2.0, 4.0]), (UnaryKind.RECIPROCAL, [0.25, 0.0625]),
                       (UnaryKind.RSQRT, [0.5, 0.25])]:
        out = alloc(D(1, 2))
        apply_unary(kind, x, out)
        assert to_array(out).tolist() == [want]


def test_backward_kinds_require_companions():
    x = from_array(np.ones((2, 2), dtype=np.float32))
    out = alloc(D(2, 2))
    with pytest.raises(TensorError):
        apply_unary(UnaryKind.RELU_INV, x, out)
    with pytest.raises(TensorError):
        apply_unary(UnaryKind.TANH_INV, x, out)


def test_relu_inv_uses_recorded_mask():
    x = from_array(np.array([[-1.0, 2.0, 0.5]], dtype=np.float32))
    fwd = alloc(D(1, 3))
    apply_unary(UnaryKind.RELU, x, fwd, bitmask_output=True)
    dy = from_array(np.array([[10.0, 20.0, 30.0]], dtype=np.float32))
    dy.secondary = fwd.secondary
    out = alloc(D(1, 3))
    apply_unary(UnaryKind.RELU_INV, dy, out)
    assert to_array(out).tolist() == [[0.0, 20.0, 30.0]]


# ---------------------------------------------------------------------------
# reduce
# ---------------------------------------------------------------------------

def test_reduce_sum_all_ones():
    out = alloc(D(1, 1))
    reduce(from_array(np.ones((2, 2), dtype=np.float32)),
           ReduceSpec(ReduceAxis.ALL, ReduceOp.SUM), out)
    assert out.item() == 4.0


def test_reduce_max_cols_example():
    out = alloc(D(1, 2))
    reduce(from_array(np.array([[1, 5], [3, 2]], dtype=np.float32)),
           ReduceSpec(ReduceAxis.COLS, ReduceOp.MAX), out)
    assert to_array(out).tolist() == [[3.0, 5.0]]


def test_reduce_sum_squared():
    out = alloc(D(1, 1))
    reduce(from_array(np.array([[1, 2, 3]], dtype=np.float32)),
           ReduceSpec(ReduceAxis.ALL, ReduceOp.SUM, squared=True), out)
    assert out.item() == 14.0


def test_reduce_rows_and_accumulation_dtype():
    # BF16 storage accumulates in FP32
    x32 = np.array([[1.5, 2.5, -1.0], [0.5, 0.5, 0.5]], dtype=np.float32)
    xb = from_array(x32, DType.BF16)
    out = alloc(D(2, 1))
    reduce(xb, ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM), out)
    assert to_array(out)[:, 0].tolist() == [3.0, 1.5]


def test_reduce_fixed_ascending_order():
    # ascending order differs bitwise from descending on this data
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 50)).astype(np.float32)
    out = alloc(D(1, 1))
    reduce(from_array(x), ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM), out)
    asc = np.float32(0)
    for v in x[0]:
        asc = asc + v
    assert out.item() == asc


def test_reduce_shape_guard():
    with pytest.raises(TensorError):
        reduce(from_array(np.ones((2, 2), dtype=np.float32)),
               ReduceSpec(ReduceAxis.ROWS, ReduceOp.SUM), alloc(D(1, 2)))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def test_transpose_example():
    x = from_array(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    out = alloc(D(3, 2))
    transform(x, TransformSpec(TransformKind.TRANSPOSE), out)
    assert to_array(out).tolist() == [[1, 4], [2, 5], [3, 6]]


def test_transpose_involution():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 3)).astype(np.float32)
    t = alloc(D(3, 5))
    transform(from_array(x), TransformSpec(TransformKind.TRANSPOSE), t)
    back = alloc(D(5, 3))
    transform(t, TransformSpec(TransformKind.TRANSPOSE), back)
    assert bits_equal(to_array(back), x)


def test_vnni_roundtrip_index_formula():
    rng = np.random.default_rng(3)
    pats = rng.integers(0, 1 << 16, size=(4, 6), dtype=np.uint16)
    packed = vnni_pack(pats, 2)
    assert packed.shape == (8, 3)
    # element (m, k) lands at group k//2, row m, slot k%2
    flat = packed.T.reshape(-1)
    for m in range(4):
        for k in range(6):
            assert flat[(k // 2) * 8 + m * 2 + (k % 2)] == pats[m, k]
    assert np.array_equal(vnni_unpack(packed, 2, 4, 6), pats)


def test_vnni_tail_padding():
    pats = np.arange(6, dtype=np.uint16).reshape(2, 3)  # 3 cols, alpha 2
    packed = vnni_pack(pats, 2)
    assert packed.shape == (4, 2)
    assert np.array_equal(vnni_unpack(packed, 2, 2, 3), pats)
    assert packed.T.reshape(-1)[5] == 0  # padded slot of the tail group


def test_vnni_transform_op_and_alpha_guard():
    x32 = np.linspace(0, 1, 8, dtype=np.float32).reshape(4, 2)
    xb = from_array(x32, DType.BF16)
    spec = TransformSpec(TransformKind.VNNI, alpha=2)
    out = alloc(TensorDesc(8, 1, 8, DType.BF16))
    transform(xb, spec, out)
    assert bits_equal(vnni_unpack(np.array(out.as2d()), 2, 4, 2), np.array(xb.as2d()))
    with pytest.raises(InvalidSpecError):
        transform(xb, TransformSpec(TransformKind.VNNI, alpha=4), out)


def test_vnni_to_vnnit_composition():
    rng = np.random.default_rng(4)
    m, n = 6, 4
    pats = rng.integers(0, 1 << 16, size=(m, n), dtype=np.uint16)
    v = from_array(np.zeros((m, n), np.float32), DType.BF16)
    v.as2d()[:, :] = pats
    vn = alloc(TensorDesc(m * 2, n // 2, m * 2, DType.BF16))
    transform(v, TransformSpec(TransformKind.VNNI, alpha=2), vn)
    # composed op on the VNNI tensor
    out = alloc(TensorDesc(n * 2, m // 2, n * 2, DType.BF16))
    transform(vn, TransformSpec(TransformKind.VNNI_TO_VNNIT, alpha=2, alpha_out=2,
                                rows=m, cols=n), out)
    # oracle: de-format, transpose, re-format
    want = vnni_pack(pats.T, 2)
    assert bits_equal(np.array(out.as2d()), want)


# ---------------------------------------------------------------------------
# shuffle-network transpose
# ---------------------------------------------------------------------------

def test_shuffle_identity_tile():
    eye = np.eye(4, dtype=np.float32)
    out = alloc(D(4, 4))
    shuffle_network_transpose(from_array(eye), out)
    assert bits_equal(to_array(out), eye)


def test_shuffle_matches_transpose_16():
    x = (16 * np.arange(16)[:, None] + np.arange(16)[None, :]).astype(np.float32)
    out = alloc(D(16, 16))
    shuffle_network_transpose(from_array(x), out)
    assert bits_equal(to_array(out), x.T.copy())


def test_shuffle_two_stage_simulation_4x4():
    """Stage-by-stage oracle: interleave pairs at doubling widths."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 4)).astype(np.float32)
    regs = [x[:, j].copy() for j in range(4)]

    def unpack_lo(u, v, w):
        cu, cv = u.reshape(-1, w), v.reshape(-1, w)
        half = u.size // (2 * w)
        return np.stack([cu[:half], cv[:half]], axis=1).reshape(-1)

    def unpack_hi(u, v, w):
        cu, cv = u.reshape(-1, w), v.reshape(-1, w)
        half = u.size // (2 * w)
        return np.stack([cu[half:], cv[half:]], axis=1).reshape(-1)

    # stage 1: 32-bit interleaves of neighbours; stage 2: 64-bit at distance 2
    t = [unpack_lo(regs[0], regs[1], 1), unpack_hi(regs[0], regs[1], 1),
         unpack_lo(regs[2], regs[3], 1), unpack_hi(regs[2], regs[3], 1)]
    o = [unpack_lo(t[0], t[2], 2), unpack_hi(t[0], t[2], 2),
         unpack_lo(t[1], t[3], 2), unpack_hi(t[1], t[3], 2)]
    manual = np.stack(o, axis=1)
    out = alloc(D(4, 4))
    shuffle_network_transpose(from_array(x), out)
    assert bits_equal(to_array(out), manual)
    assert bits_equal(manual, x.T.copy())


def test_shuffle_rejects_bad_tiles():
    with pytest.raises(TensorError):
        shuffle_network_transpose(from_array(np.zeros((5, 5), np.float32)), alloc(D(5, 5)))
    with pytest.raises(InvalidSpecError):
        shuffle_network_transpose(from_array(np.zeros((4, 4))), alloc(D(4, 4, DType.FP64)))


# ---------------------------------------------------------------------------
# gather / scatter
# ---------------------------------------------------------------------------

def test_gather_cols_reorders():
    x = from_array(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    out = alloc(D(2, 2))
    gather_scatter(x, np.array([2, 0]), GatherMode.GATHER_COLS, out)
    assert to_array(out).tolist() == [[3, 1], [6, 4]]


def test_gather_scatter_rows():
    x = from_array(np.array([[1, 2], [3, 4], [5, 6]], dtype=np.float32))
    out = alloc(D(2, 2))
    gather_scatter(x, np.array([2, 0]), GatherMode.GATHER_ROWS, out)
    assert to_array(out).tolist() == [[5, 6], [1, 2]]
    back = alloc(D(3, 2))
    gather_scatter(out, np.array([2, 0]), GatherMode.SCATTER_ROWS, back)
    b = to_array(back)
    assert b[2].tolist() == [5, 6] and b[0].tolist() == [1, 2]


def test_prng_unary_fills_deterministic_uniforms():
    src = alloc(D(1, 1))
    src.tertiary = {"prng": PrngState(123, 6)}
    out1 = alloc(D(64, 6))
    apply_unary(UnaryKind.PRNG, src, out1)
    src2 = alloc(D(1, 1))
    src2.tertiary = {"prng": PrngState(123, 6)}
    out2 = alloc(D(64, 6))
    apply_unary(UnaryKind.PRNG, src2, out2)
    vals = to_array(out1)
    assert bits_equal(vals, to_array(out2))
    assert np.all(vals >= 0.0) and np.all(vals < 1.0)
    assert 0.3 < vals.mean() < 0.7


def test_scatter_then_gather_identity():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 5)).astype(np.float32)
    perm = rng.permutation(5)
    s = alloc(D(3, 5))
    gather_scatter(from_array(x), perm, GatherMode.SCATTER_COLS, s)
    g = alloc(D(3, 5))
    gather_scatter(s, perm, GatherMode.GATHER_COLS, g)
    assert bits_equal(to_array(g), x)


def test_gather2d_example():
    x = from_array(np.array([["1", "2"], ["3", "4"]], dtype=np.float32))
    out = alloc(D(2, 1))
    gather_scatter(x, np.array([[0, 0], [1, 1]]), GatherMode.GATHER2D, out)
    assert to_array(out)[:, 0].tolist() == [1.0, 4.0]


def test_out_of_bounds_rejected_before_write():
    x = from_array(np.ones((2, 2), dtype=np.float32))
    out = alloc(D(2, 2), fill=5.0)
    with pytest.raises(IndexError):
        gather_scatter(x, np.array([0, 7]), GatherMode.GATHER_COLS, out)
    assert np.all(to_array(out) == 5.0)  # untouched


def test_scatter_duplicate_last_writer_wins():
    x = from_array(np.array([[1.0, 2.0]], dtype=np.float32))
    out = alloc(D(1, 2))
    gather_scatter(x, np.array([0, 0]), GatherMode.SCATTER_COLS, out)
    assert out.item(0, 0) == 2.0


def test_strided_load_store_affine():
    x = from_array(np.arange(24, dtype=np.float32).reshape(4, 6))
    out = alloc(D(2, 3))
    strided_load(x, out, row_stride=2, col_stride=2)
    assert to_array(out).tolist() == [[0, 2, 4], [12, 14, 16]]
    dst = alloc(D(4, 6))
    strided_store(out, dst, row_stride=2, col_stride=2)
    back = to_array(dst)
    assert back[0, 0] == 0 and back[2, 4] == 16 and back[1, 1] == 0


def test_replicate_cols_examples():
    x = from_array(np.array([[1.0], [2.0]], dtype=np.float32))
    out = alloc(D(2, 3))
    replicate_cols(x, 3, out)
    assert to_array(out).tolist() == [[1, 1, 1], [2, 2, 2]]
    one = alloc(D(2, 1))
    replicate_cols(x, 1, one)
    assert bits_equal(to_array(one), to_array(x))
    # equals COL-broadcast materialisation
    bc = broadcast(x, Bcast.COL, 2, 3)
    assert bits_equal(to_array(out), np.array(bc.logical2d()))


# ---------------------------------------------------------------------------
# binary / ternary
# ---------------------------------------------------------------------------

def test_binary_examples():
    a = from_array(np.array([[5.0, 5.0]], dtype=np.float32))
    b = from_array(np.array([[2.0, 3.0]], dtype=np.float32))
    out = alloc(D(1, 2))
    apply_binary(BinaryKind.SUB, a, b, out)
    assert to_array(out).tolist() == [[3.0, 2.0]]


def test_compare_gt_bitmask():
    a = from_array(np.array([[1.0, 4.0]], dtype=np.float32))
    b = from_array(np.array([[2.0, 3.0]], dtype=np.float32))
    out = alloc(TensorDesc(1, 2, 1, DType.BIT))
    apply_binary(BinaryKind.COMPARE, a, b, out, cmp=CmpOp.GT)
    assert mask_to_bool(out.primary, 1, 2).tolist() == [[False, True]]


def test_mul_scalar_broadcast():
    x = from_array(np.array([[1, 2], [3, 4]], dtype=np.float32))
    two = broadcast(from_array(np.array([[2.0]], dtype=np.float32)), Bcast.SCALAR, 2, 2)
    out = alloc(D(2, 2))
    apply_binary(BinaryKind.MUL, x, two, out)
    assert to_array(out).tolist() == [[2, 4], [6, 8]]


def test_div_ieee_semantics():
    a = from_array(np.array([[1.0, -1.0, 0.0]], dtype=np.float32))
    b = from_array(np.array([[0.0, 0.0, 0.0]], dtype=np.float32))
    out = alloc(D(1, 3))
    apply_binary(BinaryKind.DIV, a, b, out)
    r = to_array(out)[0]
    assert np.isposinf(r[0]) and np.isneginf(r[1]) and np.isnan(r[2])


def test_matmul_binary_delegates_to_contraction():
    a = from_array(np.eye(3, dtype=np.float32))
    b = from_array(np.arange(9, dtype=np.float32).reshape(3, 3))
    out = alloc(D(3, 3))
    apply_binary(BinaryKind.MATMUL, a, b, out)
    assert bits_equal(to_array(out), np.arange(9, dtype=np.float32).reshape(3, 3))


def test_pack_binary_matches_split():
    x = np.array([[2.75, -0.375]], dtype=np.float32)
    from tensorprim import split_fp32
    s = split_fp32(from_array(x))
    out = alloc(D(1, 2))
    apply_binary(BinaryKind.PACK, s.hi, s.lo, out)
    assert bits_equal(to_array(out), x)


def test_ternary_examples():
    a = from_array(np.array([[1.0, 2.0]], dtype=np.float32))
    b = from_array(np.array([[3.0, 4.0]], dtype=np.float32))
    c = from_array(np.array([[10.0, 10.0]], dtype=np.float32))
    out = alloc(D(1, 2))
    apply_ternary(TernaryKind.MULADD, a, b, c, out)
    assert to_array(out).tolist() == [[13.0, 18.0]]
    apply_ternary(TernaryKind.NMULADD, a, b, c, out)
    assert to_array(out).tolist() == [[7.0, 2.0]]


def test_blend_with_bitmask():
    a = from_array(np.array([[1.0, 1.0]], dtype=np.float32))
    b = from_array(np.array([[9.0, 9.0]], dtype=np.float32))
    mask = alloc(TensorDesc(1, 2, 1, DType.BIT))
    mask.primary[:] = bool_to_mask(np.array([[True, False]]))
    out = alloc(D(1, 2))
    apply_ternary(TernaryKind.BLEND, a, b, mask, out)
    assert to_array(out).tolist() == [[1.0, 9.0]]
    with pytest.raises(InvalidSpecError):
        apply_ternary(TernaryKind.BLEND, a, b, b, out)


# ---------------------------------------------------------------------------
# PRNG / dropout
# ---------------------------------------------------------------------------

def test_prng_state_never_zero_and_xorshift():
    st = PrngState(0, 4)
    assert np.all((st.x | st.y | st.z | st.w) != 0)
    x, y, z, w = int(st.x[2]), int(st.y[2]), int(st.z[2]), int(st.w[2])
    got = int(st.step()[2])
    t = (x ^ (x << 11)) & 0xFFFFFFFF
    want = (w ^ (w >> 19)) ^ (t ^ (t >> 8))
    assert got == want


def test_dropout_p0_is_identity():
    x = from_array(np.arange(6, dtype=np.float32).reshape(2, 3))
    x.tertiary = {"prng": PrngState(1, 3)}
    out = alloc(D(2, 3))
    apply_unary(UnaryKind.DROPOUT, x, out, dropout_p=0.0)
    assert bits_equal(to_array(out), np.arange(6, dtype=np.float32).reshape(2, 3))
    assert np.all(mask_to_bool(out.secondary, 2, 3))


def test_dropout_requires_state_and_valid_p():
    x = from_array(np.ones((2, 2), dtype=np.float32))
    out = alloc(D(2, 2))
    with pytest.raises(InvalidSpecError):
        apply_unary(UnaryKind.DROPOUT, x, out, dropout_p=0.5)
    x.tertiary = {"prng": PrngState(0, 2)}
    with pytest.raises(InvalidSpecError):
        apply_unary(UnaryKind.DROPOUT, x, out, dropout_p=1.5)


def test_dropout_forward_backward_masks_agree():
    x = from_array(np.ones((16, 8), dtype=np.float32))
    x.tertiary = {"prng": PrngState(9, 8)}
    fwd = alloc(D(16, 8))
    apply_unary(UnaryKind.DROPOUT, x, fwd, dropout_p=0.5)
    dy = from_array(np.ones((16, 8), dtype=np.float32))
    dy.secondary = fwd.secondary
    back = alloc(D(16, 8))
    apply_unary(UnaryKind.DROPOUT_INV, dy, back, dropout_p=0.5)
    keep = mask_to_bool(fwd.secondary, 16, 8)
    vals = to_array(back)
    assert np.all(vals[keep] == 2.0) and np.all(vals[~keep] == 0.0)


def test_quantize_dequantize_roundtrip():
    rng = np.random.default_rng(7)
    x = rng.uniform(-2, 2, (8, 8)).astype(np.float32)
    q = alloc(D(8, 8, DType.INT8))
    apply_unary(UnaryKind.QUANTIZE, from_array(x), q)
    d = alloc(D(8, 8))
    apply_unary(UnaryKind.DEQUANTIZE, q, d)
    assert np.max(np.abs(to_array(d) - x)) <= q.tertiary["scale"] / 2 + 1e-9


def test_unpack_rejects_non_fp32():
    x = from_array(np.ones((2, 2)))
    with pytest.raises(InvalidSpecError):
        apply_unary(UnaryKind.UNPACK, x, alloc(D(2, 2, DType.BF16)))
