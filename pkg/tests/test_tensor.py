import numpy as np
import pytest

from tensorprim import (
    Bcast,
    DType,
    TensorDesc,
    TensorError,
    TensorView,
    alloc,
    broadcast,
    convert,
    from_array,
    pack_fp32,
    split_fp32,
    to_array,
)
from tensorprim.tensor import bool_to_mask, mask_to_bool, view_at

from util import bits_equal


def test_desc_validation():
    with pytest.raises(TensorError):
        TensorDesc(0, 3, 1, DType.FP32)
    with pytest.raises(TensorError):
        TensorDesc(4, 3, 2, DType.FP32)  # ld < rows
    d = TensorDesc(4, 3, 6, DType.FP32)
    assert d.min_buffer_len == 6 * 2 + 4


def test_column_major_addressing_with_padding():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m, n = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        ld = m + int(rng.integers(0, 3))
        v = alloc(TensorDesc(m, n, ld, DType.FP64))
        ref = rng.standard_normal((m, n))
        for i in range(m):
            for j in range(n):
                v.set_item(i, j, ref[i, j])
        # element (i, j) must land at flat index i + j*ld
        for i in range(m):
            for j in range(n):
                assert v.primary[i + j * ld] == ref[i, j]
        assert bits_equal(to_array(v), ref)


def test_buffer_too_small_rejected():
    with pytest.raises(TensorError):
        TensorView(TensorDesc(4, 4, 4, DType.FP32), np.zeros(15, np.float32))


def test_broadcast_views_match_replication():
    rng = np.random.default_rng(1)
    m, n = 4, 6
    row = rng.standard_normal((1, n)).astype(np.float32)
    col = rng.standard_normal((m, 1)).astype(np.float32)
    sca = rng.standard_normal((1, 1)).astype(np.float32)
    assert bits_equal(np.array(broadcast(from_array(row), Bcast.ROW, m, n).logical2d()),
                      np.repeat(row, m, axis=0))
    assert bits_equal(np.array(broadcast(from_array(col), Bcast.COL, m, n).logical2d()),
                      np.repeat(col, n, axis=1))
    assert bits_equal(np.array(broadcast(from_array(sca), Bcast.SCALAR, m, n).logical2d()),
                      np.full((m, n), sca[0, 0], np.float32))


def test_broadcast_shape_guards():
    v = from_array(np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(TensorError):
        broadcast(v, Bcast.ROW, 4, 3)
    with pytest.raises(TensorError):
        broadcast(v, Bcast.SCALAR, 4, 4)


def test_col_and_row_blocks_are_views():
    v = from_array(np.arange(24, dtype=np.float32).reshape(4, 6))
    cb = v.col_block(2, 3)
    rb = v.row_block(1, 2)
    assert bits_equal(to_array(cb), np.arange(24, dtype=np.float32).reshape(4, 6)[:, 2:5])
    assert bits_equal(to_array(rb), np.arange(24, dtype=np.float32).reshape(4, 6)[1:3, :])
    cb.set_item(0, 0, -1.0)
    assert v.item(0, 2) == -1.0  # shared storage


def test_view_at_offsets():
    buf = np.arange(20, dtype=np.float32)
    v = view_at(buf, 4, TensorDesc(2, 3, 4, DType.FP32))
    assert v.item(0, 0) == 4.0 and v.item(1, 2) == 13.0


def test_convert_bf16_round_trip_exact_values():
    x = from_array(np.array([[1.0, -2.5, 0.15625]], dtype=np.float32))
    b = convert(x, DType.BF16)
    back = convert(b, DType.FP32)
    assert bits_equal(to_array(back), np.array([[1.0, -2.5, 0.15625]], dtype=np.float32))


def test_convert_fp64_paths_and_rejections():
    x = from_array(np.array([[1.5]], dtype=np.float32))
    d = convert(x, DType.FP64)
    assert d.desc.dtype is DType.FP64 and d.item() == 1.5
    with pytest.raises(TensorError):
        convert(x, DType.INT8)  # int8 only via the quantize path
    b = convert(x, DType.BF16)
    with pytest.raises(TensorError):
        convert(b, DType.FP64)  # unsupported pair


def test_split_pack_views():
    x = from_array(np.array([[1.0, 3.141592653589793]], dtype=np.float32))
    s = split_fp32(x)
    assert int(s.hi.as2d()[0, 0]) == 0x3F80 and int(s.lo.as2d()[0, 0]) == 0x0000
    y = pack_fp32(s)
    assert bits_equal(to_array(y), to_array(x))


def test_bitmask_layout_column_padded():
    b = np.zeros((10, 3), dtype=bool)
    b[0, 0] = b[9, 1] = b[3, 2] = True
    m = bool_to_mask(b)
    # one bit per element, rows LSB-first, 2 bytes per column for 10 rows
    assert m.size == 2 * 3
    assert m[0] == 0x01            # row 0 of column 0
    assert m[3] == 0x02            # row 9 -> bit 1 of byte 1 in column 1
    assert m[4] == 0x08            # row 3 of column 2
    assert np.array_equal(mask_to_bool(m, 10, 3), b)
