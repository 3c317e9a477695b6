"""2D tensor descriptors, views, broadcast semantics and bitmask companions.

Storage is column-major: element (i, j) of an M x N tensor lives at linear
index ``i + j * ld`` of the flat backing buffer, with ``ld >= M``.  Broadcast
views keep a reduced physical extent (one row / one column / one element) but
present the full logical M x N shape.

Bitmask companions carry one bit per logical element, rows packed LSB-first
within a column and every column padded up to a byte boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import enum
from typing import Optional

import numpy as np

from .dtypes import (
    DType,
    bf16_to_fp32,
    fp32_to_bf16_rne,
    pack_fp32_bits,
    split_fp32_bits,
)


class TensorError(ValueError):
    """Raised for malformed descriptors, shape mismatches and bad buffers."""


class Bcast(enum.Enum):
    NONE = "none"
    ROW = "row"        # physical 1 x N, replicated M times
    COL = "col"        # physical M x 1, replicated N times
    SCALAR = "scalar"  # physical 1 x 1, replicated M x N times


@dataclass(frozen=True)
class TensorDesc:
    rows: int
    cols: int
    ld: int
    dtype: DType
    bcast: Bcast = Bcast.NONE

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise TensorError(f"extent must be positive, got {self.rows}x{self.cols}")
        if self.ld < 1:
            raise TensorError(f"ld must be positive, got {self.ld}")
        if self.bcast is Bcast.NONE and self.dtype is not DType.BIT and self.ld < self.rows:
            raise TensorError(f"ld {self.ld} < rows {self.rows}")

    @property
    def phys_rows(self) -> int:
        return 1 if self.bcast in (Bcast.ROW, Bcast.SCALAR) else self.rows

    @property
    def phys_cols(self) -> int:
        return 1 if self.bcast in (Bcast.COL, Bcast.SCALAR) else self.cols

    @property
    def min_buffer_len(self) -> int:
        if self.dtype is DType.BIT:
            return bitmask_bytes(self.phys_rows, self.phys_cols)
        return self.ld * (self.phys_cols - 1) + self.phys_rows

    @property
    def nbytes(self) -> int:
        """Dense logical size in bytes (used for temp sizing)."""
        if self.dtype is DType.BIT:
            return bitmask_bytes(self.rows, self.cols)
        return self.rows * self.cols * self.dtype.storage.itemsize

    def contiguous(self) -> "TensorDesc":
        return replace(self, ld=self.phys_rows)


def desc(rows: int, cols: int, dtype: DType = DType.FP32, ld: int | None = None,
         bcast: Bcast = Bcast.NONE) -> TensorDesc:
    d = TensorDesc(rows, cols, ld if ld is not None else rows, dtype, bcast)
    return d


@dataclass
class TensorView:
    """A descriptor plus runtime payloads.

    ``primary`` is the flat element buffer.  ``secondary`` optionally holds a
    companion buffer: a packed bitmask, an index array, or the lo-halves of a
    split FP32 tensor (and, for backward activation kernels, the forward
    input).  ``tertiary`` carries auxiliary scalars such as a quantization
    scale or a PRNG seed.
    """

    desc: TensorDesc
    primary: np.ndarray
    secondary: Optional[np.ndarray] = None
    tertiary: Optional[dict] = field(default=None)

    def __post_init__(self):
        buf = np.asarray(self.primary)
        if buf.ndim != 1:
            raise TensorError("primary buffer must be flat (1-D)")
        if buf.dtype != self.desc.dtype.storage:
            raise TensorError(
                f"buffer dtype {buf.dtype} does not match {self.desc.dtype}")
        if buf.size < self.desc.min_buffer_len:
            raise TensorError(
                f"buffer too small: {buf.size} < {self.desc.min_buffer_len}")
        self.primary = buf

    # -- raw 2D access -----------------------------------------------------

    def as2d(self) -> np.ndarray:
        """Writable physical 2D window (phys_rows x phys_cols), zero copy."""
        d = self.desc
        if d.dtype is DType.BIT:
            raise TensorError("BIT tensors are packed; use mask_to_bool")
        pr, pc, ld = d.phys_rows, d.phys_cols, d.ld
        return np.lib.stride_tricks.as_strided(
            self.primary,
            shape=(pr, pc),
            strides=(self.primary.strides[0], ld * self.primary.strides[0]),
        )

    def logical2d(self) -> np.ndarray:
        """Read-only logical M x N window with broadcast applied."""
        d = self.desc
        phys = self.as2d()
        if d.bcast is Bcast.NONE:
            return phys
        return np.broadcast_to(phys, (d.rows, d.cols))

    # -- scalar element access (used by kernel glue code) -------------------

    def item(self, i: int = 0, j: int = 0) -> float:
        return self.logical2d()[i, j].item()

    def set_item(self, i: int, j: int, value) -> None:
        self.as2d()[i, j] = value

    # -- sub-views -----------------------------------------------------------

    def col_block(self, j0: int, ncols: int) -> "TensorView":
        """Zero-copy view of columns [j0, j0 + ncols)."""
        d = self.desc
        if d.bcast is not Bcast.NONE:
            raise TensorError("col_block on broadcast view")
        if j0 < 0 or j0 + ncols > d.cols:
            raise TensorError("column block out of range")
        off = j0 * d.ld
        sub = TensorDesc(d.rows, ncols, d.ld, d.dtype)
        return TensorView(sub, self.primary[off:off + sub.min_buffer_len])

    def row_block(self, i0: int, nrows: int) -> "TensorView":
        """Zero-copy view of rows [i0, i0 + nrows)."""
        d = self.desc
        if d.bcast is not Bcast.NONE:
            raise TensorError("row_block on broadcast view")
        if i0 < 0 or i0 + nrows > d.rows:
            raise TensorError("row block out of range")
        sub = TensorDesc(nrows, d.cols, d.ld, d.dtype)
        n = d.ld * (d.cols - 1) + i0 + nrows
        return TensorView(sub, self.primary[i0:n])


def alloc(d: TensorDesc, fill=None) -> TensorView:
    buf = np.zeros(d.min_buffer_len, dtype=d.dtype.storage)
    v = TensorView(d, buf)
    if fill is not None and d.dtype is not DType.BIT:
        v.as2d()[:, :] = fill
    return v


def view_at(buffer: np.ndarray, offset: int, d: TensorDesc) -> TensorView:
    """View into ``buffer`` starting at element ``offset``."""
    return TensorView(d, buffer[offset:offset + d.min_buffer_len])


def from_array(a: np.ndarray, dtype: DType | None = None) -> TensorView:
    """Copy a 2D numpy array into a fresh contiguous column-major view.

    FP32/FP64 arrays destined for a BF16 view are narrowed with
    round-to-nearest-even.
    """
    a = np.atleast_2d(np.asarray(a))
    if dtype is None:
        dtype = {np.dtype(np.float64): DType.FP64,
                 np.dtype(np.float32): DType.FP32,
                 np.dtype(np.int32): DType.INT32,
                 np.dtype(np.int8): DType.INT8}.get(a.dtype)
        if dtype is None:
            raise TensorError(f"no DType mapping for {a.dtype}")
    rows, cols = a.shape
    d = TensorDesc(rows, cols, rows, dtype)
    v = alloc(d)
    if dtype is DType.BF16:
        v.as2d()[:, :] = fp32_to_bf16_rne(a.astype(np.float32))
    else:
        v.as2d()[:, :] = a.astype(dtype.storage)
    return v


def broadcast(v: TensorView, bcast: Bcast, rows: int, cols: int) -> TensorView:
    """Wrap a physical 1xN / Mx1 / 1x1 view as a logical rows x cols one."""
    d = v.desc
    if bcast is Bcast.ROW and (d.rows, d.cols) != (1, cols):
        raise TensorError("ROW broadcast needs a 1 x N source")
    if bcast is Bcast.COL and (d.rows, d.cols) != (rows, 1):
        raise TensorError("COL broadcast needs an M x 1 source")
    if bcast is Bcast.SCALAR and (d.rows, d.cols) != (1, 1):
        raise TensorError("SCALAR broadcast needs a 1 x 1 source")
    nd = TensorDesc(rows, cols, d.ld, d.dtype, bcast)
    return TensorView(nd, v.primary, v.secondary, v.tertiary)


def to_array(v: TensorView) -> np.ndarray:
    """Dense logical copy as a numpy array (BF16 widened to FP32)."""
    a = np.array(v.logical2d())
    if v.desc.dtype is DType.BF16:
        return bf16_to_fp32(a)
    return a


def values2d(v: TensorView) -> np.ndarray:
    """Logical window in compute representation (BF16 widened, zero copy
    for everything that does not need widening)."""
    if v.desc.dtype is DType.BF16:
        return bf16_to_fp32(v.logical2d())
    return v.logical2d()


# -- bitmask companions ------------------------------------------------------

def bitmask_bytes(rows: int, cols: int) -> int:
    return ((rows + 7) // 8) * cols


def alloc_bitmask(rows: int, cols: int) -> np.ndarray:
    return np.zeros(bitmask_bytes(rows, cols), dtype=np.uint8)


def bool_to_mask(b: np.ndarray) -> np.ndarray:
    """Pack a boolean M x N array into the column-padded bitmask layout."""
    b = np.asarray(b, dtype=bool)
    rows, cols = b.shape
    bpc = (rows + 7) // 8
    padded = np.zeros((bpc * 8, cols), dtype=np.uint8)
    padded[:rows, :] = b
    # packbits along rows, LSB-first within each byte
    return np.packbits(padded, axis=0, bitorder="little").T.reshape(-1).copy()


def mask_to_bool(mask: np.ndarray, rows: int, cols: int) -> np.ndarray:
    bpc = (rows + 7) // 8
    m = np.asarray(mask, dtype=np.uint8).reshape(cols, bpc).T
    bits = np.unpackbits(m, axis=0, bitorder="little")
    return bits[:rows, :].astype(bool)


# -- split tensors -------------------------------------------------------------

@dataclass
class SplitTensor:
    """FP32 tensor stored as separate hi / lo 16-bit halves.

    ``hi`` holds the 16 MSBs of every element (a valid BF16 tensor); ``lo``
    the 16 LSBs.  ``(hi << 16) | lo`` recovers the FP32 bit pattern exactly.
    """

    hi: TensorView
    lo: TensorView

    def __post_init__(self):
        if (self.hi.desc.rows, self.hi.desc.cols) != (self.lo.desc.rows, self.lo.desc.cols):
            raise TensorError("hi/lo shape mismatch")
        if self.hi.desc.dtype is not DType.BF16 or self.lo.desc.dtype is not DType.INT16:
            raise TensorError("hi must be BF16 patterns, lo INT16 patterns")

    @property
    def rows(self) -> int:
        return self.hi.desc.rows

    @property
    def cols(self) -> int:
        return self.hi.desc.cols


def split_fp32(src: TensorView) -> SplitTensor:
    """Split an FP32 view into hi/lo 16-bit halves (pure bit split)."""
    if src.desc.dtype is not DType.FP32:
        raise TensorError("split_fp32 requires an FP32 source")
    if src.desc.bcast is not Bcast.NONE:
        raise TensorError("split_fp32 on broadcast view")
    hi_bits, lo_bits = split_fp32_bits(src.as2d())
    rows, cols = src.desc.rows, src.desc.cols
    hi = alloc(TensorDesc(rows, cols, rows, DType.BF16))
    lo = alloc(TensorDesc(rows, cols, rows, DType.INT16))
    hi.as2d()[:, :] = hi_bits
    lo.as2d()[:, :] = lo_bits
    return SplitTensor(hi, lo)


def pack_fp32(split: SplitTensor, out: TensorView | None = None) -> TensorView:
    """Bitwise inverse of :func:`split_fp32`."""
    rows, cols = split.rows, split.cols
    if out is None:
        out = alloc(TensorDesc(rows, cols, rows, DType.FP32))
    elif (out.desc.rows, out.desc.cols) != (rows, cols) or out.desc.dtype is not DType.FP32:
        raise TensorError("pack_fp32 output mismatch")
    out.as2d()[:, :] = pack_fp32_bits(split.hi.as2d(), split.lo.as2d())
    return out


# -- conversions ----------------------------------------------------------------

_CONVERT_PAIRS = {
    (DType.FP32, DType.BF16),
    (DType.BF16, DType.FP32),
    (DType.FP32, DType.FP64),
    (DType.FP64, DType.FP32),
}


def convert(src: TensorView, dst_dtype: DType, out: TensorView | None = None) -> TensorView:
    """Element-wise datatype conversion.

    FP32 -> BF16 rounds to nearest even; BF16 -> FP32 is exact.  INT8 is only
    reachable through the quantize/dequantize kernels, not here.
    """
    sd = src.desc.dtype
    if src.desc.bcast is not Bcast.NONE:
        raise TensorError("convert requires a non-broadcast source")
    if sd == dst_dtype:
        pair_ok = True
    else:
        pair_ok = (sd, dst_dtype) in _CONVERT_PAIRS
    if not pair_ok:
        raise TensorError(f"unsupported conversion {sd} -> {dst_dtype}")
    rows, cols = src.desc.rows, src.desc.cols
    if out is None:
        out = alloc(TensorDesc(rows, cols, rows, dst_dtype))
    elif (out.desc.rows, out.desc.cols) != (rows, cols) or out.desc.dtype != dst_dtype:
        raise TensorError("convert output mismatch")
    s = src.as2d()
    if sd is DType.BF16:
        s = bf16_to_fp32(s)
    if dst_dtype is DType.BF16:
        out.as2d()[:, :] = fp32_to_bf16_rne(np.asarray(s, dtype=np.float32))
    else:
        out.as2d()[:, :] = np.asarray(s).astype(dst_dtype.storage)
    return out
