import numpy as np

from tensorprim.dtypes import (
    DType,
    bf16_to_fp32,
    fp32_to_bf16_rne,
    pack_fp32_bits,
    split_fp32_bits,
)

from util import bits_equal


def test_dtype_bits_match_variants():
    assert {d: d.bits for d in DType} == {
        DType.FP64: 64, DType.FP32: 32, DType.BF16: 16,
        DType.INT32: 32, DType.INT16: 16, DType.INT8: 8, DType.BIT: 1,
    }


def test_bf16_widening_aliases_fp32():
    # appending 16 zero bits must give an FP32 whose upper half is the pattern
    pats = np.arange(1 << 16, dtype=np.uint16)
    wide = bf16_to_fp32(pats)
    assert np.array_equal(wide.view(np.uint32) >> 16, pats.astype(np.uint32))
    assert np.array_equal(wide.view(np.uint32) & 0xFFFF, np.zeros(1 << 16, np.uint32))


def test_bf16_roundtrip_exhaustive():
    # includes NaN payload cases: truncation must reproduce every pattern
    pats = np.arange(1 << 16, dtype=np.uint16)
    assert np.array_equal(fp32_to_bf16_rne(bf16_to_fp32(pats)), pats)


def test_rne_rounds_down_just_above_one():
    got = fp32_to_bf16_rne(np.uint32(0x3F800001).view(np.float32))
    assert int(got) == 0x3F80


def test_rne_known_values():
    assert int(fp32_to_bf16_rne(np.float32(1.0))) == 0x3F80
    assert float(bf16_to_fp32(np.uint16(0x3F80))) == 1.0


def test_rne_ties_to_even_on_midpoints():
    # exact midpoints between adjacent BF16 values: even mantissa LSB wins
    base = np.arange(1 << 16, dtype=np.uint32)
    finite = base[((base >> 7) & 0xFF) != 0xFF]
    mid = (finite << np.uint32(16)) | np.uint32(0x8000)
    got = fp32_to_bf16_rne(mid.view(np.float32)).astype(np.uint32)
    want = np.where((finite & 1) == 0, finite, finite + 1)
    assert np.array_equal(got, want)


def test_rne_result_is_nearest_neighbor():
    rng = np.random.default_rng(0)
    pats = rng.integers(0, 1 << 32, size=100_000, dtype=np.uint32).view(np.float32)
    vals = pats[np.isfinite(pats) & (np.abs(pats) < 3.38e38)]
    v64 = vals.astype(np.float64)
    got = bf16_to_fp32(fp32_to_bf16_rne(vals)).astype(np.float64)
    lo = bf16_to_fp32((vals.view(np.uint32) >> 16).astype(np.uint16)).astype(np.float64)
    hi = bf16_to_fp32(((vals.view(np.uint32) >> 16) + 1).astype(np.uint16)).astype(np.float64)
    best = np.minimum(np.abs(lo - v64), np.abs(hi - v64))
    assert np.all(np.abs(got - v64) <= best)


def test_rne_nan_stays_nan():
    nans = np.array([0x7FC00001, 0x7F800001, 0xFFC00000, 0x7F80FFFF], dtype=np.uint32)
    out = fp32_to_bf16_rne(nans.view(np.float32))
    assert np.all(np.isnan(bf16_to_fp32(out)))


def test_split_known_patterns():
    hi, lo = split_fp32_bits(np.float32(1.0))
    assert (int(hi), int(lo)) == (0x3F80, 0x0000)
    pi = np.uint32(0x40490FDB).view(np.float32)
    hi, lo = split_fp32_bits(pi)
    assert (int(hi), int(lo)) == (0x4049, 0x0FDB)


def test_pack_known_patterns():
    assert float(pack_fp32_bits(np.uint16(0x3F80), np.uint16(0))) == 1.0
    z = pack_fp32_bits(np.uint16(0), np.uint16(0))
    assert float(z) == 0.0 and int(np.asarray(z).view(np.uint32)) == 0  # +0.0


def test_split_pack_random_corpus():
    rng = np.random.default_rng(1)
    pats = rng.integers(0, 1 << 32, size=1_000_000, dtype=np.uint32).view(np.float32)
    hi, lo = split_fp32_bits(pats)
    assert bits_equal(pack_fp32_bits(hi, lo), pats)
