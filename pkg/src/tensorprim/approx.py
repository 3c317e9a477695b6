"""Polynomial approximation engines for the transcendental activations.

Three schemes back the TANH / SIGMOID / GELU / EXP kinds:

* a rational [7/8] approximant for tanh (odd numerator, even denominator,
  coefficients matched against the leading Taylor terms),
* piecewise cubic least-max fits over 16 half-binade intervals indexed by
  the exponent and mantissa MSB of the input,
* a cubic for 2^y combined with exact power-of-two scaling for exp.

Error budgets are module constants so a regression in any fit or in the
interval indexing is immediately visible to the verification suite.
"""

from __future__ import annotations

from dataclasses import dataclass
import enum
import math

import numpy as np

# acceptance budgets, measured on dense grids by the verification suite
PADE_TANH_MAX_ABS_ERR = 1e-5      # on [-5, 5]
MINIMAX_TANH_MAX_ABS_ERR = 2e-3   # on [-4, 4]
EXP_MAX_REL_ERR = 3e-4            # on [-10, 10]
SIGMOID_BUDGET_FACTOR = 1.1       # sigmoid inherits 1.1x the tanh budget


@dataclass(frozen=True)
class PadeRational:
    """Odd/even rational approximant evaluated as num(|x|)/den(|x|) with the
    sign reapplied, saturating to +-1 strictly beyond ``clamp``."""

    p_coeffs: tuple[float, ...]  # ascending odd powers: x, x^3, x^5, x^7
    q_coeffs: tuple[float, ...]  # ascending even powers: 1, x^2, ..., x^8
    clamp: float


# [7/8] approximant of tanh: num/den * 2027025 with integer coefficients
TANH_PADE78 = PadeRational(
    p_coeffs=(2027025.0, 270270.0, 6930.0, 36.0),
    q_coeffs=(2027025.0, 945945.0, 51975.0, 630.0, 1.0),
    clamp=5.0,
)

# cubic for 2^y on [-1/2, 1/2], constant pinned at 1 so exp(0) == 1 exactly;
# remaining coefficients are a least-max fit (bit patterns fixed for
# reproducibility: 0x3f316f7d, 0x3e781eee, 0x3d656460)
EXP_LOG2E = np.uint32(0x3FB8AA3B)  # float32 log2(e)
EXP_C1 = np.uint32(0x3F316F7D)
EXP_C2 = np.uint32(0x3E781EEE)
EXP_C3 = np.uint32(0x3D656460)
EXP_LO_BAND = -87.0
EXP_HI_BAND = 88.0


@dataclass(frozen=True)
class ExpDecomposition:
    log2e: float
    cubic: tuple[float, float, float, float]  # 1, c1, c2, c3
    lo: float
    hi: float


def exp_decomposition() -> ExpDecomposition:
    c = [float(np.uint32(u).view(np.float32)) for u in (EXP_C1, EXP_C2, EXP_C3)]
    return ExpDecomposition(float(EXP_LOG2E.view(np.float32)), (1.0, *c),
                            EXP_LO_BAND, EXP_HI_BAND)


def tanh_pade78(x: np.ndarray) -> np.ndarray:
    """Rational [7/8] tanh; |x| > clamp saturates to +-1.

    Numerator and denominator are evaluated by Horner's rule in x*x on |x|
    and the sign is reapplied, which makes f(-x) == -f(x) bitwise.
    """
    x = np.asarray(x)
    dt = x.dtype.type
    with np.errstate(all="ignore"):  # the saturation branch covers |x| where
        ax = np.abs(x)               # the rational itself would overflow
        t = ax * ax
        p, q = TANH_PADE78.p_coeffs, TANH_PADE78.q_coeffs
        num = dt(p[3])
        for c in (p[2], p[1], p[0]):
            num = num * t + dt(c)
        num = num * ax
        den = dt(q[4])
        for c in (q[3], q[2], q[1], q[0]):
            den = den * t + dt(c)
        r = num / den
        r = np.where(ax > dt(TANH_PADE78.clamp), dt(1.0), r)
    return np.copysign(r, x)


# ---------------------------------------------------------------------------
# piecewise minimax cubics, 16 half-binade intervals
# ---------------------------------------------------------------------------

@dataclass
class MinimaxTable:
    """16 cubics over half-binade intervals of |x| starting at 2^emin.

    The interval index is the exponent field plus the mantissa MSB of |x|
    (the 9 bits below the sign), offset by ``base`` and clamped to [0, 15];
    interval 0 extends down to 0 and |x| beyond the covered range returns
    ``saturation`` (sign reapplied).
    """

    name: str
    emin: int
    coeffs: np.ndarray   # (4, 16) float32, monomial c0..c3 per interval
    range_max: float     # first |x| that saturates
    saturation: float

    @property
    def base(self) -> int:
        return (127 + self.emin) << 1

    def interval_bounds(self, i: int) -> tuple[float, float]:
        e = self.emin + i // 2
        lo = 2.0 ** e if i % 2 == 0 else 1.5 * 2.0 ** e
        hi = 1.5 * 2.0 ** e if i % 2 == 0 else 2.0 ** (e + 1)
        return (0.0 if i == 0 else lo), hi


def _cheb_nodes_fit(f, a: float, b: float, n: int = 64) -> np.ndarray:
    """Degree-3 Chebyshev projection of f on [a, b] in monomial form."""
    k = np.arange(n)
    t = np.cos(np.pi * (k + 0.5) / n)
    x = 0.5 * (b - a) * t + 0.5 * (b + a)
    fx = f(x)
    cs = []
    for j in range(4):
        tj = np.cos(j * np.pi * (k + 0.5) / n)
        cs.append((2.0 - (j == 0)) / n * np.sum(fx * tj))
    poly = np.polynomial.chebyshev.Chebyshev(cs, domain=[a, b]).convert(
        kind=np.polynomial.Polynomial)
    c = np.zeros(4)
    c[:poly.coef.size] = poly.coef
    return c


def _fit_table(name: str, f, emin: int) -> MinimaxTable:
    coeffs = np.zeros((4, 16))
    tab = MinimaxTable(name, emin, coeffs, 0.0, 1.0)
    for i in range(16):
        a, b = tab.interval_bounds(i)
        coeffs[:, i] = _cheb_nodes_fit(f, a, b)
    tab.coeffs = coeffs.astype(np.float32)
    tab.range_max = tab.interval_bounds(15)[1]
    return tab


_erf_scaled = np.vectorize(lambda v: math.erf(v / math.sqrt(2.0)), otypes=[np.float64])

TANH_MINIMAX = _fit_table("tanh", np.tanh, emin=-6)          # covers [0, 4)
GELU_ERF_MINIMAX = _fit_table("gelu_erf", _erf_scaled, emin=-5)  # covers [0, 8)


def minimax_eval(table: MinimaxTable, x: np.ndarray) -> np.ndarray:
    """Piecewise cubic via exponent/MSB interval lookup, sign reapplied."""
    x = np.asarray(x)
    dt = x.dtype.type
    ax = np.abs(x)
    bits = ax.astype(np.float32).view(np.uint32)
    idx = np.clip((bits >> np.uint32(22)).astype(np.int32) - table.base, 0, 15)
    c0, c1, c2, c3 = (table.coeffs[j][idx].astype(x.dtype) for j in range(4))
    p = ((c3 * ax + c2) * ax + c1) * ax + c0
    p = np.where(ax >= dt(table.range_max), dt(table.saturation), p)
    return np.copysign(p, x)


def minimax_grad(table: MinimaxTable, x: np.ndarray) -> np.ndarray:
    """Derivative of the fitted piecewise cubic (an even function)."""
    x = np.asarray(x)
    dt = x.dtype.type
    ax = np.abs(x)
    bits = ax.astype(np.float32).view(np.uint32)
    idx = np.clip((bits >> np.uint32(22)).astype(np.int32) - table.base, 0, 15)
    c1, c2, c3 = (table.coeffs[j][idx].astype(x.dtype) for j in (1, 2, 3))
    g = (dt(3.0) * c3 * ax + dt(2.0) * c2) * ax + c1
    return np.where(ax >= dt(table.range_max), dt(0.0), g)


# ---------------------------------------------------------------------------
# exp via 2^n * 2^y
# ---------------------------------------------------------------------------

def exp_taylor(x: np.ndarray) -> np.ndarray:
    """exp(x) = 2^n * 2^y with n = round(x*log2 e) and a cubic for 2^y.

    The power-of-two factor is built directly in the exponent field, so the
    final scaling is exact.  Outside [-87, 88] the result saturates to
    0 / +inf by sign.
    """
    x = np.asarray(x)
    f64 = x.dtype == np.float64
    dt = x.dtype.type
    log2e = dt(float(EXP_LOG2E.view(np.float32)))
    c1 = dt(float(EXP_C1.view(np.float32)))
    c2 = dt(float(EXP_C2.view(np.float32)))
    c3 = dt(float(EXP_C3.view(np.float32)))
    with np.errstate(all="ignore"):  # out-of-band inputs saturate below
        r = x * log2e
        n = np.rint(r)
        y = r - n
        q = ((c3 * y + c2) * y + c1) * y + dt(1.0)
        if f64:
            ni = np.clip(n, -1022, 1023).astype(np.int64)
            pow2 = ((ni + np.int64(1023)) << np.int64(52)).view(np.float64)
        else:
            ni = np.clip(n, -126, 127).astype(np.int32)
            pow2 = ((ni + np.int32(127)) << np.int32(23)).view(np.float32)
        out = q * pow2
        out = np.where(x > dt(EXP_HI_BAND), dt(np.inf), out)
        out = np.where(x < dt(EXP_LO_BAND), dt(0.0), out)
    return out


# ---------------------------------------------------------------------------
# selector plumbing used by the unary kinds
# ---------------------------------------------------------------------------

class _Sel(enum.Enum):  # local mirror to avoid importing ops (cycle)
    PADE78 = "pade78"
    MINIMAX16 = "minimax16"
    TAYLOR2 = "taylor2"
    EXACT = "exact"


def _sel(flag) -> _Sel:
    if flag is None:
        return _Sel.PADE78
    return _Sel(getattr(flag, "value", flag))


_erf_vec = np.vectorize(math.erf, otypes=[np.float64])


def tanh(x: np.ndarray, flag=None) -> np.ndarray:
    s = _sel(flag)
    if s is _Sel.MINIMAX16:
        return minimax_eval(TANH_MINIMAX, x)
    if s is _Sel.EXACT:
        return np.tanh(x)
    return tanh_pade78(x)


def tanh_grad(x: np.ndarray, flag=None) -> np.ndarray:
    f = tanh(x, flag)
    return np.asarray(x).dtype.type(1.0) - f * f


def sigmoid_via_tanh(x: np.ndarray, flag=None) -> np.ndarray:
    """sigmoid(x) = (tanh(x/2) + 1) / 2 applied to the selected tanh."""
    x = np.asarray(x)
    dt = x.dtype.type
    return (tanh(x * dt(0.5), flag) + dt(1.0)) * dt(0.5)


def sigmoid_grad(x: np.ndarray, flag=None) -> np.ndarray:
    s = sigmoid_via_tanh(x, flag)
    return s * (np.asarray(x).dtype.type(1.0) - s)


def gelu(x: np.ndarray, flag=None) -> np.ndarray:
    """GELU(x) = 0.5 x (1 + erf(x / sqrt 2)); the erf factor comes from the
    16-interval table unless the exact path is selected."""
    x = np.asarray(x)
    dt = x.dtype.type
    if _sel(flag) is _Sel.EXACT:
        h = _erf_vec(x / dt(math.sqrt(2.0))).astype(x.dtype)
    else:
        h = minimax_eval(GELU_ERF_MINIMAX, x)
    return dt(0.5) * x * (dt(1.0) + h)


def gelu_grad(x: np.ndarray, flag=None) -> np.ndarray:
    x = np.asarray(x)
    dt = x.dtype.type
    if _sel(flag) is _Sel.EXACT:
        h = _erf_vec(x / dt(math.sqrt(2.0))).astype(x.dtype)
        hp = (np.sqrt(dt(2.0 / math.pi)) * np.exp(dt(-0.5) * x * x)).astype(x.dtype)
    else:
        h = minimax_eval(GELU_ERF_MINIMAX, x)
        hp = minimax_grad(GELU_ERF_MINIMAX, x)
    return dt(0.5) * (dt(1.0) + h) + dt(0.5) * x * hp


# ---------------------------------------------------------------------------
# inspection
# ---------------------------------------------------------------------------

def coefficient_tables() -> dict:
    """All fitted coefficients in JSON-serialisable form."""
    def table_dict(t: MinimaxTable) -> dict:
        return {
            "name": t.name,
            "emin": t.emin,
            "base": t.base,
            "range_max": t.range_max,
            "saturation": t.saturation,
            "intervals": [
                {"bounds": list(t.interval_bounds(i)),
                 "coeffs": [float(t.coeffs[j, i]) for j in range(4)]}
                for i in range(16)
            ],
        }

    e = exp_decomposition()
    return {
        "tanh_pade78": {
            "numerator_odd": list(TANH_PADE78.p_coeffs),
            "denominator_even": list(TANH_PADE78.q_coeffs),
            "clamp": TANH_PADE78.clamp,
        },
        "exp": {"log2e": e.log2e, "cubic": list(e.cubic),
                "band": [e.lo, e.hi]},
        "minimax": [table_dict(TANH_MINIMAX), table_dict(GELU_ERF_MINIMAX)],
        "budgets": {
            "pade_tanh_max_abs": PADE_TANH_MAX_ABS_ERR,
            "minimax_tanh_max_abs": MINIMAX_TANH_MAX_ABS_ERR,
            "exp_max_rel": EXP_MAX_REL_ERR,
            "sigmoid_factor": SIGMOID_BUDGET_FACTOR,
        },
    }
