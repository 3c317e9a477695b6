"""How the transcendental activations are approximated, and how close they
stay to high-precision references.

Run with:  python demos/05_approximations.py
"""

import numpy as np

from tensorprim import approx

print("== tanh as a rational [7/8] approximant ==")
print("numerator (odd powers): ", approx.TANH_PADE78.p_coeffs)
print("denominator (even powers):", approx.TANH_PADE78.q_coeffs)
g = np.linspace(-5, 5, 100_001).astype(np.float32)
err = np.abs(approx.tanh_pade78(g).astype(np.float64) - np.tanh(g.astype(np.float64)))
print(f"max abs error on [-5, 5]: {err.max():.3e}  (budget {approx.PADE_TANH_MAX_ABS_ERR})")
print("odd symmetry is bitwise:",
      approx.tanh_pade78(np.float32(1.7)) == -approx.tanh_pade78(np.float32(-1.7)))

print("\n== 16-interval piecewise cubics, indexed by exponent + mantissa MSB ==")
t = approx.TANH_MINIMAX
for i in (0, 7, 15):
    lo, hi = t.interval_bounds(i)
    print(f"interval {i:2d}: [{lo:.5f}, {hi:.5f})  c = {t.coeffs[:, i]}")
g4 = np.linspace(-4, 4, 100_001).astype(np.float32)
err = np.abs(approx.minimax_eval(t, g4).astype(np.float64) - np.tanh(g4.astype(np.float64)))
print(f"max abs error on [-4, 4]: {err.max():.3e}  (budget {approx.MINIMAX_TANH_MAX_ABS_ERR})")

print("\n== exp via 2^n * 2^y with an exact exponent-field scale ==")
d = approx.exp_decomposition()
print("log2(e) =", d.log2e, " cubic for 2^y:", d.cubic)
g10 = np.linspace(-10, 10, 100_001).astype(np.float32)
rel = np.abs(approx.exp_taylor(g10).astype(np.float64) / np.exp(g10.astype(np.float64)) - 1)
print(f"max rel error on [-10, 10]: {rel.max():.3e}  (budget {approx.EXP_MAX_REL_ERR})")
print("exp(0) == 1 exactly:", float(approx.exp_taylor(np.float32(0.0))) == 1.0)

print("\n== sigmoid through the tanh identity ==")
ref = 1 / (1 + np.exp(-g10.astype(np.float64)))
err = np.abs(approx.sigmoid_via_tanh(g10).astype(np.float64) - ref)
print(f"max abs error: {err.max():.3e}  "
      f"(budget {approx.SIGMOID_BUDGET_FACTOR} x tanh budget)")

print("\n== GELU from the erf-form table ==")
for x in (0.0, 1.0, -2.0, 10.0):
    print(f"gelu({x:5.1f}) = {float(approx.gelu(np.float32(x))):.6f}")
