"""Matrix-equation trees: scoring, minimal-temporary planning, and the
evaluation strategies.

Run with:  python demos/03_equations.py
"""

import numpy as np

from tensorprim import (
    Buffered, DType, Hybrid, TensorDesc, TileFused,
    alloc, evaluate, evaluate_naive, export_plan, from_array, plan_equation,
    to_array,
)

D = lambda m, n: TensorDesc(m, n, m, DType.FP32)

print("== the five-operator example ==")
text = "tanh(T0) + (T1 matmul T2) / (T3 - T4)"
plan = plan_equation(text, [D(4, 4)] * 5)
print("equation:", text)
print("root register score:", plan.tree.root.score)
print("temporary slots:", plan.temp_count,
      "| scratch bytes:", plan.temp_bytes, "vs naive:", plan.naive_bytes)
for s in plan.steps:
    where = "out" if s.is_root else f"tmp{s.output[1]}"
    print(f"  t={s.timestamp}  {s.node.label():<7} v={s.node.score} -> {where}")

print("\nA naive schedule would materialise four intermediates; the plan");
print("re-uses two slots: the division inherits the matmul slot and recycles")
print("the subtraction slot, which the tanh then picks up.")

print("\n== every strategy produces identical bits ==")
rng = np.random.default_rng(1)
args = [from_array(rng.uniform(0.2, 1.5, (4, 4)).astype(np.float32)) for _ in range(5)]
ref = alloc(D(4, 4))
evaluate_naive(plan.tree, args, ref)
buf = alloc(D(4, 4))
evaluate(plan, Buffered(), args, buf)
hyb = alloc(D(4, 4))
evaluate(plan, Hybrid(2, 2), args, hyb)
print("buffered == naive:", to_array(buf).tobytes() == to_array(ref).tobytes())
print("hybrid   == naive:", to_array(hyb).tobytes() == to_array(ref).tobytes())

print("\n== elementwise trees can run tile-resident ==")
ew = plan_equation("sigmoid(T0) * (T1 + T2)", [D(6, 6)] * 3)
args = [from_array(rng.uniform(0.2, 1.5, (6, 6)).astype(np.float32)) for _ in range(3)]
o1, o2 = alloc(D(6, 6)), alloc(D(6, 6))
evaluate(ew, Buffered(), args, o1)
evaluate(ew, TileFused(2, 3), args, o2)
print("tile-fused == buffered:", to_array(o1).tobytes() == to_array(o2).tobytes())
print("elementwise plan needs", ew.temp_count, "slot(s);",
      "naive would burn", ew.naive_bytes, "bytes, the plan", ew.temp_bytes)

print("\n== plans export to JSON and DOT ==")
print(export_plan(ew, "dot"))
