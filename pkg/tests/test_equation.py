import numpy as np
import pytest

from tensorprim import (
    BinaryKind,
    Buffered,
    DType,
    Hybrid,
    TensorDesc,
    TernaryKind,
    TileFused,
    TreeBuilder,
    UnaryKind,
    alloc,
    assign_register_score,
    create_execution_plan,
    evaluate,
    evaluate_naive,
    export_plan,
    from_array,
    import_plan,
    parse_equation,
    plan_equation,
    to_array,
)
from tensorprim.equation import EquationError, ParseError, plan_to_dict
from tensorprim import verify

from util import bits_equal


def D(m, n, dtype=DType.FP32):
    return TensorDesc(m, n, m, dtype)


WORKED = "tanh(T0) + (T1 matmul T2) / (T3 - T4)"


# ---------------------------------------------------------------------------
# construction and parsing
# ---------------------------------------------------------------------------

def test_worked_example_structure():
    tree = parse_equation(WORKED, [D(4, 4)] * 5)
    nodes = tree.nodes()
    assert sum(n.is_leaf for n in nodes) == 5
    assert sum(not n.is_leaf for n in nodes) == 5
    assert tree.root.kind is BinaryKind.ADD


def test_single_leaf_root_rejected():
    with pytest.raises(EquationError):
        parse_equation("T0", [D(4, 4)])


def test_mismatched_matmul_dims_rejected():
    with pytest.raises(EquationError):
        parse_equation("T0 matmul T1", [D(4, 3), D(4, 4)])


def test_parse_error_has_position():
    with pytest.raises(ParseError) as e:
        parse_equation("tanh(T0", [D(2, 2)])
    assert e.value.pos == 7


def test_unknown_identifier():
    with pytest.raises(ParseError):
        parse_equation("frobnicate(T0)", [D(2, 2)])


def test_dag_reuse_rejected():
    b = TreeBuilder([D(2, 2)])
    leaf = b.leaf(0)
    n = b.unary(UnaryKind.RELU, leaf)
    with pytest.raises(EquationError):
        b.tree(b.binary(BinaryKind.ADD, n, n))


# ---------------------------------------------------------------------------
# register scores
# ---------------------------------------------------------------------------

def test_worked_example_root_score_two():
    tree = assign_register_score(parse_equation(WORKED, [D(4, 4)] * 5))
    assert tree.root.score == 2


def test_unary_chain_scores_all_one():
    b = TreeBuilder([D(3, 3)])
    node = b.leaf(0)
    for _ in range(7):
        node = b.unary(UnaryKind.TANH, node)
    tree = assign_register_score(b.tree(node))
    assert all(n.score == 1 for n in tree.internal_nodes())


def test_balanced_binary_tree_score_is_depth():
    for depth in range(1, 5):
        b = TreeBuilder([D(2, 2)])

        def build(d):
            if d == 0:
                return b.leaf(0)
            return b.binary(BinaryKind.ADD, build(d - 1), build(d - 1))

        tree = assign_register_score(b.tree(build(depth)))
        assert tree.root.score == depth


def test_score_crosscheck_against_independent_recursion():
    rng = np.random.default_rng(0)
    for _ in range(500):
        t = verify.random_score_tree(rng)
        assign_register_score(t)
        oracle = verify.score_oracle(t)
        for n in t.nodes():
            assert n.score == oracle[n.node_id]


def test_ternary_score_rules():
    b = TreeBuilder([D(2, 2)])
    all_leaves = b.ternary(TernaryKind.MULADD, b.leaf(0), b.leaf(0), b.leaf(0))
    assign_register_score(b.tree(all_leaves))
    assert all_leaves.score == 1
    b2 = TreeBuilder([D(2, 2)])
    deep = b2.ternary(TernaryKind.MULADD, b2.unary(UnaryKind.RELU, b2.leaf(0)),
                      b2.leaf(0), b2.leaf(0))
    assign_register_score(b2.tree(deep))
    assert deep.score == 3  # max(3, 1, 0, 0) per the scoring rule


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def test_worked_example_plan_two_slots_and_timestamps():
    plan = plan_equation(WORKED, [D(4, 4)] * 5)
    assert plan.temp_count == 2
    ops_in_order = [s.node.label() for s in plan.steps]
    # contraction-first traversal: the higher-scoring div subtree precedes tanh
    assert ops_in_order == ["matmul", "sub", "div", "tanh", "add"]
    assert [s.timestamp for s in plan.steps] == [0, 1, 2, 3, 4]
    # div inherits the matmul slot and recycles the sub slot, tanh reuses it
    by_label = {s.node.label(): s for s in plan.steps}
    assert by_label["div"].output[1] == by_label["matmul"].output[1]
    assert by_label["tanh"].output[1] == by_label["sub"].output[1]


def test_unary_chain_single_slot():
    plan = plan_equation("tanh(relu(exp(T0)))", [D(4, 4)])
    assert plan.temp_count == 1
    assert all(s.output[1] == 0 for s in plan.steps)


def test_relu_single_step():
    plan = plan_equation("relu(T0)", [D(4, 4)])
    assert plan.temp_count == 1 and len(plan.steps) == 1


def test_balanced_three_level_tree_three_slots():
    plan = plan_equation("((T0+T1)+(T2+T3)) + ((T4+T5)+(T6+T7))", [D(4, 4)] * 8)
    assert plan.tree.root.score == 3
    assert plan.temp_count == 3


def test_plan_timestamps_topological():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t = verify.random_score_tree(rng)
        plan = create_execution_plan(assign_register_score(t))
        for s in plan.steps:
            for c in s.node.children:
                if not c.is_leaf:
                    assert c.timestamp < s.timestamp


def test_minimality_vs_subset_dp():
    rng = np.random.default_rng(2)
    for _ in range(300):
        t = verify.random_score_tree(rng)
        plan = create_execution_plan(assign_register_score(t))
        assert plan.temp_count == verify.min_temp_slots(t)


def test_subset_dp_agrees_with_literal_enumeration():
    """The lattice search must match brute-force order enumeration."""
    rng = np.random.default_rng(3)
    for _ in range(150):
        t = verify.random_score_tree(rng, max_internal=6)
        assert verify.min_temp_slots(t) == verify.enumerate_min_slots(t)


def test_root_score_equals_temp_count_for_unary_binary_trees():
    rng = np.random.default_rng(4)
    count = 0
    for _ in range(300):
        t = verify.random_score_tree(rng)
        if any(isinstance(n.kind, TernaryKind) for n in t.internal_nodes()):
            continue
        plan = create_execution_plan(assign_register_score(t))
        assert plan.temp_count == t.root.score
        count += 1
    assert count > 50


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_buffered_matches_naive_bitwise_on_worked_example():
    rng = np.random.default_rng(5)
    plan = plan_equation(WORKED, [D(4, 4, DType.FP64)] * 5)
    args = [from_array(rng.uniform(0.2, 1.5, (4, 4))) for _ in range(5)]
    o1, o2 = alloc(D(4, 4, DType.FP64)), alloc(D(4, 4, DType.FP64))
    evaluate(plan, Buffered(), args, o1)
    evaluate_naive(plan.tree, args, o2)
    assert bits_equal(to_array(o1), to_array(o2))


def test_tiled_matches_buffered_on_elementwise_tree():
    rng = np.random.default_rng(6)
    plan = plan_equation("tanh(T0) * (T1 + T2) - exp(T3)", [D(6, 6)] * 4)
    args = [from_array(rng.uniform(0.2, 1.5, (6, 6)).astype(np.float32)) for _ in range(4)]
    outs = []
    for strat in (Buffered(), TileFused(2, 3), TileFused(4, 4), Hybrid(2, 2)):
        o = alloc(D(6, 6))
        evaluate(plan, strat, args, o)
        outs.append(to_array(o))
    for o in outs[1:]:
        assert bits_equal(outs[0], o)


def test_tile_fused_handles_broadcast_arguments():
    """The layernorm-style scaling equation (two cascading multiply-adds with
    COL/ROW broadcast vectors) must tile identically to buffered."""
    from tensorprim import Bcast, TernaryKind, broadcast
    rng = np.random.default_rng(12)
    rows, cols = 6, 8
    x = TensorDesc(rows, cols, rows, DType.FP32)
    colv = TensorDesc(rows, cols, rows, DType.FP32, Bcast.COL)
    rowv = TensorDesc(rows, cols, 1, DType.FP32, Bcast.ROW)
    scav = TensorDesc(rows, cols, 1, DType.FP32, Bcast.SCALAR)
    b = TreeBuilder([x, colv, colv, rowv, scav])
    inner = b.ternary(TernaryKind.MULADD, b.leaf(0), b.leaf(1), b.leaf(2))
    root = b.ternary(TernaryKind.MULADD, inner, b.leaf(3), b.leaf(4))
    plan = create_execution_plan(assign_register_score(b.tree(root)))
    args = [
        from_array(rng.standard_normal((rows, cols)).astype(np.float32)),
        broadcast(from_array(rng.standard_normal((rows, 1)).astype(np.float32)),
                  Bcast.COL, rows, cols),
        broadcast(from_array(rng.standard_normal((rows, 1)).astype(np.float32)),
                  Bcast.COL, rows, cols),
        broadcast(from_array(rng.standard_normal((1, cols)).astype(np.float32)),
                  Bcast.ROW, rows, cols),
        broadcast(from_array(rng.standard_normal((1, 1)).astype(np.float32)),
                  Bcast.SCALAR, rows, cols),
    ]
    o1, o2 = alloc(D(rows, cols)), alloc(D(rows, cols))
    evaluate(plan, Buffered(), args, o1)
    evaluate(plan, TileFused(2, 3), args, o2)
    assert bits_equal(to_array(o1), to_array(o2))


def test_tile_fused_illegal_with_matmul():
    plan = plan_equation("T0 matmul T1", [D(4, 4), D(4, 4)])
    args = [from_array(np.ones((4, 4), dtype=np.float32)) for _ in range(2)]
    with pytest.raises(EquationError):
        evaluate(plan, TileFused(2, 2), args, alloc(D(4, 4)))


def test_poisoning_recycled_temps_is_harmless():
    rng = np.random.default_rng(7)
    plan = plan_equation(WORKED, [D(4, 4, DType.FP64)] * 5)
    args = [from_array(rng.uniform(0.2, 1.5, (4, 4))) for _ in range(5)]
    clean = alloc(D(4, 4, DType.FP64))
    evaluate(plan, Buffered(), args, clean)

    poisoned = alloc(D(4, 4, DType.FP64))
    hits = []

    def hook(step, dead):
        hits.extend(dead)
        for v in dead:
            v.as2d()[:, :] = np.nan

    evaluate(plan, Buffered(), args, poisoned, step_hook=hook)
    assert hits  # the worked example does recycle a slot
    assert bits_equal(to_array(clean), to_array(poisoned))


def test_fusion_fidelity_random_sample():
    rng = np.random.default_rng(8)
    for i in range(60):
        dtype = DType.FP64 if i % 2 else DType.FP32
        tree, args = verify.random_equation(rng, dtype)
        plan = create_execution_plan(assign_register_score(tree))
        ref = alloc(plan.out_desc.contiguous())
        evaluate_naive(tree, args, ref)
        for strat in (Buffered(), Hybrid(2, 2)):
            got = alloc(plan.out_desc.contiguous())
            evaluate(plan, strat, args, got)
            assert bits_equal(to_array(got), to_array(ref))
        if all(s.node.fusable() for s in plan.steps):
            got = alloc(plan.out_desc.contiguous())
            evaluate(plan, TileFused(2, 2), args, got)
            assert bits_equal(to_array(got), to_array(ref))


def test_argument_validation():
    plan = plan_equation("relu(T0)", [D(4, 4)])
    with pytest.raises(EquationError):
        evaluate(plan, Buffered(), [], alloc(D(4, 4)))
    with pytest.raises(EquationError):
        evaluate(plan, Buffered(), [from_array(np.ones((3, 3), dtype=np.float32))],
                 alloc(D(4, 4)))


# ---------------------------------------------------------------------------
# temp bytes metric
# ---------------------------------------------------------------------------

def test_temp_bytes_never_exceeds_naive_and_strict_under_recycling():
    rng = np.random.default_rng(9)
    for _ in range(300):
        t = verify.random_score_tree(rng)
        plan = create_execution_plan(assign_register_score(t))
        assert plan.temp_bytes <= plan.naive_bytes
        if plan.recycled:
            assert plan.temp_bytes < plan.naive_bytes


def test_worked_example_temp_bytes():
    plan = plan_equation(WORKED, [D(4, 4)] * 5)
    assert plan.rep_bytes == 4 * 4 * 4
    assert plan.temp_bytes == 2 * 64 and plan.naive_bytes == 4 * 64


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_json_round_trip():
    plan = plan_equation(WORKED, [D(4, 4)] * 5)
    text = export_plan(plan, "json")
    assert import_plan(text) == plan_to_dict(plan)


def test_dot_contains_all_nodes():
    plan = plan_equation(WORKED, [D(4, 4)] * 5)
    dot = export_plan(plan, "dot")
    assert dot.count("shape=box") == 5  # leaves
    assert sum(op in dot for op in ("tanh", "matmul", "sub", "div", "add")) == 5
    assert "v=2" in dot and "tmp0" in dot and "tmp1" in dot


def test_export_rejects_unknown_format():
    plan = plan_equation("relu(T0)", [D(2, 2)])
    with pytest.raises(EquationError):
        export_plan(plan, "yaml")
