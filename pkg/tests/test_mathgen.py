"""DAG math problems: exact evaluation, solving, rendering and grading."""

import json
import re
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwlab import mathgen
from dwlab.errors import DegenerateProblemError, EvaluationError, ParameterError
from dwlab.mathgen import DagNode, DagProblem, Op


def recursive_eval(nodes, nid, x):
    """Independent oracle: plain recursion straight off the node records."""
    node = nodes[nid]
    if node.op is Op.LEAF:
        return Fraction(x) if node.is_unknown else node.value
    vals = [recursive_eval(nodes, c, x) for c in node.children]
    if node.op is Op.ADD:
        return sum(vals, Fraction(0))
    if node.op is Op.SUB:
        return vals[0] - sum(vals[1:], Fraction(0))
    if node.op is Op.MUL:
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if node.op is Op.SQUARE:
        return vals[0] ** 2
    root = Fraction(int(vals[0].numerator ** 0.5 + 0.5), int(vals[0].denominator ** 0.5 + 0.5))
    assert root * root == vals[0]
    return root


def hand_problem(op, known, root_value):
    """root = op(x, known)"""
    nodes = {
        0: DagNode(0, Op.LEAF, is_unknown=True),
        1: DagNode(1, Op.LEAF, value=Fraction(known)),
        2: DagNode(2, op, (0, 1)),
    }
    p = DagProblem(nodes, 2, 2, 2, Fraction(root_value), None, 0)
    p.rendered = mathgen.render(p)
    return p


class TestHandBuilt:
    def test_add(self):
        assert mathgen.solve_unknown(hand_problem(Op.ADD, 5, 8)) == 3

    def test_mul(self):
        assert mathgen.solve_unknown(hand_problem(Op.MUL, 4, 12)) == 3

    def test_zero_coefficient(self):
        with pytest.raises(DegenerateProblemError):
            mathgen.solve_unknown(hand_problem(Op.MUL, 0, 12))

    def test_linear_from_two_evaluations(self):
        # root = 2x + 5: eval(0)=5, eval(1)=7, root 11 -> x = 3
        nodes = {
            0: DagNode(0, Op.LEAF, is_unknown=True),
            1: DagNode(1, Op.LEAF, value=Fraction(2)),
            2: DagNode(2, Op.MUL, (0, 1)),
            3: DagNode(3, Op.LEAF, value=Fraction(5)),
            4: DagNode(4, Op.ADD, (2, 3)),
        }
        p = DagProblem(nodes, 4, 3, 2, Fraction(11), None, 0)
        assert mathgen.evaluate(p, 0) == 5 and mathgen.evaluate(p, 1) == 7
        assert mathgen.solve_unknown(p) == 3

    def test_identity_add_chain(self):
        nodes = {0: DagNode(0, Op.LEAF, is_unknown=True), 1: DagNode(1, Op.LEAF, value=Fraction(0)),
                 2: DagNode(2, Op.ADD, (0, 1)), 3: DagNode(3, Op.LEAF, value=Fraction(0)),
                 4: DagNode(4, Op.ADD, (2, 3))}
        assert mathgen.solve_unknown(DagProblem(nodes, 4, 3, 2, Fraction(42), None, 0)) == 42


class TestApplyOp:
    def test_sub_is_left_fold(self):
        assert mathgen.apply_op(Op.SUB, [Fraction(10), Fraction(3), Fraction(2)]) == 5

    def test_square_sqrt_inverse(self):
        v = mathgen.apply_op(Op.SQRT, [Fraction(49, 4)])
        assert v == Fraction(7, 2)
        assert mathgen.apply_op(Op.SQUARE, [v]) == Fraction(49, 4)

    @pytest.mark.parametrize("bad", [Fraction(-4), Fraction(2), Fraction(9, 2)])
    def test_sqrt_errors(self, bad):
        with pytest.raises(EvaluationError):
            mathgen.apply_op(Op.SQRT, [bad])


def test_render_arity():
    p = hand_problem(Op.ADD, 5, 8)
    text = p.rendered
    assert text.count("The value of") == 3
    assert text.endswith("What is the value of n0?")


@pytest.mark.parametrize("d,w", [(2, 2), (3, 3), (4, 4), (2, 4), (4, 2)])
def test_generated_problems_are_sound(d, w):
    for p in mathgen.generate_cell(d, w, 60, seed=123):
        assert recursive_eval(p.nodes, p.root, p.ground_truth) == p.root_value
        a = recursive_eval(p.nodes, p.root, 1) - recursive_eval(p.nodes, p.root, 0)
        b = recursive_eval(p.nodes, p.root, 0)
        assert a != 0
        assert recursive_eval(p.nodes, p.root, 2) == 2 * a + b
        assert mathgen.solve_unknown(p) == p.ground_truth


def test_shape_matches_cell():
    for d, w in [(2, 2), (3, 4), (4, 3)]:
        p = mathgen.generate_problem(d, w, seed=9)

        def height(n):
            node = p.nodes[n]
            return 1 if node.op is Op.LEAF else 1 + max(height(c) for c in node.children)

        assert height(p.root) == d
        for node in p.nodes.values():
            if node.op in mathgen.VARIADIC:
                assert len(node.children) == w
            elif node.op in mathgen.UNARY:
                assert len(node.children) == 1
        # post-order ids: every child id is smaller than its parent's
        assert all(c < n.id for n in p.nodes.values() for c in n.children)
        assert sum(n.is_unknown for n in p.nodes.values()) == 1


def test_deterministic():
    a = mathgen.generate_problem(3, 3, seed=77)
    b = mathgen.generate_problem(3, 3, seed=77)
    assert a.to_record() == b.to_record() and a.rendered == b.rendered


def test_cell_ids_and_uniqueness():
    cell = mathgen.generate_cell(2, 2, 50, seed=0)
    assert [p.id for p in cell] == [f"math-d2-w2-{i:04d}" for i in range(50)]
    assert len({p.rendered for p in cell}) == 50


def test_dataset_parity():
    ds = mathgen.generate_dataset(count=100, seed=0)
    assert len(ds) == 900
    assert {(p.depth, p.width) for p in ds} == {(d, w) for d in (2, 3, 4) for w in (2, 3, 4)}


_SENT = re.compile(r"The value of n(\d+) is (.+?)(?:, and n\d+ equals (-?\d+(?:/\d+)?))?\.(?= The| What|$)")


def reference_parse(text):
    """Rebuild a tree from its English rendering without using the library."""
    nodes, root, root_value = {}, None, None
    for m in _SENT.finditer(text):
        nid, body = int(m.group(1)), m.group(2)
        if m.group(3):
            root, root_value = nid, Fraction(m.group(3))
        refs = [int(x) for x in re.findall(r"n(\d+)", body)]
        if body == "unknown":
            nodes[nid] = ("x", [])
        elif body.startswith("the sum of"):
            nodes[nid] = ("+", refs)
        elif body.startswith("the product of"):
            nodes[nid] = ("*", refs)
        elif body.startswith("the square root of"):
            nodes[nid] = ("sqrt", refs)
        elif body.startswith("the square of"):
            nodes[nid] = ("sq", refs)
        elif " minus " in body:
            nodes[nid] = ("-", refs)
        else:
            nodes[nid] = (Fraction(body), [])
    unknown = int(re.search(r"What is the value of n(\d+)\?$", text).group(1))
    return nodes, root, root_value, unknown


def ref_eval(nodes, nid, x):
    kind, kids = nodes[nid]
    vals = [ref_eval(nodes, k, x) for k in kids]
    if kind == "x":
        return x
    if kind == "+":
        return sum(vals, Fraction(0))
    if kind == "-":
        return vals[0] - sum(vals[1:], Fraction(0))
    if kind == "*":
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if kind == "sq":
        return vals[0] * vals[0]
    if kind == "sqrt":
        r = Fraction(round(vals[0].numerator ** 0.5), round(vals[0].denominator ** 0.5))
        assert r * r == vals[0]
        return r
    return kind


def test_rendering_round_trip():
    for p in mathgen.generate_dataset(count=15, seed=5):
        nodes, root, root_value, unknown = reference_parse(p.rendered)
        assert len(nodes) == len(p.nodes)
        assert root == p.root and root_value == p.root_value and unknown == p.unknown
        assert ref_eval(nodes, root, p.ground_truth) == p.root_value


class TestGrading:
    def test_plain(self):
        assert mathgen.grade("The answer is 3.", 3, tol=0).correct

    def test_tolerance(self):
        assert mathgen.grade("x = 2.9999996", 3, tol=1e-6).correct
        assert not mathgen.grade("x = 2.99", 3, tol=1e-6).correct

    def test_unparseable(self):
        r = mathgen.grade("I cannot solve this", 3)
        assert not r.correct and r.failure_kind == "UNPARSEABLE"

    def test_marker_wins(self):
        assert mathgen.grade("Step 1 gives 7. ANSWER: -5/2", Fraction(-5, 2)).correct
        assert mathgen.grade("ANSWER: 4\nANSWER: 5", 5).correct

    def test_fraction_must_be_exact(self):
        assert not mathgen.grade("ANSWER: 1/3", Fraction(1, 3) + Fraction(1, 10 ** 9)).correct

    def test_node_names_are_not_answers(self):
        assert mathgen.grade("so n3 is the answer", 3).failure_kind == "UNPARSEABLE"

    def test_thousands_separator(self):
        assert mathgen.grade("ANSWER: 12,345", 12345).correct

    def test_negative_tol(self):
        with pytest.raises(ParameterError):
            mathgen.grade("1", 1, tol=-1)

    @settings(max_examples=200, deadline=None)
    @given(num=st.integers(-10 ** 6, 10 ** 6), den=st.integers(1, 1000))
    def test_round_trip_formatted(self, num, den):
        v = Fraction(num, den)
        r = mathgen.grade(f"ANSWER: {mathgen.format_rational(v)}", v, tol=0)
        assert r.correct and r.parsed_answer == v


def test_jsonl_round_trip(tmp_path):
    problems = mathgen.generate_cell(3, 2, 5, seed=1)
    path = tmp_path / "m.jsonl"
    mathgen.write_jsonl(path, iter(problems))
    back = list(mathgen.read_jsonl(path))
    assert [b.to_record() for b in back] == [p.to_record() for p in problems]
    with pytest.raises(FileExistsError):
        mathgen.write_jsonl(path, problems)


def test_separate_answers(tmp_path):
    problems = mathgen.generate_cell(2, 3, 4, seed=2)
    mathgen.write_jsonl(tmp_path / "q.jsonl", iter(problems), tmp_path / "a.jsonl")
    rec = json.loads((tmp_path / "q.jsonl").read_text().splitlines()[0])
    assert "ground_truth" not in rec
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 4
    back = list(mathgen.read_jsonl(tmp_path / "q.jsonl", tmp_path / "a.jsonl"))
    assert [b.ground_truth for b in back] == [p.ground_truth for p in problems]
