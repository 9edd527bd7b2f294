"""DAG linear-equation problems with controllable depth and width.

A problem is a complete operator tree: ``depth`` node levels, internal
ADD/SUB/MUL nodes with exactly ``width`` children, SQUARE/SQRT nodes with
one child.  One leaf is unknown.  The root-to-unknown path only uses
ADD/SUB/MUL with known (and, under MUL, nonzero) siblings, so the root
value is ``a*x + b`` with ``a != 0`` and the examinee solves for ``x``.

All arithmetic is exact (:class:`fractions.Fraction`).
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator

from .errors import DegenerateProblemError, EvaluationError, GenerationError, ParameterError
from .seeding import derive_seed


class Op(str, Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    SQUARE = "SQUARE"
    SQRT = "SQRT"
    LEAF = "LEAF"


VARIADIC = (Op.ADD, Op.SUB, Op.MUL)
UNARY = (Op.SQUARE, Op.SQRT)


@dataclass(frozen=True)
class DagNode:
    id: int
    op: Op
    children: tuple[int, ...] = ()
    value: Fraction | None = None
    is_unknown: bool = False

    def to_dict(self) -> dict:
        out = {"id": self.id, "op": self.op.value, "children": list(self.children)}
        if self.op is Op.LEAF:
            out["value"] = None if self.value is None else format_rational(self.value)
            out["is_unknown"] = self.is_unknown
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DagNode":
        value = d.get("value")
        return cls(
            id=int(d["id"]),
            op=Op(d["op"]),
            children=tuple(int(c) for c in d.get("children", ())),
            value=None if value is None else Fraction(value),
            is_unknown=bool(d.get("is_unknown", False)),
        )


@dataclass
class DagProblem:
    nodes: dict[int, DagNode]
    root: int
    depth: int
    width: int
    root_value: Fraction
    ground_truth: Fraction
    seed: int
    rendered: str = ""
    id: str = ""

    @property
    def unknown(self) -> int:
        return next(n.id for n in self.nodes.values() if n.is_unknown)

    def to_record(self, include_truth: bool = True) -> dict:
        rec = {
            "id": self.id,
            "depth": self.depth,
            "width": self.width,
            "seed": self.seed,
            "rendered": self.rendered,
            "root": self.root,
            "root_value": format_rational(self.root_value),
        }
        if include_truth:
            rec["ground_truth"] = format_rational(self.ground_truth)
        rec["nodes"] = [self.nodes[i].to_dict() for i in sorted(self.nodes)]
        return rec

    @classmethod
    def from_record(cls, rec: dict, truth: str | None = None) -> "DagProblem":
        nodes = {n["id"]: DagNode.from_dict(n) for n in rec["nodes"]}
        gt = rec.get("ground_truth", truth)
        return cls(
            nodes=nodes,
            root=int(rec["root"]),
            depth=int(rec["depth"]),
            width=int(rec["width"]),
            root_value=Fraction(rec["root_value"]),
            ground_truth=Fraction(gt) if gt is not None else None,
            seed=int(rec["seed"]),
            rendered=rec.get("rendered", ""),
            id=rec.get("id", ""),
        )


@dataclass(frozen=True)
class GenConfig:
    """Knobs for :func:`generate_problem`.

    leaf_low/leaf_high bound sampled integer leaves; ``max_abs`` bounds
    every off-path subtree value; ``mul_operand_bound`` bounds known
    siblings of a multiplication on the unknown's path; ``max_value``
    bounds every on-path value at the ground truth.
    """

    leaf_low: int = -9
    leaf_high: int = 9
    max_abs: int = 10 ** 4
    mul_operand_bound: int = 100
    max_value: int = 10 ** 12
    max_retries: int = 200
    off_path_ops: tuple[Op, ...] = (Op.ADD, Op.SUB, Op.MUL, Op.SQUARE, Op.SQRT)
    path_ops: tuple[Op, ...] = (Op.ADD, Op.SUB, Op.MUL)


@dataclass(frozen=True)
class GradeResult:
    correct: bool
    parsed_answer: Fraction | None
    failure_kind: str  # "NONE" | "UNPARSEABLE" | "WRONG_VALUE"


def format_rational(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# ---------------------------------------------------------------------------
# evaluation


def rational_sqrt(x: Fraction) -> Fraction:
    """Exact principal square root, or :class:`EvaluationError`."""
    x = Fraction(x)
    if x < 0:
        raise EvaluationError(f"square root of negative value {x}")
    num, den = math.isqrt(x.numerator), math.isqrt(x.denominator)
    if num * num != x.numerator or den * den != x.denominator:
        raise EvaluationError(f"{x} is not the square of a rational")
    return Fraction(num, den)


def apply_op(op: Op, args: list[Fraction]) -> Fraction:
    if op is Op.ADD:
        return sum(args, Fraction(0))
    if op is Op.SUB:
        out = args[0]
        for a in args[1:]:
            out -= a
        return out
    if op is Op.MUL:
        out = Fraction(1)
        for a in args:
            out *= a
        return out
    if op is Op.SQUARE:
        return args[0] * args[0]
    if op is Op.SQRT:
        return rational_sqrt(args[0])
    raise EvaluationError(f"cannot apply {op}")


def evaluate(problem: DagProblem, unknown_value) -> Fraction:
    """Value of the root with the unknown leaf set to ``unknown_value``."""
    x = Fraction(unknown_value)
    values: dict[int, Fraction] = {}
    # explicit post-order stack; trees up to depth ~10 are fine either way
    stack = [(problem.root, False)]
    while stack:
        nid, expanded = stack.pop()
        node = problem.nodes[nid]
        if node.op is Op.LEAF:
            if node.is_unknown:
                values[nid] = x
            elif node.value is None:
                raise EvaluationError(f"leaf n{nid} has no value")
            else:
                values[nid] = node.value
        elif expanded:
            values[nid] = apply_op(node.op, [values[c] for c in node.children])
        else:
            stack.append((nid, True))
            stack.extend((c, False) for c in reversed(node.children))
    return values[problem.root]


def solve_unknown(problem: DagProblem) -> Fraction:
    """Solve ``root_value = a*x + b`` using two evaluations of the tree."""
    b = evaluate(problem, 0)
    a = evaluate(problem, 1) - b
    if a == 0:
        raise DegenerateProblemError(f"problem {problem.id or problem.seed} has zero coefficient")
    return (problem.root_value - b) / a


# ---------------------------------------------------------------------------
# generation


class _Builder:
    def __init__(self, depth, width, rng, cfg):
        self.depth, self.width, self.rng, self.cfg = depth, width, rng, cfg
        self.nodes: list[tuple] = []  # (op, children, value, is_unknown), ids assigned later

    def _new(self, op, children=(), value=None, unknown=False):
        self.nodes.append((op, tuple(children), value, unknown))
        return len(self.nodes) - 1

    def _leaf_value(self, bound, nonzero=False):
        lo, hi = max(self.cfg.leaf_low, -bound), min(self.cfg.leaf_high, bound)
        choices = [v for v in range(lo, hi + 1) if not (nonzero and v == 0)]
        if not choices:
            raise GenerationError(f"no leaf value fits bound {bound}")
        return Fraction(self.rng.choice(choices))

    def _retry(self, make, accept, what):
        mark = len(self.nodes)
        for _ in range(self.cfg.max_retries):
            del self.nodes[mark:]
            built = make()
            if accept(built[1]):
                return built
        raise GenerationError(f"retry budget exhausted: {what}")

    def constant(self, level, bound, square=False):
        """Off-path subtree at ``level``; returns (node, value)."""
        if level == self.depth:
            if square:
                root = math.isqrt(bound)
                k = self._leaf_value(root)
                return self._new(Op.LEAF, value=k * k), k * k
            v = self._leaf_value(bound)
            return self._new(Op.LEAF, value=v), v

        def make():
            ops = (Op.SQUARE, Op.MUL) if square else self.cfg.off_path_ops
            op = self.rng.choice(ops)
            if op is Op.SQUARE:
                child, v = self.constant(level + 1, math.isqrt(bound))
                return self._new(op, [child]), v * v
            if op is Op.SQRT:
                child, v = self.constant(level + 1, bound * bound, square=True)
                return self._new(op, [child]), rational_sqrt(v)
            kids = [self.constant(level + 1, bound, square=square) for _ in range(self.width)]
            v = apply_op(op, [k[1] for k in kids])
            return self._new(op, [k[0] for k in kids]), v

        return self._retry(make, lambda v: abs(v) <= bound, f"off-path value within {bound} at level {level}")

    def path(self, level):
        """On-path subtree; returns node id.  Values are filled in later."""
        if level == self.depth:
            return self._new(Op.LEAF, unknown=True)
        op = self.rng.choice(self.cfg.path_ops)
        slot = self.rng.randrange(self.width)
        kids = []
        for i in range(self.width):
            if i == slot:
                kids.append(self.path(level + 1))
            elif op is Op.MUL:
                bound = self.cfg.mul_operand_bound
                kids.append(self._retry(
                    lambda: self.constant(level + 1, bound), lambda v: v != 0,
                    f"nonzero multiplication operand at level {level + 1}",
                )[0])
            else:
                kids.append(self.constant(level + 1, self.cfg.max_abs)[0])
        return self._new(op, kids)


def _renumber(raw: list[tuple], root: int) -> tuple[dict[int, DagNode], int]:
    # post-order numbering from 1 so every child precedes its parent
    order: list[int] = []
    stack = [(root, False)]
    while stack:
        i, expanded = stack.pop()
        if expanded:
            order.append(i)
        else:
            stack.append((i, True))
            stack.extend((c, False) for c in reversed(raw[i][1]))
    new_id = {old: k + 1 for k, old in enumerate(order)}
    nodes = {}
    for old in order:
        op, children, value, unknown = raw[old]
        nid = new_id[old]
        nodes[nid] = DagNode(nid, op, tuple(new_id[c] for c in children), value, unknown)
    return nodes, new_id[root]


def generate_problem(depth: int, width: int, seed: int, cfg: GenConfig | None = None) -> DagProblem:
    """Generate one problem for the (depth, width) cell, deterministic per seed."""
    cfg = cfg or GenConfig()
    if depth < 2 or width < 2:
        raise ParameterError(f"depth and width must be >= 2, got ({depth}, {width})")
    rng = random.Random(seed)
    for _ in range(cfg.max_retries):
        b = _Builder(depth, width, rng, cfg)
        root = b.path(1)
        nodes, root_id = _renumber(b.nodes, root)
        truth = Fraction(b._leaf_value(max(abs(cfg.leaf_low), abs(cfg.leaf_high)), nonzero=True))
        problem = DagProblem(nodes, root_id, depth, width, Fraction(0), truth, seed)
        if _path_values_ok(problem, truth, cfg.max_value):
            problem.root_value = evaluate(problem, truth)
            problem.rendered = render(problem)
            return problem
    raise GenerationError(f"retry budget exhausted: on-path values within {cfg.max_value}")


def _path_values_ok(problem, x, bound) -> bool:
    # walk the unknown's ancestors, checking every intermediate value
    parent = {c: n.id for n in problem.nodes.values() for c in n.children}
    sub = DagProblem(problem.nodes, problem.root, problem.depth, problem.width, 0, x, 0)
    nid = problem.unknown
    while nid in parent:
        nid = parent[nid]
        sub.root = nid
        if abs(evaluate(sub, x)) > bound:
            return False
    return True


def generate_cell(depth, width, count, seed, cfg=None, unique=True) -> list[DagProblem]:
    """``count`` problems for one cell; duplicates (same text) are redrawn."""
    out, seen = [], set()
    for i in range(count):
        for attempt in range(1000):
            pseed = derive_seed(seed, "math", depth, width, i, attempt)
            p = generate_problem(depth, width, pseed, cfg)
            if not unique or p.rendered not in seen:
                break
        else:
            raise GenerationError(f"could not draw {count} distinct problems for cell ({depth}, {width})")
        seen.add(p.rendered)
        p.id = f"math-d{depth}-w{width}-{i:04d}"
        out.append(p)
    return out


def generate_dataset(depths=(2, 3, 4), widths=(2, 3, 4), count=100, seed=0, cfg=None) -> list[DagProblem]:
    """Paper-parity defaults give 9 cells x 100 = 900 problems."""
    return [p for d in depths for w in widths for p in generate_cell(d, w, count, seed, cfg)]


# ---------------------------------------------------------------------------
# rendering


def _name(nid):
    return f"n{nid}"


def _join(names):
    return names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]


def render(problem: DagProblem) -> str:
    """Describe the tree in words: one sentence per node, then the question."""
    sentences = []
    for nid in sorted(problem.nodes):
        node = problem.nodes[nid]
        kids = [_name(c) for c in node.children]
        if node.op is Op.LEAF:
            body = "unknown" if node.is_unknown else format_rational(node.value)
        elif node.op is Op.ADD:
            body = f"the sum of {_join(kids)}"
        elif node.op is Op.SUB:
            body = " minus ".join(kids)
        elif node.op is Op.MUL:
            body = f"the product of {_join(kids)}"
        elif node.op is Op.SQUARE:
            body = f"the square of {kids[0]}"
        else:
            body = f"the square root of {kids[0]}"
        sentence = f"The value of {_name(nid)} is {body}"
        if nid == problem.root:
            sentence += f", and {_name(nid)} equals {format_rational(problem.root_value)}"
        sentences.append(sentence + ".")
    sentences.append(f"What is the value of {_name(problem.unknown)}?")
    return " ".join(sentences)


# ---------------------------------------------------------------------------
# grading

_NUMBER = re.compile(
    r"(?<![\w.])([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)(?:\s*/\s*(\d+)(?![\d.]))?"
)
_MARKER = re.compile(r"ANSWER\s*:", re.IGNORECASE)


def parse_answer(text: str) -> tuple[Fraction | None, bool]:
    """Extract the final number; returns ``(value, is_fraction)``.

    Text after the last ``ANSWER:`` marker wins; otherwise the last number
    in the text is used.
    """
    markers = list(_MARKER.finditer(text))
    if markers:
        found = _NUMBER.search(text, markers[-1].end())
        if found:
            return _to_fraction(found), found.group(2) is not None
    matches = list(_NUMBER.finditer(text))
    if not matches:
        return None, False
    return _to_fraction(matches[-1]), matches[-1].group(2) is not None


def _to_fraction(m) -> Fraction:
    value = Fraction(m.group(1).replace(",", ""))
    if m.group(2) is not None:
        den = int(m.group(2))
        if den == 0:
            return None
        value /= den
    return value


def extract_answer(text: str) -> str | None:
    value, _ = parse_answer(text)
    return None if value is None else format_rational(value)


def grade(answer_text: str, truth, tol: float = 1e-6) -> GradeResult:
    """Grade free text against the exact ground truth.

    Fraction-form answers must match exactly; decimal answers may differ
    by at most ``tol`` (``tol=0`` demands an exact match).
    """
    if tol < 0:
        raise ParameterError("tol must be >= 0")
    value, is_fraction = parse_answer(answer_text or "")
    if value is None:
        return GradeResult(False, None, "UNPARSEABLE")
    truth = Fraction(truth)
    ok = value == truth if (is_fraction or tol == 0) else abs(value - truth) <= Fraction(tol)
    return GradeResult(ok, value, "NONE" if ok else "WRONG_VALUE")


# ---------------------------------------------------------------------------
# persistence


def write_jsonl(path, problems: Iterable[DagProblem], answers_path=None) -> None:
    """Write a dataset; with ``answers_path`` the truths go to a separate file."""
    problems = list(problems)
    with open(path, "x") as fh:
        for p in problems:
            fh.write(json.dumps(p.to_record(include_truth=answers_path is None)) + "\n")
    if answers_path is not None:
        with open(answers_path, "x") as fh:
            for p in problems:
                fh.write(json.dumps({"id": p.id, "ground_truth": format_rational(p.ground_truth)}) + "\n")


def read_jsonl(path, answers_path=None) -> Iterator[DagProblem]:
    truths = {}
    if answers_path is not None:
        with open(answers_path) as fh:
            truths = {r["id"]: r["ground_truth"] for r in map(json.loads, fh) if r}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                yield DagProblem.from_record(rec, truths.get(rec.get("id")))
