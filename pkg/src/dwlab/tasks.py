"""Family-neutral task records and per-family answer handling."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import mathgen, writegen

FAMILIES = ("math", "writing")


@dataclass(frozen=True)
class Task:
    """One benchmark item as seen by the orchestration layer.

    ``meta`` carries family data needed for grading (the exact truth for
    math, the keyword list for writing).  Synthetic backends may read it;
    remote backends only ever see ``prompt``.
    """

    id: str
    family: str
    prompt: str
    depth: int
    width: int
    meta: dict = field(default_factory=dict, compare=False)


def writing_prompt(kt: writegen.KeywordTask) -> str:
    return (
        f"Write a coherent essay of exactly {kt.K} sentences. "
        f"Use every one of these keywords at least once: {', '.join(kt.keyword_texts)}."
    )


def from_math(problem: mathgen.DagProblem) -> Task:
    return Task(
        id=problem.id,
        family="math",
        prompt=problem.rendered,
        depth=problem.depth,
        width=problem.width,
        meta={"truth": mathgen.format_rational(problem.ground_truth)},
    )


def from_writing(kt: writegen.KeywordTask) -> Task:
    return Task(
        id=kt.id,
        family="writing",
        prompt=writing_prompt(kt),
        depth=kt.K,
        width=kt.quintile,
        meta={"keyword_task": kt, "entropy_norm": kt.entropy_norm},
    )


def extract(task: Task, text: str | None) -> str | None:
    """Final answer carried by an agent output, per the family's conventions."""
    if text is None:
        return None
    if task.family == "math":
        return mathgen.extract_answer(text)
    return text.strip()


def score_output(task: Task, text: str | None, judge=None) -> dict:
    """Grade or score one system output; ``score`` is the per-task metric."""
    if task.family == "math":
        result = mathgen.grade(text or "", task.meta["truth"])
        return {
            "score": 1.0 if result.correct else 0.0,
            "answer": None if result.parsed_answer is None else mathgen.format_rational(result.parsed_answer),
            "failure_kind": result.failure_kind,
        }
    ws = writegen.score_essay(text or "", task.meta["keyword_task"], judge)
    return {
        "score": ws.composite,
        "standard": ws.standard,
        "quality": ws.quality,
        "diagnostics": ws.diagnostics,
        "entropy_norm": task.meta.get("entropy_norm"),
    }
