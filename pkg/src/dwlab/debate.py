"""Single-agent chain-of-thought and multi-agent debate with a summarizer."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from . import tasks as taskmod
from .backends import AgentBackend, Message
from .errors import BackendError, ParameterError
from .tasks import Task

SYSTEMS = ("single", "multi")


def load_templates(path=None) -> dict:
    if path is None:
        return json.loads(resources.files("dwlab").joinpath("data/prompts.json").read_text())
    with open(path) as fh:
        return json.load(fh)


def _template(templates: dict, task: Task, name: str) -> str:
    if task.family == "writing" and f"writing_{name}" in templates:
        return templates[f"writing_{name}"]
    return templates[name]


@dataclass
class DebateConfig:
    """Debate shape.  ``n_agents`` counts debaters only; the summarizer is extra."""

    n_agents: int = 3
    turns: int = 2
    summarizer: AgentBackend | None = None
    templates: dict | None = None
    max_workers: int = 1
    paper_parity: bool = False

    def __post_init__(self):
        if self.n_agents < 2:
            raise ParameterError("a debate needs at least 2 debaters")
        if self.turns < 1:
            raise ParameterError("a debate needs at least 1 turn")
        if self.paper_parity and not 4 <= self.n_agents + 1 <= 6:
            raise ParameterError("paper-parity debates use 4 to 6 agents including the summarizer")


@dataclass
class SingleResult:
    task_id: str
    answer_text: str
    final_answer: str | None
    trace: list[Message]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DebateTranscript:
    task_id: str
    turns: list[list[Message]] = field(default_factory=list)
    summary: str | None = None
    final_answer: str | None = None
    failed: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def run_single(task: Task, backend: AgentBackend, templates: dict | None = None) -> SingleResult:
    """One chain-of-thought generation."""
    templates = templates or load_templates()
    prompt = _template(templates, task, "cot").format(question=task.prompt)
    question = Message("user", 0, task.prompt, "question")
    try:
        text = backend.generate(prompt, [question], task=task, turn=1)
    except Exception as exc:
        raise BackendError(f"{backend.identity} failed on {task.id}: {exc}", task_id=task.id) from exc
    return SingleResult(
        task_id=task.id,
        answer_text=text,
        final_answer=taskmod.extract(task, text),
        trace=[question, Message(backend.identity, 1, text)],
    )


def debate_context(task: Task, previous: Sequence[Message], me: str) -> list[Message]:
    """Question plus every prior-turn message, with the receiver's own marked ``self``."""
    ctx = [Message("user", 0, task.prompt, "question")]
    for m in previous:
        ctx.append(Message(m.agent, m.turn, m.content, "self" if m.agent == me else "peer"))
    return ctx


def _format_peers(ctx: Sequence[Message]) -> str:
    return "\n\n".join(f"[{m.agent}]\n{m.content}" for m in ctx if m.role == "peer")


def run_debate(task: Task, cfg: DebateConfig, backends: Sequence[AgentBackend]) -> DebateTranscript:
    """Run ``cfg.turns`` debate turns followed by one summary.

    Turn 1 answers independently.  In later turns each debater sees the
    question, its own previous message and every peer's previous message.
    Generations within a turn depend only on the previous turn, so they may
    run concurrently; messages are always stored in agent order.
    """
    if len(backends) != cfg.n_agents:
        raise ParameterError(f"expected {cfg.n_agents} debater backends, got {len(backends)}")
    if cfg.summarizer is None:
        raise ParameterError("debate config has no summarizer backend")
    ids = [b.identity for b in backends]
    if len(set(ids)) != len(ids):
        raise ParameterError("debater identities must be distinct")
    templates = cfg.templates or load_templates()
    transcript = DebateTranscript(task_id=task.id)
    previous: list[Message] = []

    for turn in range(1, cfg.turns + 1):
        jobs = []
        for backend in backends:
            ctx = debate_context(task, previous, backend.identity)
            if turn == 1:
                prompt = _template(templates, task, "debate_first").format(question=task.prompt)
            else:
                own = next((m.content for m in ctx if m.role == "self"), "")
                prompt = _template(templates, task, "debate_followup").format(
                    question=task.prompt, own=own, peers=_format_peers(ctx)
                )
            jobs.append((backend, prompt, ctx))

        def call(job, turn=turn):
            backend, prompt, ctx = job
            try:
                return backend.generate(prompt, ctx, task=task, turn=turn), None
            except Exception as exc:  # recorded in the transcript, not raised
                return None, exc

        if cfg.max_workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
                outputs = list(pool.map(call, jobs))
        else:
            outputs = [call(j) for j in jobs]

        current = []
        for i, (backend, (text, exc)) in enumerate(zip(backends, outputs)):
            if exc is not None:
                if transcript.failed is None:
                    transcript.failed = {"turn": turn, "agent": i, "identity": backend.identity, "error": str(exc)}
                continue
            current.append(Message(backend.identity, turn, text))
        transcript.turns.append(current)
        if transcript.failed is not None:
            return transcript
        previous = current

    ctx = [Message("user", 0, task.prompt, "question")] + [
        Message(m.agent, m.turn, m.content, "peer") for m in previous
    ]
    prompt = _template(templates, task, "summarizer").format(
        question=task.prompt, responses=_format_peers(ctx)
    )
    try:
        summary = cfg.summarizer.generate(prompt, ctx, task=task, turn=cfg.turns + 1)
    except Exception as exc:
        transcript.failed = {
            "turn": cfg.turns + 1, "agent": "summarizer", "identity": cfg.summarizer.identity, "error": str(exc),
        }
        return transcript
    transcript.summary = summary
    transcript.final_answer = taskmod.extract(task, summary)
    return transcript


@dataclass
class RunResult:
    records: list[dict]
    failures: int = 0
    skipped: int = 0


def _record(task: Task, system: str, text: str | None, judge, error: str | None) -> dict:
    rec = {
        "task_id": task.id,
        "family": task.family,
        "depth": task.depth,
        "width": task.width,
        "system": system,
    }
    if error is not None:
        rec.update(status="failed", error=error, score=None)
        return rec
    rec["status"] = "ok"
    rec.update(taskmod.score_output(task, text, judge))
    return rec


def read_records(path) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_cellwise(
    dataset: Iterable[Task],
    *,
    single_backend: AgentBackend | None = None,
    debaters: Sequence[AgentBackend] = (),
    cfg: DebateConfig | None = None,
    systems: Sequence[str] = SYSTEMS,
    judge=None,
    records_path=None,
    transcripts_path=None,
    resume: bool = False,
    jobs: int = 1,
) -> RunResult:
    """Run every requested system on every task and grade/score the outputs.

    Records are keyed by (task id, system) and emitted in dataset order.
    With ``records_path`` they are appended to a JSON-lines ledger as they
    complete; ``resume=True`` skips keys already in the ledger, so an
    interrupted run finishes with exactly the records of an uninterrupted
    one.  Per-task failures become ``status: failed`` records.
    """
    systems = [s for s in SYSTEMS if s in systems]
    if "single" in systems and single_backend is None:
        raise ParameterError("single system requested without a backend")
    if "multi" in systems and (cfg is None or not debaters):
        raise ParameterError("multi system requested without debaters and a debate config")

    done = set()
    if records_path is not None and os.path.exists(records_path):
        if not resume:
            raise FileExistsError(f"{records_path} exists; pass resume=True to continue it")
        done = {(r["task_id"], r["system"]) for r in read_records(records_path)}

    work = [(t, s) for t in dataset for s in systems]
    pending = [(t, s) for t, s in work if (t.id, s) not in done]

    def execute(item):
        task, system = item
        transcript = None
        try:
            if system == "single":
                res = run_single(task, single_backend, cfg.templates if cfg else None)
                transcript = {"task_id": task.id, "system": system, **res.to_dict()}
                return _record(task, system, res.answer_text, judge, None), transcript
            tr = run_debate(task, cfg, debaters)
            transcript = {"system": system, **tr.to_dict()}
            if tr.failed is not None:
                return _record(task, system, None, judge, f"debate failed at {tr.failed}"), transcript
            return _record(task, system, tr.summary, judge, None), transcript
        except Exception as exc:
            return _record(task, system, None, judge, str(exc)), transcript

    records, failures = [], 0
    rec_fh = open(records_path, "a") if records_path is not None else None
    tr_fh = open(transcripts_path, "a") if transcripts_path is not None else None
    try:
        if jobs > 1:
            pool = ThreadPoolExecutor(max_workers=jobs)
            results = pool.map(execute, pending)
        else:
            pool = None
            results = map(execute, pending)
        for rec, transcript in results:
            records.append(rec)
            failures += rec["status"] != "ok"
            if rec_fh is not None:
                rec_fh.write(json.dumps(rec) + "\n")
                rec_fh.flush()
            if tr_fh is not None and transcript is not None:
                tr_fh.write(json.dumps(transcript) + "\n")
                tr_fh.flush()
        if pool is not None:
            pool.shutdown()
    finally:
        for fh in (rec_fh, tr_fh):
            if fh is not None:
                fh.close()
    return RunResult(records=records, failures=failures, skipped=len(work) - len(pending))
