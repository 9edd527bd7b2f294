"""Depth-Width Writing (DW2) tasks: keyword sets, entropy bins and scoring.

A task asks for a ``K``-sentence essay that uses ``K`` keywords.  ``K`` is
the depth; the width level is the quintile of the normalized Shannon
entropy of the keywords' occupation groups among all sets drawn for that
``K``.
"""

from __future__ import annotations

import json
import math
import random
import re
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Iterable, Protocol, Sequence

from .errors import BackendError, ParameterError
from .seeding import derive_seed

PAPER_KS = (4, 8, 12, 16, 20)
N_GROUPS = 23


@dataclass(frozen=True)
class Group:
    id: int
    name: str
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class Lexicon:
    version: str
    groups: dict[int, Group]

    def __post_init__(self):
        if len(self.groups) != N_GROUPS:
            raise ParameterError(f"lexicon must have {N_GROUPS} groups, found {len(self.groups)}")
        seen = set()
        for g in self.groups.values():
            if len(g.keywords) < 20:
                raise ParameterError(f"group {g.id} ({g.name}) has fewer than 20 keywords")
            for kw in g.keywords:
                if kw != kw.lower() or not kw.strip():
                    raise ParameterError(f"keyword {kw!r} must be non-empty lowercase text")
                if kw in seen:
                    raise ParameterError(f"duplicate keyword {kw!r}")
                seen.add(kw)

    def pool(self) -> list[tuple[str, int]]:
        """All (keyword, group id) pairs in a fixed order."""
        return [(kw, g.id) for gid in sorted(self.groups) for g in [self.groups[gid]] for kw in g.keywords]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "groups": [
                {"id": g.id, "name": g.name, "keywords": list(g.keywords)}
                for g in (self.groups[i] for i in sorted(self.groups))
            ],
        }


def load_lexicon(path=None) -> Lexicon:
    """Load a lexicon file, or the packaged stand-in lexicon."""
    if path is None:
        raw = json.loads(resources.files("dwlab").joinpath("data/lexicon.json").read_text())
    else:
        with open(path) as fh:
            raw = json.load(fh)
    groups = {
        int(g["id"]): Group(int(g["id"]), g["name"], tuple(g["keywords"])) for g in raw["groups"]
    }
    return Lexicon(version=str(raw.get("version", "")), groups=groups)


@dataclass(frozen=True)
class KeywordTask:
    id: str
    K: int
    keywords: tuple[tuple[str, int], ...]
    entropy_norm: float
    seed: int
    quintile: int | None = None

    @property
    def keyword_texts(self) -> list[str]:
        return [k for k, _ in self.keywords]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "K": self.K,
            "keywords": [{"text": k, "group": g} for k, g in self.keywords],
            "entropy_norm": self.entropy_norm,
            "quintile": self.quintile,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "KeywordTask":
        return cls(
            id=rec["id"],
            K=int(rec["K"]),
            keywords=tuple((k["text"], int(k["group"])) for k in rec["keywords"]),
            entropy_norm=float(rec["entropy_norm"]),
            seed=int(rec["seed"]),
            quintile=rec.get("quintile"),
        )


@dataclass
class WritingScore:
    standard: float
    quality: float
    composite: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# entropy and sampling


def normalized_entropy(group_ids: Sequence, literal: bool = False) -> float:
    """Shannon entropy of the category multiset divided by log2(K).

    The default sums over distinct categories.  ``literal=True`` sums
    ``p(c_i) log2 p(c_i)`` over the K slots instead, so a category that
    occurs m times contributes m times.  Sets with K <= 1 score 0.
    """
    k = len(group_ids)
    if k <= 1:
        return 0.0
    counts = Counter(group_ids)
    if len(counts) == 1:
        return 0.0
    if len(counts) == k:
        return 1.0
    if literal:
        h = -sum(m * (m / k) * math.log2(m / k) for m in counts.values())
    else:
        h = -sum((m / k) * math.log2(m / k) for m in counts.values())
    return h / math.log2(k)


def sample_sets(K: int, n: int, seed: int, lexicon: Lexicon | None = None) -> list[KeywordTask]:
    """Draw ``n`` sets of ``K`` distinct keywords uniformly from the pooled lexicon."""
    lexicon = lexicon or load_lexicon()
    pool = lexicon.pool()
    if K < 1 or n < 1:
        raise ParameterError("K and n must be >= 1")
    if K > len(pool):
        raise ParameterError(f"K={K} exceeds the {len(pool)} keywords in the lexicon")
    tasks = []
    for i in range(n):
        tseed = derive_seed(seed, "writing", K, i)
        picked = tuple(random.Random(tseed).sample(pool, K))
        tasks.append(KeywordTask(
            id=f"write-K{K:02d}-{i:04d}",
            K=K,
            keywords=picked,
            entropy_norm=normalized_entropy([g for _, g in picked]),
            seed=tseed,
        ))
    return tasks


def bin_quintiles(tasks: Iterable[KeywordTask]) -> list[KeywordTask]:
    """Assign quintiles 1..5 by (entropy_norm, id) rank; result is in rank order."""
    ranked = sorted(tasks, key=lambda t: (t.entropy_norm, t.id))
    if len(ranked) % 5:
        raise ParameterError(f"{len(ranked)} tasks cannot be split into 5 equal quintiles")
    size = len(ranked) // 5
    return [replace(t, quintile=i // size + 1) for i, t in enumerate(ranked)]


def generate_dataset(Ks=PAPER_KS, count=500, seed=0, lexicon=None, binned=True) -> list[KeywordTask]:
    """Paper-parity defaults give 5 K values x 500 sets = 2,500 tasks."""
    lexicon = lexicon or load_lexicon()
    out = []
    for K in Ks:
        tasks = sample_sets(K, count, seed, lexicon)
        if binned:
            tasks = sorted(bin_quintiles(tasks), key=lambda t: (t.quintile, t.id))
        out.extend(tasks)
    return out


# ---------------------------------------------------------------------------
# scoring

ABBREVIATIONS = frozenset(
    "mr mrs ms dr prof sr jr st vs etc inc ltd co corp e.g i.e u.s no approx dept est fig".split()
)
_WORD = re.compile(r"[A-Za-z0-9]+(?:['-][A-Za-z0-9]+)*")
_BOUNDARY = re.compile(r"[.!?]+[\"')\]]*(?=\s+[\"'(\[]?[A-Z0-9]|\s*$)")


def split_sentences(text: str) -> list[str]:
    """Split on . ! ? followed by whitespace and a capital (or end of text)."""
    text = text.strip()
    if not text:
        return []
    out, start = [], 0
    for m in _BOUNDARY.finditer(text):
        before = text[start:m.start()].split()
        last = before[-1].lower().rstrip(".") if before else ""
        if m.group().startswith(".") and last in ABBREVIATIONS:
            continue
        sentence = text[start:m.end()].strip()
        if sentence:
            out.append(sentence)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def keyword_pattern(keyword: str) -> re.Pattern:
    parts = [re.escape(p) for p in keyword.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(parts) + r"(?!\w)", re.IGNORECASE)


def standard_score(essay: str, K: int, keywords: Sequence[str]) -> tuple[float, dict]:
    """Constraint score in [0, 1]: half sentence count, half keyword coverage."""
    sentences = split_sentences(essay or "")
    n = len(sentences)
    matched = [kw for kw in keywords if keyword_pattern(kw).search(essay or "")]
    missing = [kw for kw in keywords if kw not in matched]
    if n == 0:
        sentence_sub, coverage = 0.0, 0.0
    else:
        sentence_sub = max(0.0, 1.0 - abs(n - K) / K)
        coverage = len(matched) / K
    diagnostics = {
        "sentences": n,
        "sentence_subscore": sentence_sub,
        "coverage": coverage,
        "missing_keywords": missing,
    }
    return 0.5 * sentence_sub + 0.5 * coverage, diagnostics


def composite_score(standard: float, quality: float) -> float:
    if not 0.0 <= standard <= 1.0:
        raise ParameterError(f"standard score must lie in [0, 1], got {standard}")
    if not 0.0 <= quality <= 10.0:
        raise ParameterError(f"quality score must lie in [0, 10], got {quality}")
    return standard * quality


class JudgeBackend(Protocol):
    def score(self, essay: str, task: KeywordTask) -> float: ...


class HeuristicJudge:
    """Offline stand-in for an LLM quality judge.

    Averages three 0-10 proxies: sentence-length rhythm (coefficient of
    variation of words per sentence, full marks in [0.2, 0.6]), vocabulary
    (type-token ratio scaled by min(1, words/50)), and keyword dispersion
    (share of keyword-bearing sentences among the slots the matched
    keywords could have spread over).  It measures surface proxies only and
    makes no claim to agree with an LLM judge.
    """

    deterministic = True
    identity = "heuristic-judge"

    def score(self, essay: str, task: KeywordTask | None = None) -> float:
        sentences = split_sentences(essay or "")
        words = [w.lower() for w in _WORD.findall(essay or "")]
        if not words:
            return 0.0
        lengths = [len(_WORD.findall(s)) for s in sentences]
        if len(lengths) < 2 or statistics.fmean(lengths) == 0:
            rhythm = 0.0
        else:
            cv = statistics.pstdev(lengths) / statistics.fmean(lengths)
            if cv < 0.2:
                rhythm = 10.0 * cv / 0.2
            elif cv <= 0.6:
                rhythm = 10.0
            else:
                rhythm = max(0.0, 10.0 * (1.0 - (cv - 0.6) / 0.6))
        vocab = 10.0 * len(set(words)) / len(words) * min(1.0, len(words) / 50)
        dispersion = 0.0
        if task is not None and sentences:
            hosts, matched = set(), 0
            for kw in task.keyword_texts:
                pat = keyword_pattern(kw)
                idx = next((i for i, s in enumerate(sentences) if pat.search(s)), None)
                if idx is not None:
                    matched += 1
                    hosts.add(idx)
            if matched:
                dispersion = 10.0 * len(hosts) / min(matched, len(sentences))
        return (rhythm + vocab + dispersion) / 3.0


JUDGE_PROMPT = (
    "Rate the following essay for fluency, coherence and creativity on a scale "
    "from 0 to 10. Reply with a single line of the form 'SCORE: <number>'.\n\n"
    "Required keywords: {keywords}\n\nEssay:\n{essay}"
)
_SCORE = re.compile(r"SCORE\s*:\s*([-+]?\d+(?:\.\d+)?)", re.IGNORECASE)


class RemoteJudge:
    """LLM judge reached through a chat-completions client."""

    deterministic = False

    def __init__(self, client, prompt: str = JUDGE_PROMPT):
        self.client = client
        self.prompt = prompt
        self.identity = f"remote-judge:{getattr(client, 'model', '?')}"

    def score(self, essay: str, task: KeywordTask) -> float:
        reply = self.client.complete(
            [{"role": "user", "content": self.prompt.format(keywords=", ".join(task.keyword_texts), essay=essay)}]
        )
        m = _SCORE.search(reply)
        if not m:
            raise BackendError(f"judge reply has no score: {reply[:80]!r}", task_id=task.id)
        return min(10.0, max(0.0, float(m.group(1))))


def judge_quality(essay: str, task: KeywordTask, judge: JudgeBackend | None = None) -> float:
    if not (essay or "").strip():
        return 0.0
    return (judge or HeuristicJudge()).score(essay, task)


def score_essay(essay: str, task: KeywordTask, judge: JudgeBackend | None = None) -> WritingScore:
    standard, diagnostics = standard_score(essay, task.K, task.keyword_texts)
    quality = judge_quality(essay, task, judge)
    return WritingScore(standard, quality, composite_score(standard, quality), diagnostics)


def write_jsonl(path, tasks: Iterable[KeywordTask]) -> None:
    with open(path, "x") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_record()) + "\n")


def read_jsonl(path) -> list[KeywordTask]:
    with open(path) as fh:
        return [KeywordTask.from_record(json.loads(line)) for line in fh if line.strip()]
