"""Agent backends: synthetic (deterministic, offline) and remote chat-completions."""

from __future__ import annotations

import os
import random
import re
import time
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Protocol, Sequence

import httpx

from .errors import BackendError, ParameterError
from .mathgen import format_rational
from .seeding import derive_seed
from .tasks import Task
from .writegen import keyword_pattern, split_sentences

API_KEY_ENV = "DWLAB_API_KEY"


@dataclass(frozen=True)
class Message:
    agent: str
    turn: int
    content: str
    role: str = "agent"  # "question" | "self" | "peer" | "agent" | "summary"


class AgentBackend(Protocol):
    identity: str
    deterministic: bool

    def generate(self, prompt: str, context: Sequence[Message], *, task: Task, turn: int) -> str: ...


# ---------------------------------------------------------------------------
# synthetic essay text

_OPENERS = (
    "In the morning",
    "Later that week",
    "Without much warning",
    "By the time the rain stopped",
    "Long before anyone noticed",
    "At the edge of town",
    "Quietly",
    "After a long pause",
)
_BODIES = (
    "everyone kept talking about the {kw}",
    "the {kw} became the center of a small, strange story",
    "she wrote a careful note about the {kw} and left it on the table",
    "the old neighbour insisted that the {kw} had changed his life",
    "nobody expected the {kw} to matter so much",
    "a curious child asked why the {kw} was there at all",
)
_FILLERS = (
    "the street was quiet and the light was thin",
    "the afternoon stretched on without any real news",
    "people hurried past with their collars turned up",
    "a dog barked somewhere and then fell silent",
)


def _sentence(rng: random.Random, keyword: str | None) -> str:
    opener = rng.choice(_OPENERS)
    body = rng.choice(_BODIES).format(kw=keyword) if keyword else rng.choice(_FILLERS)
    tail = ", and the day moved on" if rng.random() < 0.4 else ""
    return f"{opener}, {body}{tail}."


def synthetic_essay(task: Task, slots: Sequence[bool], rng: random.Random) -> str:
    keywords = task.meta["keyword_task"].keyword_texts
    return " ".join(_sentence(rng, kw if ok else None) for kw, ok in zip(keywords, slots))


# ---------------------------------------------------------------------------
# synthetic agents


class OracleBackend:
    """Always right: the exact truth for math, a fully compliant essay for writing."""

    deterministic = True

    def __init__(self, identity: str = "oracle", seed: int = 0):
        self.identity = identity
        self.seed = seed

    def generate(self, prompt, context, *, task, turn):
        if task.family == "math":
            return f"Working through every step of the problem carefully.\nANSWER: {task.meta['truth']}"
        rng = random.Random(derive_seed(self.seed, "oracle", self.identity, task.id, turn))
        return synthetic_essay(task, [True] * task.depth, rng)


class AdversarialBackend:
    deterministic = True

    def __init__(self, identity: str = "adversary", reply: str = "I don't know."):
        self.identity = identity
        self.reply = reply

    def generate(self, prompt, context, *, task, turn):
        return self.reply


class ScriptedBackend:
    """Replies from a fixed function of (prompt, context, task, turn); for tests."""

    deterministic = True

    def __init__(self, identity: str, script: Callable[..., str]):
        self.identity = identity
        self.script = script

    def generate(self, prompt, context, *, task, turn):
        return self.script(prompt=prompt, context=context, task=task, turn=turn)


_STEP = re.compile(r"^Step (\d+): (ok|failed)\b", re.MULTILINE)
_ANSWER_LINE = re.compile(r"^ANSWER: (.+)$", re.MULTILINE)


class StochasticBackend:
    """Agent that clears each of ``depth`` steps only if all ``width`` micro-operations succeed.

    Each micro-operation succeeds with probability ``q``; draws are keyed by
    (seed, identity, task id, turn), so a generation does not depend on
    execution order.  Every turn is an independent attempt, which is the
    independence assumption made about final-round debate outputs.

    Math output lists one ``Step j: ok|failed`` line per step and an
    ``ANSWER:`` line, correct iff every step is ok.  Writing output is an
    essay with one sentence per keyword slot; a slot keeps its keyword iff
    that step is ok.
    """

    deterministic = True

    def __init__(self, q: float, seed: int = 0, identity: str = "agent"):
        if not 0.0 < q < 1.0:
            raise ParameterError(f"q must lie in (0, 1), got {q!r}")
        self.q = q
        self.seed = seed
        self.identity = identity

    def steps(self, task: Task, turn: int) -> tuple[list[bool], random.Random]:
        rng = random.Random(derive_seed(self.seed, "agent", self.identity, task.id, turn))
        width = task.width or 1
        return [all(rng.random() < self.q for _ in range(width)) for _ in range(task.depth)], rng

    def generate(self, prompt, context, *, task, turn):
        steps, rng = self.steps(task, turn)
        if task.family == "writing":
            return synthetic_essay(task, steps, rng)
        lines = [f"Step {j}: {'ok' if ok else 'failed'}" for j, ok in enumerate(steps, 1)]
        answer = _wrong_answer(task, rng) if not all(steps) else task.meta["truth"]
        return "\n".join(lines) + f"\nANSWER: {answer}"


def _wrong_answer(task: Task, rng: random.Random) -> str:
    offset = rng.choice([k for k in range(-9, 10) if k != 0])
    return format_rational(Fraction(task.meta["truth"]) + offset)


class StochasticSummarizer:
    """Aggregator that passes a fully covered candidate with probability ``r``.

    Math: a step is covered when some final-turn message marks it ok.  If
    all steps are covered and the reliability draw succeeds, the summary
    carries the correct answer; otherwise it repeats the most common
    answer among the messages (ties broken by order), or a wrong one.
    Writing: the summary merges, slot by slot, a sentence that kept its
    keyword when any message has one; if the reliability draw fails it
    returns the first message unchanged.
    """

    deterministic = True

    def __init__(self, r: float, seed: int = 0, identity: str = "summarizer"):
        if not 0.0 < r <= 1.0:
            raise ParameterError(f"r must lie in (0, 1], got {r!r}")
        self.r = r
        self.seed = seed
        self.identity = identity

    def generate(self, prompt, context, *, task, turn):
        rng = random.Random(derive_seed(self.seed, "summarizer", self.identity, task.id, turn))
        passes = rng.random() < self.r
        messages = [m.content for m in context if m.role != "question"]
        if task.family == "writing":
            return self._merge_essays(task, messages, passes)
        covered = set()
        answers = []
        for text in messages:
            covered.update(int(j) for j, status in _STEP.findall(text) if status == "ok")
            found = _ANSWER_LINE.findall(text)
            if found:
                answers.append(found[-1].strip())
        if passes and covered >= set(range(1, task.depth + 1)):
            return f"All steps are supported by at least one agent.\nANSWER: {task.meta['truth']}"
        wrong = [a for a in answers if a != task.meta["truth"]]
        if wrong:
            choice = Counter(wrong).most_common(1)[0][0]
        else:
            choice = _wrong_answer(task, rng)
        return f"The agents could not be reconciled.\nANSWER: {choice}"

    def _merge_essays(self, task, messages, passes):
        if not messages:
            return ""
        if not passes:
            return messages[0]
        split = [split_sentences(m) for m in messages]
        keywords = task.meta["keyword_task"].keyword_texts
        merged = []
        for j, kw in enumerate(keywords):
            pat = keyword_pattern(kw)
            options = [s[j] for s in split if j < len(s)]
            hit = next((o for o in options if pat.search(o)), None)
            merged.append(hit or (options[0] if options else ""))
        return " ".join(x for x in merged if x)


# ---------------------------------------------------------------------------
# remote chat-completions backend


class ChatClient:
    """Minimal client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Retries 429/5xx responses and transport errors with exponential backoff.
    """

    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.7,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if not base_url or not model:
            raise ParameterError("remote backend needs both a base URL and a model name")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff = backoff
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def payload(self, messages, temperature=None) -> dict:
        return {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature if temperature is None else temperature,
        }

    def complete(self, messages, temperature=None) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = self.payload(messages, temperature)
        last = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._http.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                if resp.status_code in self.RETRY_STATUS and attempt < self.max_retries:
                    last = BackendError(f"HTTP {resp.status_code}")
                else:
                    resp.raise_for_status()
                    return resp.json()["choices"][0]["message"]["content"]
            except httpx.HTTPStatusError as exc:
                raise BackendError(f"chat completion failed: HTTP {exc.response.status_code}") from exc
            except httpx.TransportError as exc:
                last = BackendError(f"chat completion unreachable: {exc}")
                if attempt >= self.max_retries:
                    raise last from exc
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"malformed chat completion response: {exc}") from exc
            time.sleep(self.backoff * 2 ** attempt)
        raise last

    def close(self):
        self._http.close()


class RemoteBackend:
    deterministic = False

    def __init__(self, client: ChatClient, identity: str = "remote", temperature: float | None = None):
        self.client = client
        self.identity = identity
        self.temperature = temperature

    def generate(self, prompt, context, *, task, turn):
        return self.client.complete([{"role": "user", "content": prompt}], temperature=self.temperature)
