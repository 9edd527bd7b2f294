"""Closed-form depth/width success model for single agents and debate.

A task has ``d`` sequential steps, each requiring ``w`` independent
capability micro-operations that succeed with probability ``q``.  A single
agent must clear every step.  A debate of ``N`` agents covers a step when
at least one agent clears it, and an aggregator with reliability ``r``
passes a fully covered candidate.

Two placements of the aggregator factor are supported:

``"task"`` (default)
    ``r`` is applied once per task, ``S_multi = r * [1 - (1 - s)^N]^d``.
``"step"``
    ``r`` compounds at every step, ``S_multi = (r * [1 - (1 - s)^N])^d``,
    which is the form under which the gain is exactly ``f(s)^d - 1`` and
    the width limit is ``(rN)^d - 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

from .errors import AssumptionViolation, ParameterError

AGGREGATIONS = ("task", "step")

# Switch to log-space once f**d would come close to float overflow.
_LOG_SPACE_CUTOFF = 700.0


@dataclass(frozen=True)
class ModelParams:
    """Parameters (q, w, d, N, r) of the closed-form model."""

    q: float
    w: int
    d: int
    n_agents: int = 3
    r: float = 1.0
    aggregation: str = "task"

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ParameterError(f"q must lie in (0, 1), got {self.q!r}")
        if not 0.0 < self.r <= 1.0:
            raise ParameterError(f"r must lie in (0, 1], got {self.r!r}")
        for name, lo in (("w", 1), ("d", 1), ("n_agents", 2)):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < lo:
                raise ParameterError(f"{name} must be an integer >= {lo}, got {value!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ParameterError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GainAssessment:
    gain: float
    assumption_ok: bool
    s: float


@dataclass
class VerificationReport:
    """Outcome of a numeric proposition check.

    ``violations`` are genuine failures; ``flagged`` are points excluded
    because the f(s) > 1 assumption does not hold there.
    """

    check: str
    passed: bool
    comparisons: int = 0
    violations: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_q(q):
    if not 0.0 < q < 1.0:
        raise ParameterError(f"capability success rate must lie in (0, 1), got {q!r}")


def per_step_success(q: float, w: int) -> float:
    """Probability ``q**w`` that one agent clears a width-``w`` step."""
    _check_q(q)
    if isinstance(w, bool) or int(w) != w or w < 1:
        raise ParameterError(f"width must be an integer >= 1, got {w!r}")
    return q ** int(w)


def per_step_success_hetero(qs: Sequence[float]) -> float:
    """Per-step success for capabilities with individual rates ``qs``."""
    qs = list(qs)
    if not qs:
        raise ParameterError("at least one capability rate is required")
    prod = 1.0
    for q in qs:
        _check_q(q)
        prod *= q
    return prod


def _coverage_ratio(s: float, n: int) -> float:
    # [1 - (1 - s)^N] / s written as the geometric sum over (1 - s)^k,
    # which has no cancellation as s -> 0 and tends to N there.
    t = 1.0 - s
    total, term = 0.0, 1.0
    for _ in range(n):
        total += term
        term *= t
    return total


def single_success(p: ModelParams) -> float:
    """``S_single = s(w)^d``."""
    return per_step_success(p.q, p.w) ** p.d


def multi_success(p: ModelParams) -> float:
    """Debate success rate under ``p.aggregation``."""
    s = per_step_success(p.q, p.w)
    coverage = s * _coverage_ratio(s, p.n_agents)
    if p.aggregation == "step":
        return (p.r * coverage) ** p.d
    return p.r * coverage ** p.d


def advantage_factor(p: ModelParams) -> float:
    """``f(s) = r [1 - (1 - s)^N] / s``; the debate advantage assumption is f > 1."""
    s = per_step_success(p.q, p.w)
    return p.r * _coverage_ratio(s, p.n_agents)


def _log_gain_plus_one(p: ModelParams) -> float:
    s = per_step_success(p.q, p.w)
    log_ratio = math.log(_coverage_ratio(s, p.n_agents))
    if p.aggregation == "step":
        return p.d * (math.log(p.r) + log_ratio)
    return math.log(p.r) + p.d * log_ratio


def performance_gain(p: ModelParams) -> GainAssessment:
    """Relative improvement ``(S_multi - S_single) / S_single``.

    Evaluated as ``r * f0**d - 1`` (or ``(r f0)**d - 1`` for step
    aggregation) with ``f0`` the coverage ratio, so it never divides two
    underflowing success rates.  For very large ``d`` the power is taken in
    log space.
    """
    s = per_step_success(p.q, p.w)
    f0 = _coverage_ratio(s, p.n_agents)
    log_total = _log_gain_plus_one(p)
    if abs(log_total) < _LOG_SPACE_CUTOFF:
        if p.aggregation == "step":
            gain = (p.r * f0) ** p.d - 1.0
        else:
            gain = p.r * f0 ** p.d - 1.0
    else:
        gain = math.expm1(log_total) if log_total < 709.0 else math.inf
    return GainAssessment(gain=gain, assumption_ok=p.r * f0 > 1.0, s=s)


def direct_gain(p: ModelParams) -> float:
    """Gain as the literal ratio of the two success rates (second route)."""
    single = single_success(p)
    return (multi_success(p) - single) / single


def width_limit_gain(d: int, n_agents: int, r: float, aggregation: str = "task") -> float:
    """Limit of the gain as width grows without bound.

    ``(rN)^d - 1`` for step aggregation, ``r N^d - 1`` for task aggregation.
    """
    p = ModelParams(q=0.5, w=1, d=d, n_agents=n_agents, r=r, aggregation=aggregation)
    if p.aggregation == "step":
        return (p.r * p.n_agents) ** p.d - 1.0
    return p.r * p.n_agents ** p.d - 1.0


def _as_range(values, name) -> list[int]:
    if isinstance(values, range):
        out = list(values)
    elif isinstance(values, tuple) and len(values) == 2 and all(isinstance(v, int) for v in values):
        out = list(range(values[0], values[1] + 1))
    else:
        out = list(values)
    if not out:
        raise ParameterError(f"{name} is empty")
    return sorted(out)


def verify_monotonicity(base: ModelParams, d_range, w_range) -> VerificationReport:
    """Check that the gain strictly increases under d -> d+1 and w -> w+1.

    ``d_range``/``w_range`` are inclusive ``(lo, hi)`` tuples, ranges, or
    explicit iterables.  Points where f(s) <= 1 are flagged and excluded.
    """
    ds = _as_range(d_range, "d_range")
    ws = _as_range(w_range, "w_range")
    grid = {}
    flagged = []
    for d in ds:
        for w in ws:
            g = performance_gain(base.with_(d=d, w=w))
            grid[d, w] = g
            if not g.assumption_ok:
                flagged.append({"d": d, "w": w, "f": advantage_factor(base.with_(d=d, w=w))})
    comparisons = 0
    violations = []
    for (d, w), g in grid.items():
        if not g.assumption_ok:
            continue
        for axis, nxt in (("d", (d + 1, w)), ("w", (d, w + 1))):
            other = grid.get(nxt)
            if other is None or not other.assumption_ok:
                continue
            comparisons += 1
            if not other.gain > g.gain:
                violations.append(
                    {"axis": axis, "d": d, "w": w, "gain": g.gain, "next_gain": other.gain}
                )
    return VerificationReport(
        check="monotonicity",
        passed=not violations,
        comparisons=comparisons,
        violations=violations,
        flagged=flagged,
        details={"d_values": ds, "w_values": ws, "params": base.to_dict()},
    )


def _geometric_widths(w_max: int) -> list[int]:
    ws, w = [], 1
    while w < w_max:
        ws.append(w)
        w *= 2
    ws.append(w_max)
    return ws


def verify_width_saturation(base: ModelParams, w_max: int, tol: float) -> VerificationReport:
    """Check that the gain approaches its width limit.

    The error is evaluated on the geometric subsequence 1, 2, 4, ..., w_max
    and must be non-increasing there (allowing a few ulps of rounding once
    saturated).  ``details["first_w"]`` is the smallest w <= w_max whose
    error is below ``tol``; if none exists the report is marked
    not-converged and ``passed`` is false.
    """
    if w_max < 1:
        raise ParameterError("w_max must be >= 1")
    if not tol > 0:
        raise ParameterError("tol must be > 0")
    limit = width_limit_gain(base.d, base.n_agents, base.r, base.aggregation)
    slack = 8 * math.ulp(abs(limit) + 1.0)

    def err(w):
        return abs(performance_gain(base.with_(w=w)).gain - limit)

    trace = [(w, err(w)) for w in _geometric_widths(w_max)]
    violations = [
        {"w": w1, "error": e1, "next_w": w2, "next_error": e2}
        for (w1, e1), (w2, e2) in zip(trace, trace[1:])
        if e2 > e1 + slack
    ]
    first_w = None
    if trace[-1][1] < tol:
        # error is monotone, so bisect for the first width under tol
        lo, hi = 1, w_max
        if err(1) < tol:
            hi = 1
        while lo < hi:
            mid = (lo + hi) // 2
            if err(mid) < tol:
                hi = mid
            else:
                lo = mid + 1
        first_w = hi
    converged = first_w is not None
    return VerificationReport(
        check="width_saturation",
        passed=converged and not violations,
        comparisons=len(trace) - 1,
        violations=violations,
        details={
            "limit": limit,
            "tol": tol,
            "w_max": w_max,
            "converged": converged,
            "first_w": first_w,
            "final_error": trace[-1][1],
            "trace": [{"w": w, "error": e} for w, e in trace],
            "params": base.to_dict(),
        },
    )


def verify_depth_divergence(base: ModelParams, threshold: float) -> int:
    """Smallest depth at which the gain strictly exceeds ``threshold``.

    Raises :class:`AssumptionViolation` when f(s) <= 1, where the gain need
    not diverge.
    """
    if not threshold >= 0:
        raise ParameterError("threshold must be >= 0")
    f = advantage_factor(base)
    if not f > 1.0:
        raise AssumptionViolation(
            f"f(s) = {f!r} <= 1 at q={base.q}, w={base.w}, N={base.n_agents}, r={base.r}"
        )

    def exceeds(d):
        return performance_gain(base.with_(d=d)).gain > threshold

    # Jump near the answer using the log-space form, then walk to the exact edge.
    p1 = base.with_(d=1)
    slope = _log_gain_plus_one(base.with_(d=2)) - _log_gain_plus_one(p1)
    intercept = _log_gain_plus_one(p1) - slope
    target = math.log1p(threshold)
    d = max(1, math.ceil((target - intercept) / slope)) if slope > 0 else 1
    while d > 1 and exceeds(d - 1):
        d -= 1
    while not exceeds(d):
        d += 1
    return d


def gain_surface(base: ModelParams, ds: Iterable[int], ws: Iterable[int]) -> dict:
    """Closed-form gains keyed by ``(d, w)``."""
    return {(d, w): performance_gain(base.with_(d=d, w=w)).gain for d in ds for w in ws}
