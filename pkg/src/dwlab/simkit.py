"""Monte Carlo simulation of the depth/width task model.

Each trial owns a fixed-size block of uniforms in a Philox stream keyed by
the seed: trial ``t`` reads uniforms ``[t*D, (t+1)*D)``.  Inside a block
the layout is

* ``d*w`` single-agent micro-operations, indexed (step, capability);
* ``d*N*w`` debater micro-operations, indexed (step, agent, capability);
* ``d`` aggregator draws (only the first is used for task aggregation);
* padding up to a multiple of 4 so every block starts on a Philox counter.

Because the position of every draw depends only on (seed, trial, step,
agent, capability), results do not depend on how trials are split into
blocks or workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
from scipy import stats

from . import theory
from .errors import ParameterError
from .seeding import MASK64, derive_seed
from .theory import ModelParams

CI_SIGMAS = 3.0
# two-sided coverage of a 3-sigma normal interval
CI_CONFIDENCE = math.erf(CI_SIGMAS / math.sqrt(2.0))
DEFAULT_BLOCK = 8192


@dataclass(frozen=True)
class TrialConfig:
    params: ModelParams
    trials: int
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.trials, bool) or int(self.trials) != self.trials or self.trials < 1:
            raise ParameterError(f"trials must be an integer >= 1, got {self.trials!r}")
        if not 0 <= int(self.seed) <= MASK64:
            raise ParameterError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class EmpiricalRates:
    single_hat: float
    multi_hat: float
    trials: int
    single_successes: int
    multi_successes: int
    ci_halfwidth_single: float
    ci_halfwidth_multi: float


@dataclass
class ComparisonReport:
    params: dict
    trials: int
    seed: int
    ci_method: str
    single_hat: float
    multi_hat: float
    single_expected: float
    multi_expected: float
    single_error: float
    multi_error: float
    single_interval: tuple
    multi_interval: tuple
    single_pass: bool
    multi_pass: bool
    closed_form_gain: float
    empirical_gain: float | None

    @property
    def passed(self) -> bool:
        return self.single_pass and self.multi_pass

    def to_dict(self) -> dict:
        out = asdict(self)
        out["single_interval"] = list(self.single_interval)
        out["multi_interval"] = list(self.multi_interval)
        out["passed"] = self.passed
        return out


def block_size(p: ModelParams) -> int:
    """Uniforms reserved per trial (a multiple of 4)."""
    raw = p.d * p.w * (1 + p.n_agents) + p.d
    return -(-raw // 4) * 4


def _count_block(p: ModelParams, seed: int, start: int, stop: int) -> tuple[int, int]:
    D = block_size(p)
    bitgen = np.random.Philox(key=seed)
    bitgen.advance(start * D // 4)
    u = np.random.Generator(bitgen).random((stop - start) * D).reshape(stop - start, D)
    d, w, n = p.d, p.w, p.n_agents
    i = d * w
    single_ok = (u[:, :i] < p.q).all(axis=1)
    agent_step = (u[:, i:i + d * n * w].reshape(-1, d, n, w) < p.q).all(axis=3)
    covered = agent_step.any(axis=2)
    agg = u[:, i + d * n * w:i + d * n * w + d] < p.r
    if p.aggregation == "step":
        multi_ok = (covered & agg).all(axis=1)
    else:
        multi_ok = covered.all(axis=1) & agg[:, 0]
    return int(single_ok.sum()), int(multi_ok.sum())


def _partition(trials: int, block: int) -> list[tuple[int, int]]:
    return [(a, min(a + block, trials)) for a in range(0, trials, block)]


def count_successes(cfg: TrialConfig, jobs: int = 1, block: int = DEFAULT_BLOCK) -> tuple[int, int]:
    """Return ``(single_successes, multi_successes)`` over ``cfg.trials``."""
    parts = _partition(cfg.trials, block)
    if jobs <= 1 or len(parts) == 1:
        counts = [_count_block(cfg.params, cfg.seed, a, b) for a, b in parts]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(lambda ab: _count_block(cfg.params, cfg.seed, *ab), parts))
    return sum(c[0] for c in counts), sum(c[1] for c in counts)


def normal_halfwidth(p_hat: float, trials: int, sigmas: float = CI_SIGMAS) -> float:
    return sigmas * math.sqrt(p_hat * (1.0 - p_hat) / trials)


def clopper_pearson(successes: int, trials: int, confidence: float = CI_CONFIDENCE) -> tuple[float, float]:
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def interval(successes: int, trials: int, method: str = "auto") -> tuple[float, float]:
    """3-sigma interval for a binomial proportion.

    ``"normal"`` is the Wald interval p_hat +/- 3 sqrt(p_hat(1-p_hat)/n).
    ``"exact"`` is Clopper-Pearson at the same coverage.  ``"auto"`` uses
    the Wald interval when n p_hat (1 - p_hat) >= 9, i.e. whenever the
    interval stays inside [0, 1], and Clopper-Pearson otherwise, where the
    Wald width collapses towards zero.
    """
    p_hat = successes / trials
    if method == "auto":
        method = "normal" if trials * p_hat * (1.0 - p_hat) >= CI_SIGMAS ** 2 else "exact"
    if method == "normal":
        h = normal_halfwidth(p_hat, trials)
        return p_hat - h, p_hat + h
    if method == "exact":
        return clopper_pearson(successes, trials)
    raise ParameterError(f"unknown CI method {method!r}")


def simulate(cfg: TrialConfig, jobs: int = 1) -> EmpiricalRates:
    single, multi = count_successes(cfg, jobs=jobs)
    n = cfg.trials
    return EmpiricalRates(
        single_hat=single / n,
        multi_hat=multi / n,
        trials=n,
        single_successes=single,
        multi_successes=multi,
        ci_halfwidth_single=normal_halfwidth(single / n, n),
        ci_halfwidth_multi=normal_halfwidth(multi / n, n),
    )


def simulate_single(cfg: TrialConfig, jobs: int = 1) -> float:
    """Fraction of trials in which one agent clears all d*w micro-operations."""
    return simulate(cfg, jobs).single_hat


def simulate_multi(cfg: TrialConfig, jobs: int = 1) -> float:
    """Fraction of trials in which the debate (coverage + aggregator) succeeds."""
    return simulate(cfg, jobs).multi_hat


def compare_rates(
    rates: EmpiricalRates,
    params: ModelParams,
    seed: int = 0,
    ci_method: str = "auto",
) -> ComparisonReport:
    """Compare empirical rates with the closed forms for ``params``."""
    s_exp = theory.single_success(params)
    m_exp = theory.multi_success(params)
    s_int = interval(rates.single_successes, rates.trials, ci_method)
    m_int = interval(rates.multi_successes, rates.trials, ci_method)
    emp_gain = None
    if rates.single_hat > 0:
        emp_gain = (rates.multi_hat - rates.single_hat) / rates.single_hat
    return ComparisonReport(
        params=params.to_dict(),
        trials=rates.trials,
        seed=int(seed),
        ci_method=ci_method,
        single_hat=rates.single_hat,
        multi_hat=rates.multi_hat,
        single_expected=s_exp,
        multi_expected=m_exp,
        single_error=abs(rates.single_hat - s_exp),
        multi_error=abs(rates.multi_hat - m_exp),
        single_interval=s_int,
        multi_interval=m_int,
        single_pass=s_int[0] <= s_exp <= s_int[1],
        multi_pass=m_int[0] <= m_exp <= m_int[1],
        closed_form_gain=theory.performance_gain(params).gain,
        empirical_gain=emp_gain,
    )


def compare_to_closed_form(cfg: TrialConfig, ci_method: str = "auto", jobs: int = 1) -> ComparisonReport:
    return compare_rates(simulate(cfg, jobs), cfg.params, cfg.seed, ci_method)


def agreement_suite(
    grid: Iterable[ModelParams],
    trials: int,
    seed: int,
    repeats: int = 1,
    ci_method: str = "auto",
    jobs: int = 1,
) -> dict:
    """Run :func:`compare_to_closed_form` over a grid of parameters.

    Cell ``i`` of repeat ``k`` uses seed ``derive_seed(seed, "simkit", k, i)``.
    A cell agrees when both its single and multi rates fall inside their
    intervals.
    """
    reports = []
    for k in range(repeats):
        for i, params in enumerate(grid if isinstance(grid, list) else list(grid)):
            cfg = TrialConfig(params, trials, derive_seed(seed, "simkit", k, i))
            reports.append(compare_to_closed_form(cfg, ci_method=ci_method, jobs=jobs))
    agree = sum(r.passed for r in reports)
    return {
        "cells": len(reports),
        "agreeing": agree,
        "fraction": agree / len(reports) if reports else 1.0,
        "reports": reports,
    }


def canonical_grid(d: int = 2, n_agents: int = 3) -> list[ModelParams]:
    """The 3 x 3 x 2 grid q x w x r used by ``dwlab verify``."""
    return [
        ModelParams(q=q, w=w, d=d, n_agents=n_agents, r=r)
        for q in (0.5, 0.7, 0.9)
        for w in (1, 2, 3)
        for r in (0.8, 1.0)
    ]


def acceptance_grid() -> list[ModelParams]:
    """q x w x d x N x r grid of 162 cells used for closed-form fidelity."""
    return [
        ModelParams(q=q, w=w, d=d, n_agents=n, r=r)
        for q in (0.5, 0.7, 0.9)
        for w in (1, 2, 3)
        for d in (1, 2, 4)
        for n in (2, 3, 5)
        for r in (0.8, 1.0)
    ]
