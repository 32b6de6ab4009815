"""Coverage oracles for the sampling rules.

Exact routes
    :func:`exact_walk_coverage` propagates the probability mass of the
    rectangular random walk trial by trial and collects every exit state.
    :func:`exact_fixed_coverage` sums binomial probabilities.
Empirical route
    :func:`empirical_coverage` replays seeded synthetic runs and attaches a
    Wilson interval, so the exact routes can be cross-checked by simulation.

Criterion events are decided with rational arithmetic on ``(successes, m)``:
``|S - p m| < alpha m`` (absolute) and ``|S - p m| < beta p m`` (relative).
Float inputs are read at their shortest decimal representation, so
``p=0.3`` means exactly ``3/10``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .bounds import ErrorSpec, Plan, inverse_binomial_threshold, strict_threshold
from .engine import batch_walk, derive_seeds

DEFAULT_STATE_BUDGET = 10**8
STATE_BUDGET_ENV = "TIBS_STATE_BUDGET"
WILSON_LEVEL = 0.99

# Float decisions closer than this (relative to m) to a criterion boundary
# are re-decided exactly.
_FLOAT_GUARD = 1e-9


class CriterionMode(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"
    MIXED = "mixed"


class StateBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class CriterionSpec:
    alpha: float | Fraction | None
    beta: float | Fraction | None
    mode: CriterionMode = CriterionMode.MIXED

    def __post_init__(self) -> None:
        mode = CriterionMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode in (CriterionMode.ABSOLUTE, CriterionMode.MIXED):
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"{mode.value} criterion needs alpha > 0, got {self.alpha!r}")
        if mode in (CriterionMode.RELATIVE, CriterionMode.MIXED):
            if self.beta is None or not self.beta > 0:
                raise ValueError(f"{mode.value} criterion needs beta > 0, got {self.beta!r}")

    @classmethod
    def mixed(cls, spec: ErrorSpec) -> "CriterionSpec":
        return cls(spec.alpha, spec.beta, CriterionMode.MIXED)

    @property
    def uses_absolute(self) -> bool:
        return self.mode is not CriterionMode.RELATIVE

    @property
    def uses_relative(self) -> bool:
        return self.mode is not CriterionMode.ABSOLUTE

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "alpha": None if self.alpha is None else float(self.alpha),
            "beta": None if self.beta is None else float(self.beta),
        }


def as_rational(x: float | int | Fraction) -> Fraction:
    """Exact rational for ``x``; floats are taken at their shortest repr."""
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _exact_verdict(successes: int, m: int, p: Fraction, crit: CriterionSpec) -> tuple[bool, bool]:
    """``(holds, on_boundary)`` for one state in exact arithmetic."""
    dev = abs(successes - p * m)
    holds = False
    tie = False
    if crit.uses_absolute:
        margin = as_rational(crit.alpha) * m
        holds |= dev < margin
        tie |= dev == margin
    if crit.uses_relative:
        margin = as_rational(crit.beta) * p * m
        holds |= dev < margin
        tie |= dev == margin
    return holds, tie and not holds


def criterion_holds(successes: int, m: int, p_true: float | Fraction, crit: CriterionSpec) -> bool:
    """Whether the estimate ``successes/m`` meets ``crit`` for true value ``p_true``."""
    if m < 1 or not 0 <= successes <= m:
        raise ValueError(f"need 0 <= successes <= m and m >= 1, got ({successes}, {m})")
    return _exact_verdict(int(successes), int(m), as_rational(p_true), crit)[0]


def criterion_mask(
    successes: np.ndarray, m: np.ndarray, p_true: float | Fraction, crit: CriterionSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`criterion_holds`.

    Returns ``(holds, on_boundary)`` boolean arrays. States whose float margin
    is within a small guard band are re-decided with exact rationals, so the
    result equals the scalar predicate everywhere.
    """
    s = np.asarray(successes, dtype=np.int64)
    mm = np.asarray(m, dtype=np.int64)
    p = float(p_true)
    dev = np.abs(s - p * mm)
    holds = np.zeros(s.shape, dtype=bool)
    unsure = np.zeros(s.shape, dtype=bool)
    guard = _FLOAT_GUARD * np.maximum(mm, 1)
    margins = []
    if crit.uses_absolute:
        margins.append(float(crit.alpha) * mm)
    if crit.uses_relative:
        margins.append(float(crit.beta) * p * mm)
    for margin in margins:
        gap = margin - dev
        holds |= gap > guard
        unsure |= np.abs(gap) <= guard
    unsure &= ~holds
    boundary = np.zeros(s.shape, dtype=bool)
    if unsure.any():
        pr = as_rational(p_true)
        for idx in zip(*np.nonzero(unsure)):
            h, tie = _exact_verdict(int(s[idx]), int(mm[idx]), pr, crit)
            holds[idx] = h
            boundary[idx] = tie
    return holds, boundary


class Method(str, Enum):
    EXACT_DP = "exact_dp"
    EXACT_BINOMIAL = "exact_binomial"
    EMPIRICAL = "empirical"


@dataclass
class CoverageReport:
    """Coverage of a sampling rule at one true probability.

    The exit distribution is held as parallel arrays ``exit_m``, ``exit_s``,
    ``exit_prob``; :attr:`exit_distribution` exposes it as a mapping.
    For empirical reports the probabilities are observed frequencies and
    ``ci_low``/``ci_high`` bound the coverage at :data:`WILSON_LEVEL`.
    """

    p_true: float
    coverage: float
    expected_m: float
    method: Method
    n_max: int
    k_threshold: int | None
    criterion: CriterionSpec
    exit_m: np.ndarray = field(repr=False)
    exit_s: np.ndarray = field(repr=False)
    exit_prob: np.ndarray = field(repr=False)
    boundary_mass: float = 0.0
    truncated_mass: float = 0.0
    replications: int | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    m_std_error: float | None = None
    # relation the rule guarantees against 1 - delta; inverse binomial only promises >=
    guarantee: str = ">"

    @property
    def exit_distribution(self) -> dict[tuple[int, int], float]:
        return {
            (int(a), int(b)): float(c)
            for a, b, c in zip(self.exit_m, self.exit_s, self.exit_prob)
        }

    def as_dict(self) -> dict:
        out = {
            "p_true": self.p_true,
            "coverage": self.coverage,
            "expected_m": self.expected_m,
            "method": self.method.value,
            "n_max": self.n_max,
            "k_threshold": self.k_threshold,
            "criterion": self.criterion.as_dict(),
            "boundary_mass": self.boundary_mass,
            "guarantee": self.guarantee,
        }
        if self.truncated_mass:
            out["truncated_mass"] = self.truncated_mass
        if self.method is Method.EMPIRICAL:
            out.update(
                replications=self.replications,
                ci_low=self.ci_low,
                ci_high=self.ci_high,
                m_std_error=self.m_std_error,
            )
        return out


def state_budget() -> int:
    raw = os.environ.get(STATE_BUDGET_ENV)
    return DEFAULT_STATE_BUDGET if raw is None else int(raw)


def _check_p(p_true: float) -> None:
    if not 0 < p_true < 1:
        raise ValueError(f"p_true must lie in (0, 1), got {p_true!r}")


def walk_exit_distribution(
    n_max: int, k_threshold: int, p: float, budget: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact law of the exit state ``(m, S_m)`` of the walk.

    ``alive[s]`` holds ``Pr{no exit yet, S_n = s}`` for ``s < k_threshold``.
    A height exit at trial ``n < n_max`` has mass ``alive_{n-1}[k-1] * p``;
    every path still alive after ``n_max - 1`` trials takes one more trial
    and exits by length with ``S`` equal to ``s`` or ``s + 1``.
    """
    _check_p(p)
    if n_max < 1 or k_threshold < 1:
        raise ValueError(f"need n_max, k_threshold >= 1, got {n_max}, {k_threshold}")
    k = min(k_threshold, n_max + 1)
    budget = state_budget() if budget is None else budget
    if n_max * k > budget:
        raise StateBudgetExceeded(
            f"walk needs {n_max * k} states, budget is {budget} (set {STATE_BUDGET_ENV})"
        )
    q = 1.0 - p
    alive = np.zeros(k)
    alive[0] = 1.0
    height = np.zeros(max(n_max - 1, 0))
    for n in range(1, n_max):
        height[n - 1] = alive[k - 1] * p
        nxt = alive * q
        nxt[1:] += alive[:-1] * p
        alive = nxt
    final = np.zeros(k + 1)
    final[:k] = alive * q
    final[1:] += alive * p
    final = final[: min(k_threshold, n_max) + 1]
    first_height = k_threshold  # no height exit is possible before k successes
    hm = np.arange(first_height, n_max, dtype=np.int64)
    ms = np.concatenate([hm, np.full(final.size, n_max, dtype=np.int64)])
    ss = np.concatenate([np.full(hm.size, k_threshold, dtype=np.int64), np.arange(final.size)])
    probs = np.concatenate([height[first_height - 1 :] if hm.size else [], final])
    return ms, ss, probs


def exact_walk_coverage(
    plan: Plan,
    p_true: float,
    crit: CriterionSpec | None = None,
    budget: int | None = None,
) -> CoverageReport:
    """Exact coverage and expected run length of :func:`~tibs.engine.run_truncated_ibs`."""
    crit = CriterionSpec.mixed(plan.spec) if crit is None else crit
    return _walk_report(plan.n_max, plan.k_threshold, p_true, crit, budget)


def _walk_report(
    n_max: int, k_threshold: int, p_true: float, crit: CriterionSpec, budget: int | None
) -> CoverageReport:
    ms, ss, probs = walk_exit_distribution(n_max, k_threshold, float(p_true), budget)
    holds, boundary = criterion_mask(ss, ms, p_true, crit)
    return CoverageReport(
        p_true=float(p_true),
        coverage=float(probs[holds].sum()),
        # n_max minus the shortfall of early exits; stays <= n_max under rounding
        expected_m=float(n_max - np.dot(n_max - ms, probs)),
        method=Method.EXACT_DP,
        n_max=n_max,
        k_threshold=k_threshold,
        criterion=crit,
        exit_m=ms,
        exit_s=ss,
        exit_prob=probs,
        boundary_mass=float(probs[boundary].sum()),
    )


def exact_ibs_coverage(
    beta: float, delta: float, p_true: float, cap: int, budget: int | None = None
) -> CoverageReport:
    """Exact relative-criterion coverage of capped inverse binomial sampling.

    ``truncated_mass`` is the probability of hitting the cap first; those
    runs are still scored on their ``S/cap`` estimate.
    """
    k = strict_threshold(inverse_binomial_threshold(beta, delta))
    crit = CriterionSpec(None, beta, CriterionMode.RELATIVE)
    report = _walk_report(cap, k, p_true, crit, budget)
    report.truncated_mass = float(report.exit_prob[report.exit_s < k].sum())
    report.guarantee = ">="
    return report


MAX_FIXED_N = 10**7


def exact_fixed_coverage(n: int, p_true: float, crit: CriterionSpec) -> CoverageReport:
    """Exact coverage of the fixed-size estimator ``S_n / n``."""
    if not 1 <= n <= MAX_FIXED_N:
        raise ValueError(f"n must lie in [1, {MAX_FIXED_N}], got {n}")
    _check_p(p_true)
    ks = np.arange(n + 1, dtype=np.int64)
    pmf = stats.binom.pmf(ks, n, float(p_true))
    ms = np.full(n + 1, n, dtype=np.int64)
    holds, boundary = criterion_mask(ks, ms, p_true, crit)
    return CoverageReport(
        p_true=float(p_true),
        coverage=float(pmf[holds].sum()),
        expected_m=float(n),
        method=Method.EXACT_BINOMIAL,
        n_max=n,
        k_threshold=None,
        criterion=crit,
        exit_m=ms,
        exit_s=ks,
        exit_prob=pmf,
        boundary_mass=float(pmf[boundary].sum()),
    )


def wilson_interval(hits: int, n: int, level: float = WILSON_LEVEL) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("need at least one observation")
    z = NormalDist().inv_cdf(0.5 + level / 2)
    phat = hits / n
    z2n = z * z / n
    center = (phat + z2n / 2) / (1 + z2n)
    half = z / (1 + z2n) * math.sqrt(phat * (1 - phat) / n + z2n / (4 * n))
    return max(0.0, center - half), min(1.0, center + half)


def _empirical_report(
    m: np.ndarray,
    s: np.ndarray,
    p_true: float,
    crit: CriterionSpec,
    n_max: int,
    k_threshold: int,
    track_truncation: bool = False,
) -> CoverageReport:
    r = m.size
    holds, boundary = criterion_mask(s, m, p_true, crit)
    hits = int(holds.sum())
    lo, hi = wilson_interval(hits, r)
    pairs, counts = np.unique(np.stack([m, s], axis=1), axis=0, return_counts=True)
    sd = float(m.std(ddof=1)) if r > 1 else 0.0
    return CoverageReport(
        p_true=float(p_true),
        coverage=hits / r,
        expected_m=float(m.mean()),
        method=Method.EMPIRICAL,
        n_max=n_max,
        k_threshold=k_threshold,
        criterion=crit,
        exit_m=pairs[:, 0],
        exit_s=pairs[:, 1],
        exit_prob=counts / r,
        boundary_mass=float(boundary.mean()),
        truncated_mass=float(np.mean(s < k_threshold)) if track_truncation else 0.0,
        replications=r,
        ci_low=lo,
        ci_high=hi,
        m_std_error=sd / math.sqrt(r),
    )


def empirical_coverage(
    plan: Plan,
    p_true: float,
    crit: CriterionSpec | None = None,
    replications: int = 10_000,
    master_seed: int = 0,
) -> CoverageReport:
    """Monte Carlo coverage of the walk from ``replications`` seeded runs.

    Replication ``i`` uses ``synthetic_source(p_true, derive_seed(master_seed, i))``,
    so the outcome does not depend on how the work is scheduled.
    """
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    crit = CriterionSpec.mixed(plan.spec) if crit is None else crit
    seeds = derive_seeds(master_seed, replications)
    m, s = batch_walk(float(p_true), seeds, plan.n_max, plan.k_threshold)
    return _empirical_report(m, s, p_true, crit, plan.n_max, plan.k_threshold)


def empirical_ibs_coverage(
    beta: float,
    delta: float,
    p_true: float,
    cap: int,
    replications: int = 10_000,
    master_seed: int = 0,
) -> CoverageReport:
    """Monte Carlo relative-criterion coverage of capped inverse binomial sampling."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    k = strict_threshold(inverse_binomial_threshold(beta, delta))
    crit = CriterionSpec(None, beta, CriterionMode.RELATIVE)
    seeds = derive_seeds(master_seed, replications)
    m, s = batch_walk(float(p_true), seeds, cap, k)
    report = _empirical_report(m, s, p_true, crit, cap, k, track_truncation=True)
    report.guarantee = ">="
    return report


def default_grid() -> list[float]:
    return [i / 100 for i in range(1, 100)]


def parse_grid(text: str) -> list[float]:
    """Parse ``"start:stop:step"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (Fraction(part) for part in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int((stop - start) / step) + 1
        values = [float(start + i * step) for i in range(count)]
    else:
        values = [float(part) for part in text.split(",") if part.strip()]
    for v in values:
        _check_p(v)
    if not values:
        raise ValueError("empty grid")
    return values


def coverage_sweep(
    plan: Plan,
    grid: Iterable[float] | None = None,
    crit: CriterionSpec | None = None,
    *,
    empirical: bool = False,
    replications: int = 10_000,
    master_seed: int = 0,
) -> list[CoverageReport]:
    grid = default_grid() if grid is None else list(grid)
    if empirical:
        return [empirical_coverage(plan, p, crit, replications, master_seed) for p in grid]
    return [exact_walk_coverage(plan, p, crit) for p in grid]


def min_coverage(reports: Sequence[CoverageReport]) -> CoverageReport:
    return min(reports, key=lambda r: r.coverage)
