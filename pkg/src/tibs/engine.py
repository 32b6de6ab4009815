"""Sequential sampling runtime.

Trial sources produce Bernoulli outcomes one at a time; the runners consume
them until their stopping rule fires and never read past that point.

The synthetic source is driven by SplitMix64 so that a ``(p_true, seed)`` pair
reproduces the same outcome stream on any platform and in any language:

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)
    u = (out >> 11) / 2**53                      # success iff u < p_true
"""

from __future__ import annotations

import logging
import subprocess
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .bounds import Plan, inverse_binomial_threshold, strict_threshold

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)

# Seconds to wait for an external simulator after closing its stdin.
KILL_GRACE_SECONDS = 5.0


class StopReason(str, Enum):
    LENGTH_EXIT = "length_exit"
    HEIGHT_EXIT = "height_exit"


class SourceError(RuntimeError):
    """A trial source failed; ``trials_consumed`` counts outcomes read before the failure."""

    def __init__(self, message: str, trials_consumed: int):
        super().__init__(f"{message} (after {trials_consumed} trials)")
        self.trials_consumed = trials_consumed


class TruncationWarning(UserWarning):
    """Inverse binomial sampling hit its safety cap before the success threshold."""


# ---------------------------------------------------------------------------
# SplitMix64
# ---------------------------------------------------------------------------


def splitmix64_mix(z: int) -> int:
    """SplitMix64 output finaliser applied to a 64-bit word."""
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Scalar SplitMix64 generator."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_mix(self.state)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) / _TWO53


def derive_seed(master_seed: int, index: int) -> int:
    """Per-replication seed: first SplitMix64 output from state ``master_seed + index``."""
    return splitmix64_mix((int(master_seed) + int(index) + GOLDEN_GAMMA) & MASK64)


def derive_seeds(master_seed: int, count: int) -> np.ndarray:
    """Vectorised :func:`derive_seed` for ``index = 0 .. count-1``."""
    state = np.uint64(int(master_seed) & MASK64) + np.arange(count, dtype=np.uint64)
    return _mix_array(state + np.uint64(GOLDEN_GAMMA))


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def success_cutoff(p_true: float) -> int:
    """Integer ``c`` such that ``(out >> 11) / 2**53 < p_true`` iff ``out >> 11 < c``."""
    # k / 2**53 < p  <=>  k < p * 2**53, exact in rationals.
    scaled = Fraction(p_true) * (1 << 53)
    c = scaled.numerator // scaled.denominator
    return c if c == scaled else c + 1


# ---------------------------------------------------------------------------
# Trial sources
# ---------------------------------------------------------------------------


class TrialSource(ABC):
    """A stream of Bernoulli outcomes, assumed independent and identically distributed."""

    descriptor: str = "source"

    def __init__(self) -> None:
        self.consumed = 0

    def next_trial(self) -> bool:
        outcome = self._draw()
        self.consumed += 1
        return outcome

    @abstractmethod
    def _draw(self) -> bool: ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SyntheticSource(TrialSource):
    def __init__(self, p_true: float, seed: int):
        if not 0 < p_true < 1:
            raise ValueError(f"p_true must lie in (0, 1), got {p_true!r}")
        if not 0 <= int(seed) <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        super().__init__()
        self.p_true = float(p_true)
        self.seed = int(seed)
        self._rng = SplitMix64(self.seed)
        self._cutoff = success_cutoff(self.p_true)
        self.descriptor = f"synthetic(p={self.p_true!r}, seed={self.seed})"

    def _draw(self) -> bool:
        return (self._rng.next_u64() >> 11) < self._cutoff


def synthetic_source(p_true: float, seed: int) -> SyntheticSource:
    return SyntheticSource(p_true, seed)


class SequenceSource(TrialSource):
    """Replays a fixed outcome sequence; raises :class:`SourceError` when it runs out."""

    def __init__(self, outcomes: Iterable[bool | int], descriptor: str = "sequence"):
        super().__init__()
        self._it = iter(outcomes)
        self.descriptor = descriptor

    def _draw(self) -> bool:
        try:
            return bool(next(self._it))
        except StopIteration:
            raise SourceError("sequence exhausted", self.consumed) from None


class ExternalSource(TrialSource):
    """Outcomes streamed by a child process, one ``0\\n`` or ``1\\n`` line per trial.

    The child must flush after every line. Any other byte sequence, or end of
    stream, is a protocol error. :meth:`close` closes the child's stdin, waits
    ``KILL_GRACE_SECONDS`` and then kills it.
    """

    def __init__(self, command: str, arguments: Sequence[str] = ()):
        super().__init__()
        argv = [command, *arguments]
        self.descriptor = "external(" + " ".join(argv) + ")"
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise SourceError(f"cannot start simulator {command!r}: {exc}", 0) from exc

    def _draw(self) -> bool:
        line = self._proc.stdout.readline()
        if line == b"1\n":
            return True
        if line == b"0\n":
            return False
        if not line:
            code = self._proc.poll()
            status = "still running" if code is None else f"exit status {code}"
            raise SourceError(f"simulator output ended prematurely ({status})", self.consumed)
        raise SourceError(f"malformed simulator output {line[:40]!r}", self.consumed)

    def close(self) -> None:
        proc = self._proc
        # closing stdout too makes a still-writing child fail with EPIPE
        for stream in (proc.stdin, proc.stdout):
            if stream is not None and not stream.closed:
                try:
                    stream.close()
                except OSError:
                    pass
        if proc.poll() is None:
            try:
                proc.wait(timeout=KILL_GRACE_SECONDS)
            except subprocess.TimeoutExpired:
                logger.warning("simulator still running %.0fs after stdin closed; killing it",
                               KILL_GRACE_SECONDS)
                proc.kill()
                proc.wait()


def external_source(command: str, arguments: Sequence[str] = ()) -> ExternalSource:
    return ExternalSource(command, arguments)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of one sequential run.

    ``(successes, m)`` is the exact estimate; ``p_hat`` is its float value.
    ``n_max`` is the largest trial count the rule allowed and ``k_threshold``
    the success count that triggers a height exit (``None`` for fixed-size runs).
    """

    m: int
    successes: int
    stop_reason: StopReason
    rule: str
    n_max: int
    k_threshold: int | None
    plan: Plan | None = None
    seed: int | None = None
    source: str = ""
    truncated: bool = False
    p_hat_exact: Fraction = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_hat_exact", Fraction(self.successes, self.m))

    @property
    def p_hat(self) -> float:
        return self.successes / self.m

    def as_dict(self) -> dict:
        out = {
            "rule": self.rule,
            "m": self.m,
            "successes": self.successes,
            "p_hat": self.p_hat,
            "stop_reason": self.stop_reason.value,
            "n_max": self.n_max,
            "k_threshold": self.k_threshold,
            "truncated": self.truncated,
            "seed": self.seed,
            "source": self.source,
        }
        if self.plan is not None:
            out["plan"] = self.plan.as_dict()
        return out


def _draw(source: TrialSource) -> bool:
    try:
        return source.next_trial()
    except SourceError:
        raise
    except (OSError, ValueError) as exc:
        raise SourceError(f"trial source failed: {exc}", source.consumed) from exc


def _seed_of(source: TrialSource) -> int | None:
    return getattr(source, "seed", None)


def _walk(source: TrialSource, n_max: int, k_threshold: int) -> tuple[int, int]:
    """Run until ``n >= n_max`` or ``S_n >= k_threshold``; return ``(m, S_m)``."""
    n = s = 0
    while True:
        n += 1
        s += _draw(source)
        if n >= n_max or s >= k_threshold:
            return n, s


def run_truncated_ibs(source: TrialSource, plan: Plan) -> EstimationResult:
    """Rectangular random walk: observe ``(n, S_n)`` until it leaves the box.

    A run that reaches ``k_threshold`` successes on trial ``n_max`` itself is
    recorded as a length exit; ``p_hat`` is the same either way.
    """
    m, s = _walk(source, plan.n_max, plan.k_threshold)
    reason = StopReason.HEIGHT_EXIT if m < plan.n_max else StopReason.LENGTH_EXIT
    return EstimationResult(
        m=m,
        successes=s,
        stop_reason=reason,
        rule="tibs",
        n_max=plan.n_max,
        k_threshold=plan.k_threshold,
        plan=plan,
        seed=_seed_of(source),
        source=source.descriptor,
    )


def run_fixed_size(source: TrialSource, n: int) -> EstimationResult:
    if n < 1:
        raise ValueError(f"sample size must be at least 1, got {n}")
    s = sum(_draw(source) for _ in range(n))
    return EstimationResult(
        m=n,
        successes=s,
        stop_reason=StopReason.LENGTH_EXIT,
        rule="fixed",
        n_max=n,
        k_threshold=None,
        seed=_seed_of(source),
        source=source.descriptor,
    )


def run_inverse_binomial(
    source: TrialSource, beta: float, delta: float, cap: int
) -> EstimationResult:
    """Sample until the success count exceeds the inverse binomial threshold.

    ``cap`` bounds the number of trials. Reaching it first yields a result
    with ``truncated=True`` and a :class:`TruncationWarning`.
    """
    if cap < 1:
        raise ValueError(f"cap must be at least 1, got {cap}")
    k = strict_threshold(inverse_binomial_threshold(beta, delta))
    m, s = _walk(source, cap, k)
    truncated = s < k
    if truncated:
        warnings.warn(
            f"inverse binomial sampling truncated at cap={cap} with {s} of {k} successes",
            TruncationWarning,
            stacklevel=2,
        )
    return EstimationResult(
        m=m,
        successes=s,
        stop_reason=StopReason.LENGTH_EXIT if truncated else StopReason.HEIGHT_EXIT,
        rule="ibs",
        n_max=cap,
        k_threshold=k,
        seed=_seed_of(source),
        source=source.descriptor,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Batched synthetic replications
# ---------------------------------------------------------------------------


def batch_walk(
    p_true: float,
    seeds: np.ndarray,
    n_max: int,
    k_threshold: int,
    block: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one walk per seed on synthetic sources, vectorised over seeds.

    Returns ``(m, successes)`` arrays, trial-for-trial identical to calling
    :func:`run_truncated_ibs` (or the inverse binomial runner with
    ``n_max=cap``) on ``synthetic_source(p_true, seed)`` for each seed.
    """
    if not 0 < p_true < 1:
        raise ValueError(f"p_true must lie in (0, 1), got {p_true!r}")
    cutoff = np.uint64(success_cutoff(p_true))
    seeds = np.asarray(seeds, dtype=np.uint64)
    r = seeds.shape[0]
    m = np.zeros(r, dtype=np.int64)
    s = np.zeros(r, dtype=np.int64)
    live = np.arange(r)
    state = seeds.copy()
    steps = np.arange(1, block + 1, dtype=np.uint64)
    gamma = np.uint64(GOLDEN_GAMMA)
    n0 = 0
    while live.size and n0 < n_max:
        width = min(block, n_max - n0)
        base = state[live][:, None]
        # states for trials n0+1 .. n0+width
        raw = _mix_array(base + steps[:width][None, :] * gamma)
        hits = ((raw >> np.uint64(11)) < cutoff).astype(np.int64)
        path = s[live][:, None] + np.cumsum(hits, axis=1)
        done_height = path >= k_threshold
        any_height = done_height.any(axis=1)
        first = np.where(any_height, done_height.argmax(axis=1), width - 1)
        stops = any_height | (n0 + width >= n_max)
        rows = live[stops]
        m[rows] = n0 + first[stops] + 1
        s[rows] = path[stops, first[stops]]
        keep = ~stops
        s[live[keep]] = path[keep, -1]
        state[live] = state[live] + np.uint64((width * GOLDEN_GAMMA) & MASK64)
        live = live[keep]
        n0 += width
    return m, s
