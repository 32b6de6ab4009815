"""Closed-form planning math for truncated inverse binomial sampling.

Everything here is a pure function of its arguments. The three sample-size
bounds (``exact``, ``simplified``, ``loose``) give the horizontal extent ``A``
of the stopping box; the vertical extent is always ``B = (alpha/beta + alpha) * A``.
Baselines (Chernoff-Hoeffding, normal approximation) and the worst-case gain
ratio are provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from enum import Enum
from statistics import NormalDist

__all__ = [
    "BoundVariant",
    "ErrorSpec",
    "InvalidSpecError",
    "Plan",
    "bound_constant",
    "bound_exact",
    "bound_for",
    "bound_loose",
    "bound_simplified",
    "chernoff_hoeffding_n",
    "clt_approx_n",
    "gain_ratio",
    "inverse_binomial_threshold",
    "log_gain_constant",
    "make_plan",
    "relative_entropy",
    "strict_threshold",
]

# Largest value chernoff_hoeffding_n may return (unsigned 128-bit range).
MAX_SAMPLE_SIZE = 2**128 - 1

# |t| below which phi(t) is summed as a power series.
_PHI_SERIES_CUTOFF = 0.1


class InvalidSpecError(ValueError):
    """Raised when error-margin parameters violate a validity constraint."""


class BoundVariant(str, Enum):
    EXACT = "exact"
    SIMPLIFIED = "simplified"
    LOOSE = "loose"


@dataclass(frozen=True)
class ErrorSpec:
    """Accuracy contract: absolute margin, relative margin, confidence parameter.

    Construction validates ``0 < alpha < beta``, ``alpha/beta + alpha/2 <= 1/2``
    and ``0 < delta < 1``; violations raise :class:`InvalidSpecError` naming the
    broken constraint.
    """

    alpha: float
    beta: float
    delta: float

    def __post_init__(self) -> None:
        a, b, d = self.alpha, self.beta, self.delta
        for name, value in (("alpha", a), ("beta", b), ("delta", d)):
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidSpecError(f"{name} must be a finite real number, got {value!r}")
        if not 0 < a < 1:
            raise InvalidSpecError(f"alpha must lie in (0, 1), got {a!r}")
        if not 0 < d < 1:
            raise InvalidSpecError(f"delta must lie in (0, 1), got {d!r}")
        if not a < b:
            raise InvalidSpecError(f"need 0 < alpha < beta, got alpha={a!r} >= beta={b!r}")
        if a / b + a / 2 > 0.5:
            raise InvalidSpecError(
                f"need alpha/beta + alpha/2 <= 1/2, got {a / b + a / 2!r} "
                f"(alpha={a!r}, beta={b!r})"
            )

    @property
    def width_ratio(self) -> float:
        """Slope ``alpha/beta + alpha`` of the box diagonal."""
        return self.alpha / self.beta + self.alpha


@dataclass(frozen=True)
class Plan:
    """Sampling budget derived from an :class:`ErrorSpec`.

    ``n_max`` and ``k_threshold`` are the integer forms of the strict exit
    conditions ``n > length`` and ``S_n > width``: the walk stops at the first
    ``n`` with ``n >= n_max`` or ``S_n >= k_threshold``.
    """

    spec: ErrorSpec
    a_bound: float
    b_bound: float
    length: float
    width: float
    n_max: int
    k_threshold: int
    variant: BoundVariant
    overridden: bool = False

    def as_dict(self) -> dict:
        return {
            "alpha": self.spec.alpha,
            "beta": self.spec.beta,
            "delta": self.spec.delta,
            "variant": self.variant.value,
            "a_bound": self.a_bound,
            "b_bound": self.b_bound,
            "length": self.length,
            "width": self.width,
            "n_max": self.n_max,
            "k_threshold": self.k_threshold,
            "overridden": self.overridden,
        }


def _phi(t: float) -> float:
    """``(1+t) ln(1+t) - t`` for ``t > -1``, without cancellation near 0."""
    if t == -1.0:
        return 1.0
    if abs(t) >= _PHI_SERIES_CUTOFF:
        return (1.0 + t) * math.log1p(t) - t
    # sum_{k>=2} (-1)^k t^k / (k(k-1))
    total = 0.0
    power = t * t
    k = 2
    while True:
        term = power / (k * (k - 1))
        total += term if k % 2 == 0 else -term
        if abs(term) < 1e-18 * abs(total):
            return total
        power *= t
        k += 1


def relative_entropy(u: float, v: float) -> float:
    """Bernoulli Kullback-Leibler divergence ``u ln(u/v) + (1-u) ln((1-u)/(1-v))``.

    Evaluated as ``v phi((u-v)/v) + (1-v) phi((v-u)/(1-v))`` with
    ``phi(t) = (1+t) ln(1+t) - t``; both terms are nonnegative so nothing
    cancels when ``u`` is close to ``v``.
    """
    if not (0 < u < 1 and 0 < v < 1):
        raise ValueError(f"relative_entropy needs u, v in (0, 1), got u={u!r}, v={v!r}")
    if u == v:
        return 0.0
    d = u - v
    return v * _phi(d / v) + (1.0 - v) * _phi(-d / (1.0 - v))


def log_gain_constant(beta: float) -> float:
    """``(1+beta) ln(1+beta) - beta``, the denominator shared by most bounds."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    return _phi(beta)


def bound_constant(beta: float) -> float:
    """``C(beta) = beta^2 / ((1+beta) ln(1+beta) - beta)``.

    Increasing in ``beta``; ``C(1) = 1/(ln 4 - 1)`` is the constant of the
    loose bound, so ``bound_simplified = C(beta) ln(2/delta) / (alpha beta)``.
    """
    return beta * beta / log_gain_constant(beta)


def bound_exact(spec: ErrorSpec) -> float:
    """Sharpest sample-size bound ``A``.

    ``A = beta ln(2/delta) / [alpha (1+beta) ln(1+beta)
    + (beta - alpha - alpha beta) ln(1 - alpha beta / (beta - alpha))]``.

    The bracket is rewritten as ``alpha phi(beta) + (beta - alpha) phi(-x)``
    with ``x = alpha beta / (beta - alpha)``, which is the same quantity with no
    subtractive cancellation for small ``alpha`` or ``beta``.
    """
    a, b = spec.alpha, spec.beta
    x = a * b / (b - a)
    denominator = a * _phi(b) + (b - a) * _phi(-x)
    return b * math.log(2.0 / spec.delta) / denominator


def bound_simplified(spec: ErrorSpec) -> float:
    """``A = beta / ((1+beta) ln(1+beta) - beta) * ln(2/delta) / alpha``."""
    return spec.beta / _phi(spec.beta) * math.log(2.0 / spec.delta) / spec.alpha


def bound_loose(spec: ErrorSpec) -> float:
    """``A = ln(2/delta) / ((ln 4 - 1) alpha beta)``; only valid for ``beta < 1``."""
    if not spec.beta < 1:
        raise InvalidSpecError(f"loose bound requires beta < 1, got beta={spec.beta!r}")
    return math.log(2.0 / spec.delta) / ((math.log(4.0) - 1.0) * spec.alpha * spec.beta)


_BOUNDS = {
    BoundVariant.EXACT: bound_exact,
    BoundVariant.SIMPLIFIED: bound_simplified,
    BoundVariant.LOOSE: bound_loose,
}


def bound_for(spec: ErrorSpec, variant: BoundVariant | str) -> float:
    return _BOUNDS[BoundVariant(variant)](spec)


def strict_threshold(x: float) -> int:
    """Smallest integer strictly greater than ``x`` (for ``x >= 0``)."""
    if not (x >= 0 and math.isfinite(x)):
        raise ValueError(f"threshold must be finite and nonnegative, got {x!r}")
    return math.floor(x) + 1


def make_plan(
    spec: ErrorSpec,
    variant: BoundVariant | str = BoundVariant.SIMPLIFIED,
    *,
    length: float | None = None,
    width: float | None = None,
) -> Plan:
    """Build the stopping box for ``spec``.

    By default ``length = A`` and ``width = (alpha/beta + alpha) * length``.
    Passing ``length`` or ``width`` overrides the budget; such plans carry
    ``overridden=True`` and may fall below the guaranteed sizes (use only to
    exercise the verifier).
    """
    variant = BoundVariant(variant)
    a_bound = bound_for(spec, variant)
    b_bound = spec.width_ratio * a_bound
    overridden = length is not None or width is not None
    L = a_bound if length is None else float(length)
    W = spec.width_ratio * L if width is None else float(width)
    if not (L > 0 and W > 0):
        raise ValueError(f"length and width must be positive, got {L!r}, {W!r}")
    return Plan(
        spec=spec,
        a_bound=a_bound,
        b_bound=b_bound,
        length=L,
        width=W,
        n_max=strict_threshold(L),
        k_threshold=strict_threshold(W),
        variant=variant,
        overridden=overridden,
    )


def _check_unit(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")


def chernoff_hoeffding_n(alpha: float, delta: float) -> int:
    """Minimal integer ``n`` with ``n > ln(2/delta) / (2 alpha^2)``.

    The inputs are taken at their shortest decimal representation and the
    quotient is evaluated with 60 significant digits, so the ceiling is exact
    well past the 15-digit sizes that arise for ``alpha = 1e-7``.
    """
    _check_unit("alpha", alpha)
    _check_unit("delta", delta)
    with localcontext() as ctx:
        ctx.prec = 60
        a = Decimal(repr(float(alpha)))
        d = Decimal(repr(float(delta)))
        x = (Decimal(2) / d).ln() / (2 * a * a)
        n = int(x.to_integral_value(rounding="ROUND_FLOOR")) + 1
    if n > MAX_SAMPLE_SIZE:
        raise OverflowError(f"Chernoff-Hoeffding sample size {n} exceeds 128-bit range")
    return n


def normal_upper_quantile(tail: float) -> float:
    """``z`` with ``P(Z > z) = tail`` for a standard normal ``Z``.

    Uses :meth:`statistics.NormalDist.inv_cdf`, which implements Wichura's
    AS 241 (PPND16) rational approximation, good to about 1e-16 relative.
    """
    return -NormalDist().inv_cdf(tail)


def clt_approx_n(alpha: float, delta: float) -> int:
    """Normal-approximation sample size ``round(Z^2 / (4 alpha^2))``, ``Z`` the upper ``delta/2`` quantile."""
    _check_unit("alpha", alpha)
    _check_unit("delta", delta)
    z = normal_upper_quantile(delta / 2.0)
    return round(z * z / (4.0 * alpha * alpha))


def inverse_binomial_threshold(beta: float, delta: float) -> float:
    """Success count that inverse binomial sampling must strictly exceed.

    ``(1+beta) ln(2/delta) / ((1+beta) ln(1+beta) - beta)``
    """
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"beta must be positive, got {beta!r}")
    _check_unit("delta", delta)
    return (1.0 + beta) * math.log(2.0 / delta) / _phi(beta)


def gain_ratio(spec: ErrorSpec) -> float:
    """Chernoff-Hoeffding size divided by the worst-case run length of the simplified plan."""
    plan = make_plan(spec, BoundVariant.SIMPLIFIED)
    return chernoff_hoeffding_n(spec.alpha, spec.delta) / plan.n_max
