"""Martingale concentration bounds for click counts.

Kato's inequality bounds the sum of conditional expectations of ``k``
[0,1]-valued random variables around their observed sum ``gamma``. The linear
parameter ``a`` and offset ``b`` are chosen in closed form to minimise the
deviation ``[b + a(2 gamma/k - 1)] sqrt(k)`` at a fixed failure probability.

The core routines accept numpy arrays so the coverage suite can evaluate
many trials at once; the public wrappers return :class:`ConcentrationBound`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)


class Direction(str, enum.Enum):
    UPPER_ON_EXPECTED = "upper_on_expected"
    LOWER_ON_EXPECTED = "lower_on_expected"
    UPPER_ON_OBSERVED = "upper_on_observed"
    LOWER_ON_OBSERVED = "lower_on_observed"


@dataclass(frozen=True)
class ConcentrationBound:
    direction: Direction
    a: float
    b: float
    deviation: float
    failure_prob: float
    bound_value: float


def _check(k, eps):
    if not k >= 1:
        raise ValueError("number of trials k must be ≥ 1")
    if not 0.0 < eps < 1.0:
        raise ValueError("failure probability must lie in (0,1)")


def kato_coefficients(gamma, k, eps, upper=True):
    """Optimal Kato parameters ``(a, b, deviation)``.

    ``upper=True`` gives the bound on the expected sum from above (deviation
    added to ``gamma``), ``upper=False`` the bound from below. Works
    element-wise on arrays of ``gamma``.
    """
    gamma = np.asarray(gamma, dtype=float)
    k = float(k)
    lg = math.log(eps)
    s = 1.0 if upper else -1.0
    rk = math.sqrt(k)

    g = gamma * (k - gamma)
    d = 9.0 * g - 2.0 * k * lg
    if np.any(d <= 0):
        raise ArithmeticError("negative discriminant in Kato coefficients")
    # sqrt(-k^2 ln(eps) d) with k^2 pulled out of the root
    root = k * np.sqrt(-lg * d)
    num = 72.0 * rk * g * lg - 16.0 * k * rk * lg * lg + s * 9.0 * SQRT2 * (k - 2.0 * gamma) * root
    a = s * 3.0 * num / (4.0 * (9.0 * k - 8.0 * lg) * d)

    # b^2 - a^2 = -ln(eps) (4a + 3 s sqrt k)^2 / (18 k), from the failure constraint
    gap = -lg * (4.0 * a + s * 3.0 * rk) ** 2 / (18.0 * k)
    abs_a = np.abs(a)
    b = np.sqrt(a * a + gap)
    # b + a(2g/k - 1) split into non-negative pieces to avoid cancellation
    slack = gap / (b + abs_a)
    frac = np.where(a >= 0, 2.0 * gamma / k, 2.0 * (k - gamma) / k)
    deviation = (slack + abs_a * frac) * rk
    if deviation.ndim == 0:
        return float(a), float(b), float(deviation)
    return a, b, deviation


def kato_upper_expected(gamma_k, k, eps) -> ConcentrationBound:
    """Upper bound on the expected sum given the observed count ``gamma_k``.

    The returned ``bound_value`` is ``gamma_k + deviation`` clamped to ``k``.
    """
    _check(k, eps)
    if not 0 <= gamma_k <= k:
        raise ValueError("observed count must lie in [0, k]")
    a, b, dev = kato_coefficients(gamma_k, k, eps, upper=True)
    return ConcentrationBound(Direction.UPPER_ON_EXPECTED, a, b, dev, eps,
                              min(gamma_k + dev, float(k)))


def kato_lower_expected(gamma_k, k, eps) -> ConcentrationBound:
    """Lower bound on the expected sum, clamped at 0."""
    _check(k, eps)
    if not 0 <= gamma_k <= k:
        raise ValueError("observed count must lie in [0, k]")
    a, b, dev = kato_coefficients(gamma_k, k, eps, upper=False)
    return ConcentrationBound(Direction.LOWER_ON_EXPECTED, a, b, dev, eps,
                              max(gamma_k - dev, 0.0))


def hoeffding_deviation(k, eps) -> float:
    """The ``a = 0`` Kato deviation ``sqrt(k ln(1/eps) / 2)``."""
    _check(k, eps)
    return math.sqrt(0.5 * k * -math.log(eps))


def kato_observed_bound(expected_sum, k, eps, upper=True) -> ConcentrationBound:
    """Bound an observed count from its expected value (``a = 0`` form)."""
    _check(k, eps)
    if not expected_sum >= 0:
        raise ValueError("expected sum must be non-negative")
    dev = hoeffding_deviation(k, eps)
    b = dev / math.sqrt(k)
    if upper:
        return ConcentrationBound(Direction.UPPER_ON_OBSERVED, 0.0, b, dev, eps,
                                  expected_sum + dev)
    return ConcentrationBound(Direction.LOWER_ON_OBSERVED, 0.0, b, dev, eps,
                              max(expected_sum - dev, 0.0))


def azuma_deviation(k, eps) -> float:
    """One-sided Azuma-Hoeffding deviation for unit-bounded martingale differences."""
    _check(k, eps)
    return math.sqrt(2.0 * k * -math.log(eps))
