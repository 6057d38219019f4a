"""Finite-key estimation pipeline.

observed decoy counts -> bounds on expected counts -> bounds on the X-basis
gains of ``|0_x>`` -> expected phase error rate -> observed phase error
bound -> key length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .channel import DECOYS, ClickCounts, expected_counts
from .concentration import (
    azuma_deviation,
    kato_coefficients,
    kato_observed_bound,
)
from .model import (
    ProtocolParams,
    SecurityBudget,
    binary_entropy,
    epsilon_budget,
    normalization_factors,
)

ENGINES = ("kato", "azuma", "none")
EP_MODES = ("consistent", "literal")


class EstimationError(ArithmeticError):
    """The estimation pipeline is undefined for the given counts."""


@dataclass(frozen=True)
class BoundedExpectations:
    """Bounds on expected decoy counts and the matching gains.

    ``n_upper[w] = (M0, M1)`` and ``n_lower[w]`` (M0 only) for
    ``w in ("aa", "00")``. Gains are the count bounds divided by the number of
    rounds the decoy was sent, clamped to [0, 1].
    """

    n_upper: dict[str, tuple[float, float]]
    n_lower: dict[str, float]
    q_upper: dict[str, tuple[float, float]]
    q_lower: dict[str, float]
    engine: str = "kato"
    deviations: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PhaseErrorBound:
    e_p_expected: float     # bound on the expected phase error rate
    deviation: float        # expected -> observed fluctuation, in counts
    e_p_upper: float        # clamped to [0, 0.5]
    aborted: bool


@dataclass(frozen=True)
class KeyRateResult:
    key_length: int
    rate_per_pulse: float
    e_p_upper: float
    e_z: float
    leak_ec: float
    aborted: bool
    n_z: float = 0.0
    trace: dict = field(default_factory=dict, compare=False)


def _upper(gamma, k, eps, engine):
    if engine == "none":
        return gamma, 0.0
    if engine == "azuma":
        dev = azuma_deviation(k, eps)
    else:
        dev = kato_coefficients(gamma, k, eps, upper=True)[2]
    return min(gamma + dev, k), dev


def _lower(gamma, k, eps, engine):
    if engine == "none":
        return gamma, 0.0
    if engine == "azuma":
        dev = azuma_deviation(k, eps)
    else:
        dev = kato_coefficients(gamma, k, eps, upper=False)[2]
    return max(gamma - dev, 0.0), dev


def bound_expected_counts(counts: ClickCounts, budget: SecurityBudget,
                          engine: str = "kato") -> BoundedExpectations:
    """Four upper and two lower bounds on expected decoy counts, each at ``eps1``.

    ``engine`` selects Kato's inequality, the Azuma baseline, or ``"none"``
    (no fluctuation; used for the asymptotic rate).
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown bound engine {engine!r}")
    eps = budget.eps1
    n_upper, n_lower, q_upper, q_lower, devs = {}, {}, {}, {}, {}
    for w in DECOYS:
        k = counts.n_sent[w]
        if not k >= 1:
            raise EstimationError(f"decoy {w} was never sent")
        ups = []
        for i in (0, 1):
            gamma = min(max(float(counts.n_mon[w][i]), 0.0), float(k))
            value, devs[f"{w}_M{i}_upper"] = _upper(gamma, k, eps, engine)
            ups.append(value)
        gamma0 = min(max(float(counts.n_mon[w][0]), 0.0), float(k))
        n_lower[w], devs[f"{w}_M0_lower"] = _lower(gamma0, k, eps, engine)
        n_upper[w] = (ups[0], ups[1])
        q_upper[w] = tuple(min(max(u / k, 0.0), 1.0) for u in ups)
        q_lower[w] = min(max(n_lower[w] / k, 0.0), 1.0)
    return BoundedExpectations(n_upper, n_lower, q_upper, q_lower, engine, devs)


def phase_gain_bounds(be: BoundedExpectations, mu: float) -> tuple[float, float]:
    """Upper bound on the M1 gain and lower bound on the M0 gain of ``|0_x>``.

    Returns ``(q0x_m1_upper, q0x_m0_lower)``, clamped to [0, 1].
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    n_plus, n_minus = normalization_factors(mu)
    em, eh = math.exp(mu), math.exp(0.5 * mu)

    s_aa1 = math.sqrt(be.q_upper["aa"][1])
    s_001 = math.sqrt(be.q_upper["00"][1])
    upper = ((eh * s_aa1 + s_001 / eh) ** 2 / n_plus
             + n_minus / n_plus * (em * n_minus / 4.0 + em * s_aa1 + s_001))

    # lower-bound gains in the linear terms, upper-bound gains in the
    # subtracted square-root terms
    s_aa0 = math.sqrt(be.q_upper["aa"][0])
    s_000 = math.sqrt(be.q_upper["00"][0])
    lower = ((em * be.q_lower["aa"] + be.q_lower["00"] / em - 2.0 * s_000 * s_aa0) / n_plus
             - n_minus / n_plus * (em * s_aa0 + s_000))
    return min(upper, 1.0), max(lower, 0.0)


def expected_phase_error(counts: ClickCounts, q0x_m1_upper: float, q0x_m0_lower: float,
                         mu: float) -> float:
    """Phase error rate bound in the expected-value case (not clamped).

    Signal-state gains enter as observed ratios ``n_mon / n_sent``.
    """
    n_plus, _ = normalization_factors(mu)
    g = counts.signal_gains()
    q0z, q1z = g["0a"], g["a0"]
    den = 2.0 * (q0z[0] + q0z[1] + q1z[0] + q1z[1])
    if den <= 0:
        raise EstimationError("no monitoring-line clicks on signal states")
    return (n_plus * (q0x_m1_upper - q0x_m0_lower) + 2.0 * (q0z[0] + q1z[0])) / den


def phase_error_upper(counts: ClickCounts, be_phase: tuple[float, float], mu: float,
                      budget: SecurityBudget, mode: str = "consistent",
                      finite: bool = True) -> PhaseErrorBound:
    """Upper bound on the observed phase error rate among the ``n_z`` sifted bits.

    ``mode="consistent"`` scales the expected rate by ``n_z`` before adding the
    fluctuation over ``n_z`` trials; ``"literal"`` scales by ``N``.
    """
    if mode not in EP_MODES:
        raise ValueError(f"unknown phase-error mode {mode!r}")
    n_z = counts.n_z
    if not n_z >= 1:
        raise EstimationError("fewer than one sifted key bit")
    ep_star = max(expected_phase_error(counts, *be_phase, mu), 0.0)
    scale = n_z if mode == "consistent" else counts.n_rounds
    expected_np = scale * ep_star
    if finite:
        obs = kato_observed_bound(expected_np, n_z, budget.eps2, upper=True)
        n_p, dev = obs.bound_value, obs.deviation
    else:
        n_p, dev = expected_np, 0.0
    ep = n_p / n_z
    if ep > 0.5:
        return PhaseErrorBound(ep_star, dev, 0.5, True)
    return PhaseErrorBound(ep_star, dev, ep, False)


def key_length(n_z, e_p_upper: float, e_z: float, budget: SecurityBudget, f_ec: float,
               n_rounds: int | None = None) -> KeyRateResult:
    """Composable key length, floored and clamped at 0."""
    if n_z < 0:
        raise ValueError("n_z must be non-negative")
    for name, v in (("e_p_upper", e_p_upper), ("e_z", e_z)):
        if not 0.0 <= v <= 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5]")
    leak = f_ec * n_z * binary_entropy(e_z)
    penalty = math.log2(2.0 / budget.eps_cor) + 2.0 * math.log2(1.0 / (2.0 * budget.eps0))
    raw = n_z * (1.0 - binary_entropy(e_p_upper)) - leak - penalty
    length = math.floor(raw) if raw >= 1 else 0
    rate = length / (2.0 * n_rounds) if n_rounds else 0.0
    return KeyRateResult(length, rate, e_p_upper, e_z, leak, length <= 0, n_z,
                         {"raw_length": raw, "penalty_bits": penalty})


def _secret_margin(n_z, pe: PhaseErrorBound, e_z, budget, f_ec, finite=True) -> float:
    """Key length per sifted bit before flooring, continued past the aborts.

    Positive exactly when a key can be extracted. Used to rank aborted
    parameter points and as a continuous statistic for Monte Carlo checks.
    """
    ep = (n_z * pe.e_p_expected + pe.deviation) / n_z if pe.aborted else pe.e_p_upper
    penalty = 0.0
    if finite:
        penalty = math.log2(2.0 / budget.eps_cor) + 2.0 * math.log2(1.0 / (2.0 * budget.eps0))
    secret = 1.0 - binary_entropy(min(ep, 0.5)) - 2.0 * max(ep - 0.5, 0.0)
    leak = f_ec * (binary_entropy(min(e_z, 0.5)) + 2.0 * max(e_z - 0.5, 0.0))
    return secret - leak - penalty / n_z


def _abort(reason, n_z=0.0, e_z=0.0, **trace) -> KeyRateResult:
    return KeyRateResult(0, 0.0, 0.5, e_z, 0.0, True, n_z, {"abort_reason": reason, **trace})


def evaluate_counts(params: ProtocolParams, counts: ClickCounts, budget: SecurityBudget,
                    engine: str = "kato", ep_mode: str = "consistent",
                    finite: bool = True) -> KeyRateResult:
    """Run the key-rate pipeline on a set of counters.

    With ``finite=False`` every statistical fluctuation and the constant
    correctness/secrecy penalties are dropped and the rate is not floored
    (asymptotic limit). Never raises for degenerate counts; returns an
    aborted result instead.
    """
    n_z = counts.n_z
    e_z = counts.n_z_err / n_z if n_z > 0 else 0.0
    try:
        be = bound_expected_counts(counts, budget, engine if finite else "none")
        phase = phase_gain_bounds(be, params.mu)
        pe = phase_error_upper(counts, phase, params.mu, budget, ep_mode, finite)
    except EstimationError as exc:
        return _abort(str(exc), n_z, e_z)
    trace = {
        "engine": engine if finite else "none",
        "ep_mode": ep_mode,
        "bounds": be,
        "q0x_m1_upper": phase[0],
        "q0x_m0_lower": phase[1],
        "e_p_expected": pe.e_p_expected,
        "e_p_deviation": pe.deviation,
        # signal gains are observed ratios inserted into an expected-value formula
        "signal_gains_observed": True,
    }
    if finite:
        trace["failure_probabilities"] = (
            [("decoy_bound", budget.eps1)] * 6
            + [("phase_error", budget.eps2)]
            + [("smoothing", budget.eps_smooth)] * 2
            + [("privacy_amplification", budget.eps0)]
        )
    trace["secret_margin"] = _secret_margin(n_z, pe, e_z, budget, params.f_ec, finite)
    if pe.aborted:
        return _abort("phase error bound above 1/2", n_z, e_z, **trace)
    if e_z > 0.5:
        return _abort("bit error rate above 1/2", n_z, e_z, **trace)
    if not finite:
        frac = 1.0 - binary_entropy(pe.e_p_upper) - params.f_ec * binary_entropy(e_z)
        bits = max(n_z * frac, 0.0)
        return KeyRateResult(math.floor(bits), bits / (2.0 * params.n_rounds), pe.e_p_upper,
                             e_z, params.f_ec * n_z * binary_entropy(e_z), bits <= 0, n_z, trace)
    res = key_length(n_z, pe.e_p_upper, e_z, budget, params.f_ec, params.n_rounds)
    trace.update(res.trace)
    return KeyRateResult(res.key_length, res.rate_per_pulse, res.e_p_upper, e_z,
                         res.leak_ec, res.aborted, n_z, trace)


def evaluate_point(params: ProtocolParams, eta: float, budget: SecurityBudget,
                   engine: str = "kato", ep_mode: str = "consistent",
                   finite: bool = True) -> KeyRateResult:
    """Key-rate result on the deterministic expected counts at transmittance ``eta``."""
    return evaluate_counts(params, expected_counts(params, eta), budget, engine, ep_mode, finite)


# the budget only feeds fluctuation terms, which the asymptotic limit drops
_ANY_BUDGET = epsilon_budget(0.1, 0.1)


def asymptotic_key_rate(params: ProtocolParams, eta: float) -> float:
    """Rate per pulse with no statistical fluctuation and no constant penalties."""
    return evaluate_point(params, eta, _ANY_BUDGET, finite=False).rate_per_pulse
