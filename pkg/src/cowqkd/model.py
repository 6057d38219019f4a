"""Domain types, validation and small closed-form helpers.

Everything here is an immutable value object or a pure function. Validation
happens once, when a :class:`ProtocolParams` / :class:`SecurityBudget` is
constructed; downstream code assumes valid inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple


class ParameterError(ValueError):
    """A protocol or budget parameter violates one of its invariants.

    ``invariant`` is a short machine-readable tag naming the violated rule.
    """

    def __init__(self, invariant: str, message: str):
        super().__init__(message)
        self.invariant = invariant


class BasisMode(str, enum.Enum):
    PASSIVE = "passive"
    ACTIVE = "active"


@dataclass(frozen=True)
class DetectorModel:
    """Threshold detector shared by the data line and both monitor outputs."""

    p_dark: float = 2e-8
    eta_det: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.p_dark < 1.0:
            raise ParameterError("p_dark", "p_dark must lie in [0,1)")
        if not 0.0 < self.eta_det <= 1.0:
            raise ParameterError("eta_det", "eta_det must lie in (0,1]")


@dataclass(frozen=True)
class ProtocolParams:
    """Tunable protocol and device parameters.

    Attributes
    ----------
    mu : float
        Mean photon number of a non-vacuum pulse.
    t_B : float
        Beam-splitter transmittance toward the data line (passive mode), or
        the probability of switching a round to the data line (active mode).
    p_d1, p_d2 : float
        Per-round probabilities of the decoys ``|a>|a>`` and ``|0>|0>``.
    n_rounds : int
        Number of two-pulse rounds ``N``.
    p_switch : float or None
        Active mode only: data-line routing probability, overriding ``t_B``.
    """

    mu: float = 0.1
    t_B: float = 0.9
    p_d1: float = 0.05
    p_d2: float = 0.05
    n_rounds: int = 10**11
    basis_mode: BasisMode = BasisMode.PASSIVE
    detector: DetectorModel = field(default_factory=DetectorModel)
    e_d: float = 0.01
    f_ec: float = 1.1
    p_switch: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "basis_mode", BasisMode(self.basis_mode))
        for problem in _violations(self):
            raise ParameterError(*problem)

    @property
    def p_z(self) -> float:
        """Probability of each of the two signal states."""
        return 0.5 * (1.0 - self.p_d1 - self.p_d2)

    @property
    def n_pulses(self) -> int:
        return 2 * self.n_rounds

    @property
    def data_routing(self) -> float:
        """Probability a round is switched to the data line (active mode)."""
        return self.t_B if self.p_switch is None else self.p_switch

    def sending_probabilities(self) -> dict[str, float]:
        return {"0a": self.p_z, "a0": self.p_z, "aa": self.p_d1, "00": self.p_d2}


def _violations(p: ProtocolParams):
    if not (math.isfinite(p.mu) and p.mu > 0):
        yield "mu", "mu must be positive"
    if not 0.0 < p.t_B < 1.0:
        yield "t_B", "t_B must lie strictly inside (0,1)"
    if not 0.0 < p.p_d1 < 1.0:
        yield "p_d1", "p_d1 must lie strictly inside (0,1)"
    if not 0.0 < p.p_d2 < 1.0:
        yield "p_d2", "p_d2 must lie strictly inside (0,1)"
    if not p.p_d1 + p.p_d2 < 1.0:
        yield "decoy_sum", "decoy probabilities sum ≥ 1"
    if int(p.n_rounds) != p.n_rounds or p.n_rounds < 1:
        yield "n_rounds", "n_rounds must be an integer ≥ 1"
    if not 0.0 <= p.e_d <= 0.5:
        yield "e_d", "e_d must lie in [0, 0.5]"
    if not p.f_ec >= 1.0:
        yield "f_ec", "f_ec must be ≥ 1"
    if p.p_switch is not None and not 0.0 < p.p_switch < 1.0:
        yield "p_switch", "p_switch must lie strictly inside (0,1)"


def validate_params(params: ProtocolParams) -> ProtocolParams:
    """Re-check every invariant; return ``params`` unchanged or raise."""
    for problem in _violations(params):
        raise ParameterError(*problem)
    return params


_SLOT_COUNTS = (2, 1, 6, 1)  # smoothing, privacy amplification, 6 decoy bounds, phase error


@dataclass(frozen=True)
class SecurityBudget:
    """Composable failure budget.

    ``eps_sec = 2*eps_smooth + eps0 + 6*eps1 + eps2`` must hold.
    """

    eps_cor: float
    eps_sec: float
    eps_smooth: float
    eps0: float
    eps1: float
    eps2: float

    def __post_init__(self):
        for name in ("eps_cor", "eps_sec", "eps_smooth", "eps0", "eps1", "eps2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0 and not (name == "eps_sec" and v == 1.0):
                raise ParameterError(name, f"{name} must lie in (0,1)")
        if not math.isclose(self.total(), self.eps_sec, rel_tol=1e-12, abs_tol=0.0):
            raise ParameterError("eps_sum", "2*eps + eps0 + 6*eps1 + eps2 must equal eps_sec")

    def slots(self) -> list[float]:
        return [self.eps_smooth] * 2 + [self.eps0] + [self.eps1] * 6 + [self.eps2]

    def total(self) -> float:
        return math.fsum(self.slots())


def epsilon_budget(eps_sec: float, eps_cor: float,
                   weights: tuple[float, float, float, float] = (1, 1, 1, 1)) -> SecurityBudget:
    """Split ``eps_sec`` over the ten failure slots.

    ``weights`` gives the relative size of (eps, eps0, eps1, eps2); the default
    is the equal split where every slot is ``eps_sec / 10``.
    """
    if not (0.0 < eps_sec <= 1.0):
        raise ParameterError("eps_sec", "eps_sec must lie in (0,1]")
    if not (0.0 < eps_cor < 1.0):
        raise ParameterError("eps_cor", "eps_cor must lie in (0,1)")
    if any(w <= 0 for w in weights):
        raise ParameterError("weights", "budget weights must be positive")
    norm = sum(c * w for c, w in zip(_SLOT_COUNTS, weights))
    e, e0, e1, e2 = (eps_sec * w / norm for w in weights)
    return SecurityBudget(eps_cor=eps_cor, eps_sec=eps_sec,
                          eps_smooth=e, eps0=e0, eps1=e1, eps2=e2)


class NormalizationPair(NamedTuple):
    n_plus: float
    n_minus: float


def normalization_factors(mu: float) -> NormalizationPair:
    """Return ``(2(1+e^-mu), 2(1-e^-mu))``."""
    if not mu >= 0:
        raise ValueError("mu must be non-negative")
    return NormalizationPair(2.0 * (1.0 + math.exp(-mu)), -2.0 * math.expm1(-mu))


def binary_entropy(x: float) -> float:
    """Binary Shannon entropy in bits, with h(0) = h(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy argument {x!r} outside [0,1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    # log1p keeps the (1-x) term accurate for tiny x
    return -x * math.log2(x) - (1.0 - x) * math.log1p(-x) / math.log(2.0)
