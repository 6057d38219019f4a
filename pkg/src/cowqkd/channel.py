"""Honest channel and detector model.

Optics model
------------
Per round Alice emits one of four two-pulse states, keyed here as
``"0a"`` (bit 0), ``"a0"`` (bit 1), ``"aa"`` and ``"00"`` (decoys).

* Passive basis choice: a beam splitter sends a fraction ``t_B`` of every
  pulse to the data line and ``1 - t_B`` to the monitoring line.
* Active basis choice: the whole round is switched to the data line with
  probability ``t_B`` (or ``p_switch``), else to the monitoring line.
* Data line: the occupied slot clicks with ``1 - (1 - p_d) exp(-mu_D)``, the
  empty slot with ``p_d``. Both clicking gives a random bit. A click read
  as the correct slot is flipped with probability ``e_d``.
* Monitoring line: a one-bit-delay 50/50 interferometer; only the window
  where both pulses of a round overlap is recorded. ``aa`` sends
  ``mu_M (1 - e_d)`` to M0 and ``mu_M e_d`` to M1; a single pulse sends
  ``mu_M / 4`` to each detector; ``00`` only produces dark counts. A double
  click is assigned to either detector with probability 1/2.

Rounds are independent; the adversary's correlations are handled by the
concentration bounds, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import BasisMode, ProtocolParams

STATES = ("0a", "a0", "aa", "00")
SIGNALS = ("0a", "a0")
DECOYS = ("aa", "00")


@dataclass(frozen=True)
class ChannelScenario:
    """Either a fibre length in km or a direct transmittance."""

    length_km: float | None = None
    eta_channel: float | None = None

    def __post_init__(self):
        if (self.length_km is None) == (self.eta_channel is None):
            raise ValueError("specify exactly one of length_km and eta_channel")
        if self.length_km is not None and not self.length_km >= 0:
            raise ValueError("fibre length must be non-negative")
        if self.eta_channel is not None and not 0.0 < self.eta_channel <= 1.0:
            raise ValueError("eta_channel must lie in (0,1]")


def system_transmittance(scenario: ChannelScenario) -> float:
    """Fibre transmittance ``10^(-0.016 L)``, i.e. 0.16 dB/km."""
    if scenario.eta_channel is not None:
        return scenario.eta_channel
    if not scenario.length_km >= 0:
        raise ValueError("fibre length must be non-negative")
    return 10.0 ** (-0.016 * scenario.length_km)


@dataclass(frozen=True)
class GainTable:
    """Per-round click probabilities.

    ``q_z_sig`` is the probability a signal round gives a data-line click;
    ``q_z_wrongslot`` the part of it landing in the wrong slot (dark counts
    and double-click coin flips); ``q_z_err`` the total bit-error probability
    including misalignment. ``q_mon[w] = (M0, M1)`` after double-click
    resolution.
    """

    q_z_sig: float
    q_z_wrongslot: float
    q_z_err: float
    q_mon: dict[str, tuple[float, float]]


@dataclass(frozen=True)
class ClickCounts:
    """Counters of one run; integers when sampled, reals when expected."""

    n_mon: dict[str, tuple[float, float]]
    n_sent: dict[str, float]
    n_z: float
    n_z_err: float

    @property
    def n_rounds(self):
        return sum(self.n_sent.values())

    def signal_gains(self) -> dict[str, tuple[float, float]]:
        """Observed monitoring-line gains of the two signal states."""
        out = {}
        for w in SIGNALS:
            k = self.n_sent[w]
            out[w] = (self.n_mon[w][0] / k, self.n_mon[w][1] / k) if k else (0.0, 0.0)
        return out


def _click(intensity: float, p_dark: float) -> float:
    # 1 - (1 - p_d) e^{-I}, written to keep precision for tiny I
    return p_dark - (1.0 - p_dark) * math.expm1(-intensity)


def _resolve(p0: float, p1: float) -> tuple[float, float]:
    both = p0 * p1
    return p0 - 0.5 * both, p1 - 0.5 * both


def _line_intensities(params: ProtocolParams, eta: float):
    """(data-line weight, mu_D, monitoring weight, mu_M)."""
    base = params.mu * eta * params.detector.eta_det
    if params.basis_mode is BasisMode.PASSIVE:
        return 1.0, base * params.t_B, 1.0, base * (1.0 - params.t_B)
    r = params.data_routing
    return r, base, 1.0 - r, base


def expected_gains(params: ProtocolParams, eta: float) -> GainTable:
    if not 0.0 <= eta <= 1.0:
        raise ValueError("transmittance must lie in [0,1]")
    pd = params.detector.p_dark
    w_data, mu_d, w_mon, mu_m = _line_intensities(params, eta)

    p_occ = _click(mu_d, pd)
    both = p_occ * pd
    right = p_occ - 0.5 * both
    wrong = pd - 0.5 * both
    q_z_sig = w_data * (right + wrong)
    q_z_wrongslot = w_data * wrong
    q_z_err = w_data * (wrong + params.e_d * right)

    intensities = {
        "0a": (mu_m / 4.0, mu_m / 4.0),
        "a0": (mu_m / 4.0, mu_m / 4.0),
        "aa": (mu_m * (1.0 - params.e_d), mu_m * params.e_d),
        "00": (0.0, 0.0),
    }
    q_mon = {}
    for w, (i0, i1) in intensities.items():
        r0, r1 = _resolve(_click(i0, pd), _click(i1, pd))
        q_mon[w] = (w_mon * r0, w_mon * r1)
    return GainTable(q_z_sig, q_z_wrongslot, q_z_err, q_mon)


def expected_counts(params: ProtocolParams, eta: float) -> ClickCounts:
    """Mean of :func:`simulate_counts`, cell by cell, as reals."""
    gains = expected_gains(params, eta)
    n = float(params.n_rounds)
    probs = params.sending_probabilities()
    n_sent = {w: n * probs[w] for w in STATES}
    n_mon = {w: (n_sent[w] * gains.q_mon[w][0], n_sent[w] * gains.q_mon[w][1])
             for w in STATES}
    n_sig = n_sent["0a"] + n_sent["a0"]
    return ClickCounts(n_mon, n_sent, n_sig * gains.q_z_sig, n_sig * gains.q_z_err)


def _outcome_probs(gains: GainTable, w: str, params: ProtocolParams) -> list[float]:
    """Joint per-round outcome distribution for a signal state.

    Categories: (data ok, data error, no data click) x (M0, M1, no monitor
    click). Passive lines are independent; active lines are exclusive.
    """
    q0, q1 = gains.q_mon[w]
    z_ok = gains.q_z_sig - gains.q_z_err
    z_err = gains.q_z_err
    if params.basis_mode is BasisMode.PASSIVE:
        data = (z_ok, z_err, 1.0 - gains.q_z_sig)
        mon = (q0, q1, 1.0 - q0 - q1)
        return [d * m for d in data for m in mon]
    # exclusive routing: monitor clicks only when the data line saw nothing
    return [0.0, 0.0, z_ok, 0.0, 0.0, z_err, q0, q1, 1.0 - gains.q_z_sig - q0 - q1]


def simulate_counts(params: ProtocolParams, eta: float, seed: int,
                    n_rounds: int | None = None) -> ClickCounts:
    """Sample the counters of ``n_rounds`` independent honest rounds.

    Rounds are grouped by outcome: the number of rounds of each state is
    multinomial, and per state the joint outcome counts are multinomial with
    the per-round probabilities of :func:`expected_gains`. This has the same
    distribution as drawing every round separately.
    """
    n = params.n_rounds if n_rounds is None else int(n_rounds)
    if n < 0:
        raise ValueError("n_rounds must be non-negative")
    rng = np.random.default_rng(seed)
    gains = expected_gains(params, eta)
    probs = params.sending_probabilities()
    sent = rng.multinomial(n, [probs[w] for w in STATES])
    n_sent = {w: int(c) for w, c in zip(STATES, sent)}

    n_mon = {}
    n_z = n_z_err = 0
    for w in STATES:
        if w in SIGNALS:
            p = np.clip(_outcome_probs(gains, w, params), 0.0, None)
            c = rng.multinomial(n_sent[w], p / p.sum()).reshape(3, 3)
            n_z += int(c[0].sum() + c[1].sum())
            n_z_err += int(c[1].sum())
            n_mon[w] = (int(c[:, 0].sum()), int(c[:, 1].sum()))
        else:
            q0, q1 = gains.q_mon[w]
            c = rng.multinomial(n_sent[w], [q0, q1, max(1.0 - q0 - q1, 0.0)])
            n_mon[w] = (int(c[0]), int(c[1]))
    return ClickCounts(n_mon, n_sent, n_z, n_z_err)
