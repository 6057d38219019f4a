"""Stochastic self-checks.

* :func:`coverage_suite` -- empirical failure frequency of every
  concentration bound on i.i.d. Bernoulli sequences.
* :func:`montecarlo_report` -- sample one protocol run, push it through the
  finite-key pipeline and compare with the expected-counts pipeline.

"5 sigma" envelopes use exact binomial tails: a value passes when it lies
between the binomial quantiles at the one-sided normal 5-sigma tail mass.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom, norm

from .channel import STATES, ClickCounts, expected_gains, simulate_counts
from .concentration import Direction, hoeffding_deviation, kato_coefficients
from .model import ProtocolParams, SecurityBudget
from .security import evaluate_counts

SIGMAS = 5.0
TAIL = norm.sf(SIGMAS)  # one-sided


@dataclass(frozen=True)
class CoverageResult:
    p: float
    direction: Direction
    violations: int
    trials: int
    threshold: float

    @property
    def frequency(self) -> float:
        return self.violations / self.trials

    @property
    def passed(self) -> bool:
        return self.frequency <= self.threshold


def coverage_suite(seed: int = 0, k: int = 1000, eps: float = 1e-2, trials: int = 100_000,
                   ps=(0.001, 0.1, 0.5)) -> list[CoverageResult]:
    """Count how often the true value escapes each bound.

    For every ``p`` one batch of ``trials`` sequences of ``k`` Bernoulli(p)
    variables is drawn from its own substream of ``seed``. A bound passes
    when its violation frequency is at most ``eps`` plus three binomial
    standard deviations.
    """
    threshold = eps + 3.0 * math.sqrt(eps * (1.0 - eps) / trials)
    streams = np.random.SeedSequence(seed).spawn(len(ps))
    dev_obs = hoeffding_deviation(k, eps)
    out = []
    for p, ss in zip(ps, streams):
        gamma = np.random.default_rng(ss).binomial(k, p, size=trials).astype(float)
        truth = k * p
        upper = np.minimum(gamma + kato_coefficients(gamma, k, eps, upper=True)[2], k)
        lower = np.maximum(gamma - kato_coefficients(gamma, k, eps, upper=False)[2], 0.0)
        escapes = {
            Direction.UPPER_ON_EXPECTED: truth > upper,
            Direction.LOWER_ON_EXPECTED: truth < lower,
            Direction.UPPER_ON_OBSERVED: gamma > truth + dev_obs,
            Direction.LOWER_ON_OBSERVED: gamma < max(truth - dev_obs, 0.0),
        }
        for direction, hit in escapes.items():
            out.append(CoverageResult(p, direction, int(hit.sum()), trials, threshold))
    return out


def _cells(params: ProtocolParams, eta: float):
    """(name, per-round probability) for every counter of a run."""
    g = expected_gains(params, eta)
    probs = params.sending_probabilities()
    cells = [(f"n_sent[{w}]", probs[w]) for w in STATES]
    for w in STATES:
        for i in (0, 1):
            cells.append((f"n_mon[{w}][M{i}]", probs[w] * g.q_mon[w][i]))
    cells.append(("n_z", 2.0 * params.p_z * g.q_z_sig))
    cells.append(("n_z_err", 2.0 * params.p_z * g.q_z_err))
    return cells


def _get(counts: ClickCounts, name: str):
    if name.startswith("n_sent"):
        return counts.n_sent[name[7:9]]
    if name.startswith("n_mon"):
        return counts.n_mon[name[6:8]][int(name[-2])]
    return getattr(counts, name)


def _with(counts: ClickCounts, name: str, value) -> ClickCounts:
    if name.startswith("n_sent"):
        return dataclasses.replace(counts, n_sent={**counts.n_sent, name[7:9]: value})
    if name.startswith("n_mon"):
        w, i = name[6:8], int(name[-2])
        pair = list(counts.n_mon[w])
        pair[i] = value
        return dataclasses.replace(counts, n_mon={**counts.n_mon, w: tuple(pair)})
    return dataclasses.replace(counts, **{name: value})


@dataclass
class MonteCarloReport:
    lines: list[str] = field(default_factory=list)
    passed: bool = True

    def check(self, ok: bool, text: str):
        self.lines.append(f"{'PASS' if ok else 'FAIL'}  {text}")
        self.passed &= bool(ok)

    def text(self) -> str:
        return "\n".join(self.lines + ["PASS" if self.passed else "FAIL"]) + "\n"


def _stats(params, counts, budget, engine, ep_mode):
    res = evaluate_counts(params, counts, budget, engine, ep_mode)
    return {"rate_per_pulse": res.rate_per_pulse,
            "secret_margin": res.trace.get("secret_margin", -math.inf)}


def montecarlo_report(params: ProtocolParams, eta: float, budget: SecurityBudget, seed: int,
                      engine: str = "kato", ep_mode: str = "consistent",
                      coverage: bool = True, coverage_trials: int = 100_000) -> MonteCarloReport:
    """End-to-end check of one sampled run against the deterministic model."""
    n = params.n_rounds
    rep = MonteCarloReport()
    rep.lines.append(f"# montecarlo N={n} eta={eta:.6g} mu={params.mu:.6g} t_B={params.t_B:.6g} "
                     f"p_d1={params.p_d1:.6g} p_d2={params.p_d2:.6g} e_d={params.e_d:.6g} "
                     f"engine={engine} seed={seed}")
    sampled = simulate_counts(params, eta, seed)
    cells = _cells(params, eta)

    rep.lines.append("# counters: observed vs binomial(N, p) at 5 sigma")
    exp_values = {}
    for name, p in cells:
        mean = n * p
        exp_values[name] = mean
        obs = _get(sampled, name)
        lo, hi = binom.ppf(TAIL, n, p), binom.isf(TAIL, n, p)
        sd = math.sqrt(n * p * (1.0 - p))
        z = (obs - mean) / sd if sd > 0 else 0.0
        rep.check(lo <= obs <= hi,
                  f"{name:16s} expected={mean:.6g} observed={obs} z={z:+.3f} range=[{lo:.0f},{hi:.0f}]")

    expected = ClickCounts({w: (exp_values[f"n_mon[{w}][M0]"], exp_values[f"n_mon[{w}][M1]"])
                            for w in STATES},
                           {w: exp_values[f"n_sent[{w}]"] for w in STATES},
                           exp_values["n_z"], exp_values["n_z_err"])

    # push every counter to whichever 5-sigma end hurts (helps) each statistic
    base = _stats(params, expected, budget, engine, ep_mode)
    worst, best = expected, expected
    for name, p in cells:
        ends = (binom.ppf(TAIL, n, p), binom.isf(TAIL, n, p))
        at = [_stats(params, _with(expected, name, float(e)), budget, engine, ep_mode)
              for e in ends]
        lo_first = at[0]["secret_margin"] <= at[1]["secret_margin"]
        worst = _with(worst, name, float(ends[0] if lo_first else ends[1]))
        best = _with(best, name, float(ends[1] if lo_first else ends[0]))
    s_worst = _stats(params, worst, budget, engine, ep_mode)
    s_best = _stats(params, best, budget, engine, ep_mode)
    s_obs = _stats(params, sampled, budget, engine, ep_mode)

    rep.lines.append("# pipeline: sampled counters vs 5-sigma envelope around expected counters")
    for key in ("rate_per_pulse", "secret_margin"):
        lo = min(s_worst[key], s_best[key])
        hi = max(s_worst[key], s_best[key])
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        rep.check(lo - tol <= s_obs[key] <= hi + tol,
                  f"{key:16s} expected={base[key]:.6g} sampled={s_obs[key]:.6g} "
                  f"envelope=[{lo:.6g},{hi:.6g}]")

    if coverage:
        rep.lines.append("# concentration coverage: k=1000 eps=0.01")
        for r in coverage_suite(seed, trials=coverage_trials):
            rep.check(r.passed, f"p={r.p:<6g} {r.direction.value:18s} "
                                f"violations={r.violations}/{r.trials} "
                                f"freq={r.frequency:.5f} limit={r.threshold:.5f}")
    return rep
