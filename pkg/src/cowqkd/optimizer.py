"""Derivative-free search for the rate-maximising protocol parameters.

A coarse grid over the (partly log-scaled) search box picks starting
points; bounded Nelder-Mead refines the best few. Points are ranked by the
achieved rate, then by a continuous surrogate of the key length so the
search can climb out of regions where the protocol aborts.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelScenario, system_transmittance
from .model import ProtocolParams, SecurityBudget, epsilon_budget
from .security import KeyRateResult, evaluate_point

VARIABLES = ("mu", "t_B", "p_d1", "p_d2")
LOG_SCALED = {"mu", "p_d1", "p_d2"}
DEFAULT_BOUNDS = {
    "mu": (1e-5, 1.0),
    "t_B": (0.05, 0.95),
    "p_d1": (1e-4, 0.5),
    "p_d2": (1e-4, 0.5),
}


class OptimizationError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizationSpec:
    """What to optimise and how hard to try.

    ``max_evals`` caps the number of pipeline evaluations (the template point
    is always evaluated and not counted). ``seed`` shifts the coarse grid.
    ``finite=False`` maximises the asymptotic rate instead.
    """

    free: tuple[str, ...] = VARIABLES
    bounds: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    max_evals: int = 1500
    seed: int = 0
    n_starts: int = 3
    budget: SecurityBudget = field(default_factory=lambda: epsilon_budget(1e-10, 1e-15))
    engine: str = "kato"
    ep_mode: str = "consistent"
    finite: bool = True

    def __post_init__(self):
        unknown = set(self.free) - set(VARIABLES)
        if unknown:
            raise OptimizationError(f"cannot optimise {sorted(unknown)}")
        object.__setattr__(self, "bounds", {**DEFAULT_BOUNDS, **self.bounds})


class _BudgetExhausted(Exception):
    pass


def _margin(res: KeyRateResult) -> float:
    # per-bit secret margin; 0 at the abort boundary, very negative when undefined
    if res.rate_per_pulse > 0:
        return 0.0
    return min(res.trace.get("secret_margin", -1e3), 0.0)


class _Search:
    def __init__(self, template, eta, spec):
        self.template = template
        self.eta = eta
        self.spec = spec
        self.names = [v for v in VARIABLES if v in spec.free]
        self.lo = np.array([self._fwd(v, spec.bounds[v][0]) for v in self.names])
        self.hi = np.array([self._fwd(v, spec.bounds[v][1]) for v in self.names])
        self.evals = 0
        self.log = []
        self.cache = {}

    @staticmethod
    def _fwd(name, value):
        return math.log10(value) if name in LOG_SCALED else value

    @staticmethod
    def _inv(name, u):
        return 10.0 ** u if name in LOG_SCALED else u

    def params_at(self, u) -> ProtocolParams | None:
        u = np.clip(u, self.lo, self.hi)
        values = {v: float(self._inv(v, x)) for v, x in zip(self.names, u)}
        p_d1 = values.get("p_d1", self.template.p_d1)
        p_d2 = values.get("p_d2", self.template.p_d2)
        if p_d1 + p_d2 >= 1.0:
            return None
        return dataclasses.replace(self.template, **values)

    def evaluate(self, params: ProtocolParams, counted=True):
        key = tuple(getattr(params, v) for v in VARIABLES)
        if key in self.cache:
            return self.cache[key]
        if counted:
            if self.evals >= self.spec.max_evals:
                raise _BudgetExhausted
            self.evals += 1
        lo_ok = all(self.spec.bounds[v][0] * (1 - 1e-12) <= getattr(params, v)
                    <= self.spec.bounds[v][1] * (1 + 1e-12) for v in self.names)
        assert params.p_d1 + params.p_d2 < 1.0
        assert lo_ok or not counted
        res = evaluate_point(params, self.eta, self.spec.budget,
                             self.spec.engine, self.spec.ep_mode, self.spec.finite)
        entry = (res.rate_per_pulse, _margin(res), params, res)
        self.cache[key] = entry
        self.log.append((key, res.rate_per_pulse))
        return entry

    def objective(self, u, scale):
        params = self.params_at(u)
        if params is None:
            return 1e6
        rate, margin, _, _ = self.evaluate(params)
        return -(rate / scale if rate > 0 else margin)

    def best(self):
        # highest rate, then surrogate score, then lexicographically smallest parameters
        return max(self.cache.values(),
                   key=lambda e: (e[0], e[1], tuple(-x for x in (getattr(e[2], v) for v in VARIABLES))))


def optimize(params_template: ProtocolParams, scenario: ChannelScenario | float,
             spec: OptimizationSpec | None = None) -> tuple[ProtocolParams, KeyRateResult]:
    """Maximise the finite-key rate per pulse over ``spec.free``.

    The objective is the deterministic expected-counts pipeline. The result
    is never worse than the template point itself.
    """
    spec = spec or OptimizationSpec()
    eta = scenario if isinstance(scenario, (int, float)) else system_transmittance(scenario)
    search = _Search(params_template, eta, spec)
    if np.any(search.lo > search.hi):
        raise OptimizationError("empty search box: a lower bound exceeds its upper bound")
    if search.names and {"p_d1", "p_d2"} <= set(search.names):
        if spec.bounds["p_d1"][0] + spec.bounds["p_d2"][0] >= 1.0:
            raise OptimizationError("empty search box: p_d1 + p_d2 < 1 cannot hold")
    elif search.names:
        probe = search.params_at(search.lo)
        if probe is None:
            raise OptimizationError("empty search box: p_d1 + p_d2 < 1 cannot hold")

    search.evaluate(params_template, counted=False)
    if search.names and spec.max_evals > 0:
        try:
            _run(search, spec)
        except _BudgetExhausted:
            pass

    rate, score, params, res = search.best()
    trace = dict(res.trace)
    trace["optimizer"] = {"evaluations": search.evals, "log": search.log}
    return params, dataclasses.replace(res, trace=trace)


def _run(search: _Search, spec: OptimizationSpec):
    d = len(search.names)
    per_dim = max(2, min(9, int((0.4 * spec.max_evals) ** (1.0 / d))))
    rng = np.random.default_rng(spec.seed)
    shift = rng.uniform(-0.25, 0.25, size=d) / (per_dim - 1)
    axes = [np.clip(np.linspace(0.0, 1.0, per_dim) + s, 0.0, 1.0) for s in shift]
    for frac in itertools.product(*axes):
        params = search.params_at(search.lo + np.array(frac) * (search.hi - search.lo))
        if params is not None:
            search.evaluate(params)

    ranked = sorted(search.cache.values(), key=lambda e: (e[0], e[1]), reverse=True)
    starts = []
    for entry in ranked:
        u = np.array([search._fwd(v, getattr(entry[2], v)) for v in search.names])
        u = np.clip(u, search.lo, search.hi)
        if all(np.max(np.abs(u - s) / np.maximum(search.hi - search.lo, 1e-12)) > 1e-9
               for s in starts):
            starts.append(u)
        if len(starts) >= spec.n_starts:
            break

    width = np.maximum(search.hi - search.lo, 1e-12)
    for x0 in starts:
        scale = search.best()[0] or 1.0
        simplex = [x0]
        for j in range(d):
            step = np.zeros(d)
            step[j] = 0.1 * width[j]
            x = x0 + step
            if x[j] > search.hi[j]:
                x = x0 - step
            simplex.append(x)
        minimize(search.objective, x0, args=(scale,), method="Nelder-Mead",
                 bounds=list(zip(search.lo, search.hi)),
                 options={"initial_simplex": np.array(simplex), "xatol": 1e-4 * width.min(),
                          "fatol": 1e-7, "maxfev": spec.max_evals})
