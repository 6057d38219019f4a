import dataclasses

import numpy as np
import pytest

from cowqkd import (
    ChannelScenario,
    OptimizationSpec,
    ProtocolParams,
    epsilon_budget,
    evaluate_point,
    optimize,
    system_transmittance,
)
from cowqkd.optimizer import DEFAULT_BOUNDS, OptimizationError

BUDGET = epsilon_budget(1e-10, 1e-15)
TEMPLATE = ProtocolParams(mu=0.01, t_B=0.4, p_d1=0.05, p_d2=0.05, n_rounds=10 ** 10)


def eta_at(L):
    return system_transmittance(ChannelScenario(length_km=L))


@pytest.mark.parametrize("L", [10, 40])
def test_single_variable_matches_dense_grid(L):
    eta = eta_at(L)
    lo, hi = 1e-3, 0.1
    spec = OptimizationSpec(free=("mu",), bounds={"mu": (lo, hi)}, max_evals=300)
    params, res = optimize(TEMPLATE, eta, spec)
    grid = np.linspace(lo, hi, 1000)
    rates = [evaluate_point(dataclasses.replace(TEMPLATE, mu=m), eta, BUDGET).rate_per_pulse
             for m in grid]
    best = int(np.argmax(rates))
    assert res.rate_per_pulse >= rates[best] * (1 - 1e-9)
    assert params.mu == pytest.approx(grid[best], abs=2 * (hi - lo) / 999)


def test_zero_budget_returns_template():
    spec = OptimizationSpec(max_evals=0)
    params, res = optimize(TEMPLATE, eta_at(20), spec)
    assert params == TEMPLATE
    assert res.rate_per_pulse == evaluate_point(TEMPLATE, eta_at(20), BUDGET).rate_per_pulse
    assert res.trace["optimizer"]["evaluations"] == 0


def test_all_fixed_is_pass_through():
    params, res = optimize(TEMPLATE, ChannelScenario(length_km=20), OptimizationSpec(free=()))
    assert params == TEMPLATE
    assert res.key_length == evaluate_point(TEMPLATE, eta_at(20), BUDGET).key_length


def test_never_worse_than_template_or_log():
    params, res = optimize(TEMPLATE, eta_at(30), OptimizationSpec(max_evals=200))
    log = res.trace["optimizer"]["log"]
    assert len(log) <= 200 + 1
    assert res.rate_per_pulse >= max(rate for _, rate in log)
    assert res.rate_per_pulse >= evaluate_point(TEMPLATE, eta_at(30), BUDGET).rate_per_pulse


def test_every_evaluated_point_respects_constraints():
    bounds = {"mu": (1e-3, 0.5), "p_d1": (0.3, 0.5), "p_d2": (0.3, 0.5)}
    _, res = optimize(TEMPLATE, eta_at(10), OptimizationSpec(bounds=bounds, max_evals=300))
    for (mu, t_B, p_d1, p_d2), _ in res.trace["optimizer"]["log"][1:]:
        assert 1e-3 * (1 - 1e-12) <= mu <= 0.5 * (1 + 1e-12)
        assert DEFAULT_BOUNDS["t_B"][0] <= t_B <= DEFAULT_BOUNDS["t_B"][1]
        assert p_d1 + p_d2 < 1.0


def test_deterministic_for_fixed_seed():
    spec = OptimizationSpec(max_evals=150, seed=4)
    a = optimize(TEMPLATE, eta_at(60), spec)
    b = optimize(TEMPLATE, eta_at(60), spec)
    assert a[0] == b[0]
    assert a[1].rate_per_pulse == b[1].rate_per_pulse
    assert a[1].trace["optimizer"]["log"] == b[1].trace["optimizer"]["log"]


@pytest.mark.parametrize("bounds", [{"mu": (0.5, 0.1)}, {"p_d1": (0.6, 0.7), "p_d2": (0.5, 0.6)}])
def test_infeasible_box(bounds):
    with pytest.raises(OptimizationError, match="empty search box"):
        optimize(TEMPLATE, eta_at(10), OptimizationSpec(bounds=bounds))


def test_infeasible_box_with_one_fixed_decoy():
    template = dataclasses.replace(TEMPLATE, p_d2=0.6)
    with pytest.raises(OptimizationError):
        optimize(template, eta_at(10), OptimizationSpec(free=("p_d1",), bounds={"p_d1": (0.45, 0.5)}))


def test_unknown_variable():
    with pytest.raises(OptimizationError):
        OptimizationSpec(free=("e_d",))


def test_escapes_abort_region():
    # the template aborts at 80 km; the search must still find key
    template = ProtocolParams(n_rounds=10 ** 11)
    assert evaluate_point(template, eta_at(80), BUDGET).aborted
    _, res = optimize(template, eta_at(80))
    assert res.rate_per_pulse > 0


def test_optimal_mu_decreases_with_distance():
    mus = []
    for L in (40, 60, 80):
        spec = OptimizationSpec(free=("mu",))
        params, _ = optimize(ProtocolParams(t_B=0.4, p_d1=0.05, p_d2=0.05, n_rounds=10 ** 11),
                             eta_at(L), spec)
        mus.append(params.mu)
    assert mus[0] > mus[1] > mus[2]


def test_golden_rate_at_34km():
    params, res = optimize(ProtocolParams(n_rounds=10 ** 11), eta_at(34))
    assert res.key_length == pytest.approx(3589983, rel=1e-4)
    assert res.rate_per_pulse == pytest.approx(1.7949915e-05, rel=1e-4)
    assert params.mu == pytest.approx(0.002685, rel=0.05)
