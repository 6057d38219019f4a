import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cowqkd import (
    BasisMode,
    DetectorModel,
    ParameterError,
    ProtocolParams,
    SecurityBudget,
    binary_entropy,
    epsilon_budget,
    normalization_factors,
    validate_params,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.mark.parametrize("x", [0.0, 1e-12, 1e-6, 0.01, 0.11, 0.25, 0.5, 0.75, 0.99, 1.0])
def test_entropy_matches_oracle(x):
    assert binary_entropy(x) == pytest.approx(float(oracles.entropy(x)), rel=1e-12, abs=1e-300)


def test_entropy_reference_points():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.01) == pytest.approx(0.0807931358959, rel=1e-11)


@pytest.mark.parametrize("x", [-1e-9, 1.0000001, math.nan])
def test_entropy_domain(x):
    with pytest.raises(ValueError):
        binary_entropy(x)


@given(unit)
def test_entropy_symmetric(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x), abs=1e-12)


def test_entropy_increasing_on_lower_half():
    grid = [i / 2000 for i in range(1001)]
    values = [binary_entropy(x) for x in grid]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_normalization_reference_points():
    assert tuple(normalization_factors(0.0)) == (4.0, 0.0)
    n_plus, n_minus = normalization_factors(800.0)
    assert (n_plus, n_minus) == (2.0, 2.0)
    ref = oracles.normalization(0.1)
    n_plus, n_minus = normalization_factors(0.1)
    assert n_plus == pytest.approx(float(ref[0]), rel=1e-15)
    assert n_minus == pytest.approx(float(ref[1]), rel=1e-14)
    assert n_plus == pytest.approx(3.809674836071919, rel=1e-15)
    assert n_minus == pytest.approx(0.190325163928081, rel=1e-14)


@given(st.floats(0.0, 10.0))
def test_normalization_sum_is_four(mu):
    n_plus, n_minus = normalization_factors(mu)
    assert abs(n_plus + n_minus - 4.0) <= math.ulp(4.0)
    assert 2.0 <= n_plus <= 4.0 and 0.0 <= n_minus < 2.0


def test_budget_equal_tenths():
    b = epsilon_budget(1e-10, 1e-15)
    for e in (b.eps_smooth, b.eps0, b.eps1, b.eps2):
        assert e == pytest.approx(1e-11, rel=1e-15)
    assert len(b.slots()) == 10
    assert b.total() == pytest.approx(1e-10, rel=1e-15)


def test_budget_unit_and_power_of_two():
    assert all(s == pytest.approx(0.1) for s in epsilon_budget(1.0, 0.5).slots())
    b = epsilon_budget(2.0 ** -27, 1e-15)
    assert b.eps0 == pytest.approx(2.0 ** -27 / 10, rel=1e-15)


@given(st.floats(1e-300, 1.0), st.tuples(*[st.floats(0.01, 100.0)] * 4))
@settings(max_examples=200)
def test_budget_sum_identity(eps_sec, weights):
    b = epsilon_budget(eps_sec, 1e-15, weights)
    assert b.total() == pytest.approx(eps_sec, rel=1e-12)
    assert b.eps_sec == eps_sec


def test_budget_rejects_inconsistent_slots():
    with pytest.raises(ParameterError):
        SecurityBudget(eps_cor=1e-15, eps_sec=1e-10, eps_smooth=1e-11, eps0=1e-11,
                       eps1=1e-11, eps2=2e-11)


def test_decoy_probability_violation():
    with pytest.raises(ParameterError, match="decoy probabilities sum ≥ 1"):
        ProtocolParams(p_d1=0.6, p_d2=0.5)


@pytest.mark.parametrize("t_B", [0.0, 1.0, 1.5])
def test_t_B_violation(t_B):
    with pytest.raises(ParameterError, match=r"t_B must lie strictly inside \(0,1\)"):
        ProtocolParams(t_B=t_B)


@pytest.mark.parametrize("kwargs", [dict(mu=-0.1), dict(e_d=0.7), dict(n_rounds=0),
                                    dict(f_ec=0.9), dict(p_d1=-0.1)])
def test_other_violations(kwargs):
    with pytest.raises(ParameterError):
        ProtocolParams(**kwargs)


def test_detector_validation():
    with pytest.raises(ParameterError):
        DetectorModel(p_dark=1.5)
    with pytest.raises(ParameterError):
        DetectorModel(eta_det=0.0)


def test_defaults_accepted():
    p = ProtocolParams(mu=0.02)
    assert validate_params(p) is p
    assert p.detector.p_dark == 2e-8 and p.detector.eta_det == 0.7
    assert p.basis_mode is BasisMode.PASSIVE
    assert sum(p.sending_probabilities().values()) == pytest.approx(1.0, rel=1e-15)
    assert p.n_pulses == 2 * p.n_rounds


def test_basis_mode_coerced_from_string():
    assert ProtocolParams(basis_mode="active").basis_mode is BasisMode.ACTIVE
