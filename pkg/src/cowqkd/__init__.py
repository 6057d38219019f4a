"""Finite-key rate calculator for a coherent-one-way QKD variant.

The package is split into small modules:

* :mod:`cowqkd.model` -- parameter types, binary entropy, epsilon budget
* :mod:`cowqkd.concentration` -- Kato and Azuma concentration bounds
* :mod:`cowqkd.channel` -- honest channel/detector model and Monte Carlo sampler
* :mod:`cowqkd.security` -- decoy estimation, phase error and key length
* :mod:`cowqkd.optimizer` -- derivative-free parameter search
* :mod:`cowqkd.validation` -- coverage and end-to-end Monte Carlo checks
* :mod:`cowqkd.cli` -- command-line runner emitting CSV
"""

from .model import (
    BasisMode,
    DetectorModel,
    NormalizationPair,
    ParameterError,
    ProtocolParams,
    SecurityBudget,
    binary_entropy,
    epsilon_budget,
    normalization_factors,
    validate_params,
)
from .concentration import (
    ConcentrationBound,
    Direction,
    azuma_deviation,
    kato_lower_expected,
    kato_observed_bound,
    kato_upper_expected,
)
from .channel import (
    ChannelScenario,
    ClickCounts,
    GainTable,
    expected_counts,
    expected_gains,
    simulate_counts,
    system_transmittance,
)
from .security import (
    BoundedExpectations,
    EstimationError,
    KeyRateResult,
    PhaseErrorBound,
    asymptotic_key_rate,
    bound_expected_counts,
    evaluate_counts,
    evaluate_point,
    key_length,
    phase_error_upper,
    phase_gain_bounds,
)
from .optimizer import OptimizationSpec, optimize

__version__ = "0.1.0"
