"""Escape times from the search phase of pre-trained models."""

from ._core import (
    AlignmentError,
    DegenerateStateError,
    NumericalBlowup,
    ValidationError,
    activation,
    asymptotic_tau,
    committee_rates,
    compare,
    find_singularities,
    hermite_coefficients,
    integrate_flow,
    linearize,
    population_loss,
    run_committee,
    run_plan,
    run_sgd,
    scaled_hermite,
    tau_curve,
)

__all__ = [
    "AlignmentError",
    "DegenerateStateError",
    "NumericalBlowup",
    "ValidationError",
    "activation",
    "asymptotic_tau",
    "committee_rates",
    "compare",
    "find_singularities",
    "hermite_coefficients",
    "integrate_flow",
    "linearize",
    "population_loss",
    "run_committee",
    "run_plan",
    "run_sgd",
    "scaled_hermite",
    "tau_curve",
]
