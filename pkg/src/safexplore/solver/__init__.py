"""Optimization back-ends: exact enumeration and a smooth NLP solver."""
from .discrete import ScenarioTooLarge, admissible_inputs, solve_exact_discrete, value_function
from .nlp import (
    GradientReport,
    NlpSpec,
    NumericalDomainError,
    SolveReport,
    SolverOptions,
    check_gradients,
    evaluate_residuals,
    solve_nlp,
)

__all__ = [
    "NlpSpec",
    "SolveReport",
    "SolverOptions",
    "NumericalDomainError",
    "ScenarioTooLarge",
    "GradientReport",
    "solve_nlp",
    "solve_exact_discrete",
    "check_gradients",
    "evaluate_residuals",
    "value_function",
    "admissible_inputs",
]
