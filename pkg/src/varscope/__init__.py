"""Law-of-total-variance expansions of posterior predictive variance.

Closed forms for conjugate families and a two-way random-effects model,
exact Gaussian conditioning, nested Monte Carlo for arbitrary samplers,
enumeration of expansion plans, zero-term implication graphs, and
model-averaging decompositions.
"""
from .model import (
    CLOSED_FORM,
    EMPIRICAL_DRAWS,
    MONTE_CARLO,
    DomainError,
    ExpansionPlan,
    HierarchySpec,
    Level,
    PlanError,
    TermId,
    TermReport,
    VariableId,
    spec_from_json,
    spec_to_json,
    validate_plan,
)

__version__ = "0.1.0"

__all__ = [
    "CLOSED_FORM",
    "EMPIRICAL_DRAWS",
    "MONTE_CARLO",
    "DomainError",
    "ExpansionPlan",
    "HierarchySpec",
    "Level",
    "PlanError",
    "TermId",
    "TermReport",
    "VariableId",
    "spec_from_json",
    "spec_to_json",
    "validate_plan",
    "__version__",
]
