"""Three-term predictive variance for the two-way random-coefficient model.

Model: ``y_ij = tau_i + beta_j + eps_ij`` for ``i = 1..T`` treatments and
``j = 1..B`` blocks, with independent normal effects
``tau_i ~ N(tau0, s2t)``, ``beta_j ~ N(beta0, s2b)``, ``eps_ij ~ N(0, s2e)``.
The prediction target is a fresh observation in an existing cell.

With ``tau`` as the outer block the expansion is::

    Var(Y | y) = s2e                                   # term1, noise
               + Var(beta_j | y, tau)                  # term2
               + Var_tau E(beta_j + tau_i | y, tau)    # term3

The posterior of ``tau`` has the exchangeable covariance
``v I + c (11^T - I)`` obtained from a Sherman-Morrison inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .model import DomainError

__all__ = [
    "AnovaParams", "AnovaTermBreakdown", "anova_decompose", "anova_sweep",
    "first_crossing", "SWEEP_AXES", "SWEEP_COLUMNS",
]

SWEEP_AXES = ("T", "B", "sigma_beta_sq", "sigma_tau_sq")
SWEEP_COLUMNS = ("axis", "term1", "term2", "term3", "total", "prop1", "prop2", "prop3")


@dataclass(frozen=True)
class AnovaParams:
    T: int
    B: int
    sigma_eps_sq: float
    sigma_tau_sq: float
    sigma_beta_sq: float

    def __post_init__(self):
        for name in ("T", "B"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be an integer >= 1, got {v}")
        for name in ("sigma_eps_sq", "sigma_tau_sq", "sigma_beta_sq"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive and finite, got {v}")

    def swapped(self) -> "AnovaParams":
        """Exchange the roles of treatments and blocks."""
        return AnovaParams(self.B, self.T, self.sigma_eps_sq, self.sigma_beta_sq, self.sigma_tau_sq)


@dataclass(frozen=True)
class AnovaTermBreakdown:
    term1: float
    term2: float
    term3: float
    total: float
    a: float
    b: float
    post_var_tau: float
    post_cov_tau: float
    order: str = "tau_outer"

    @property
    def terms(self) -> tuple[float, float, float]:
        return (self.term1, self.term2, self.term3)

    @property
    def proportions(self) -> tuple[float, float, float]:
        return tuple(t / self.total for t in self.terms)


def _tau_outer(p: AnovaParams) -> AnovaTermBreakdown:
    T, B = p.T, p.B
    s2e, s2t, s2b = p.sigma_eps_sq, p.sigma_tau_sq, p.sigma_beta_sq
    # precision of beta_j given y and tau
    beta_prec = T / s2e + 1.0 / s2b
    a = B / s2e + 1.0 / s2t
    b = -1.0 / (s2e * s2e * beta_prec)
    Bb = B * b
    denom = a + Bb * T
    v = (1.0 - Bb / denom) / a        # Var(tau_i | y)
    c = -Bb / (a * denom)             # Cov(tau_i, tau_k | y), i != k
    term1 = s2e
    term2 = 1.0 / beta_prec
    # E(beta_j + tau_i | y, tau) = const + [d tau_i - sum_{k != i} tau_k / s2e] / beta_prec
    d = (T - 1) / s2e + 1.0 / s2b
    m = T - 1
    num = d * d * v + m * v / s2e**2 + m * (m - 1) * c / s2e**2 - 2.0 * d * m * c / s2e
    term3 = num / beta_prec**2
    # total from the Gaussian posterior directly, kept separate from the terms
    total = s2e + _cell_posterior_var(p, v, c)
    return AnovaTermBreakdown(term1, term2, term3, total, a, b, v, c)


def _cell_posterior_var(p: AnovaParams, v: float, c: float) -> float:
    """Var(tau_i + beta_j | y) via the joint posterior of (tau_i, beta_j)."""
    T, s2e, s2b = p.T, p.sigma_eps_sq, p.sigma_beta_sq
    beta_prec = T / s2e + 1.0 / s2b
    # beta_j = const + (sum_k y_kj - sum_k tau_k) / (s2e beta_prec) + noise of variance 1/beta_prec
    w = 1.0 / (s2e * beta_prec)
    var_sum_tau = T * v + T * (T - 1) * c
    cov_tau_i_sum = v + (T - 1) * c
    return (v + 1.0 / beta_prec + w * w * var_sum_tau - 2.0 * w * cov_tau_i_sum)


def anova_decompose(p: AnovaParams, order: str = "tau_outer") -> AnovaTermBreakdown:
    """Closed-form three-term breakdown.

    Parameters
    ----------
    p : AnovaParams
    order : {"tau_outer", "beta_outer"}
        Which effect family forms the outer conditioning block. ``beta_outer``
        is the same computation with treatments and blocks interchanged; its
        ``a``, ``b`` and posterior moments refer to the block effects.
    """
    if order == "tau_outer":
        return _tau_outer(p)
    if order == "beta_outer":
        return replace(_tau_outer(p.swapped()), order="beta_outer")
    raise ValueError(f"order must be 'tau_outer' or 'beta_outer', got {order!r}")


def anova_sweep(p: AnovaParams, axis: str, grid: Iterable[float], order: str = "tau_outer") -> list[dict]:
    """Evaluate :func:`anova_decompose` along one parameter axis.

    Returns one dict per grid point with keys :data:`SWEEP_COLUMNS`.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    rows = []
    for x in grid:
        if axis in ("T", "B"):
            if int(x) != x:
                raise DomainError(f"{axis} grid values must be integers, got {x}")
            x = int(x)
        q = replace(p, **{axis: x})
        r = anova_decompose(q, order)
        p1, p2, p3 = r.proportions
        rows.append({
            "axis": x, "term1": r.term1, "term2": r.term2, "term3": r.term3,
            "total": r.total, "prop1": p1, "prop2": p2, "prop3": p3,
        })
    return rows


def first_crossing(rows: Sequence[dict], column: str = "prop2", threshold: float = 0.05):
    """First axis value whose ``column`` falls below ``threshold``, or None."""
    for r in rows:
        if r[column] < threshold:
            return r["axis"]
    return None


def sweep_array(rows: Sequence[dict]) -> np.ndarray:
    return np.array([[r[c] for c in SWEEP_COLUMNS] for r in rows], dtype=float)
