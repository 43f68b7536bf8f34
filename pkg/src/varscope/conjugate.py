"""Closed-form predictive-variance decompositions for conjugate families.

Every function returns a :class:`~varscope.model.TermReport` whose ``total``
comes from the family's predictive-variance formula, computed separately
from the terms, so ``report.is_conserved()`` is a genuine identity check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import CLOSED_FORM, DomainError, ExpansionPlan, HierarchySpec, Level, TermReport, VariableId

__all__ = [
    "NormalKnownVarParams",
    "BetaBinomialParams",
    "PoissonConjugateParams",
    "NNGParams",
    "BPGParams",
    "ThreeLevelNormalParams",
    "normal_known_var_decompose",
    "beta_binomial_decompose",
    "poisson_conjugate_decompose",
    "nng_decompose",
    "bpg_decompose",
    "three_level_normal_decompose",
    "FAMILIES",
]


def _positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value}")


def _nonneg_int(name, value):
    if int(value) != value or value < 0:
        raise DomainError(f"{name} must be a non-negative integer, got {value}")


# -- parameter records ---------------------------------------------------------

@dataclass(frozen=True)
class NormalKnownVarParams:
    """Normal likelihood with known variance and a normal prior on the mean.

    ``tau0_sq = 0`` is accepted as the point-mass prior limit.
    """

    mu0: float = 0.0
    tau0_sq: float = 1.0
    sigma0_sq: float = 1.0
    n: int = 0
    ybar: float = 0.0

    def __post_init__(self):
        _positive("sigma0_sq", self.sigma0_sq)
        if not (self.tau0_sq >= 0 and math.isfinite(self.tau0_sq)):
            raise DomainError(f"tau0_sq must be >= 0, got {self.tau0_sq}")
        _nonneg_int("n", self.n)

    @property
    def tau_n_sq(self) -> float:
        if self.tau0_sq == 0:
            return 0.0
        return self.sigma0_sq * self.tau0_sq / (self.sigma0_sq + self.n * self.tau0_sq)

    @property
    def mu_n(self) -> float:
        if self.tau0_sq == 0:
            return self.mu0
        return (self.mu0 / self.tau0_sq + self.n * self.ybar / self.sigma0_sq) * self.tau_n_sq


@dataclass(frozen=True)
class BetaBinomialParams:
    alpha: float = 1.0
    beta: float = 1.0
    successes: int = 0
    trials_total: int = 0
    m_next: int = 1

    def __post_init__(self):
        _positive("alpha", self.alpha)
        _positive("beta", self.beta)
        for name in ("successes", "trials_total", "m_next"):
            _nonneg_int(name, getattr(self, name))
        if self.successes > self.trials_total:
            raise DomainError(
                f"successes ({self.successes}) exceed trials_total ({self.trials_total})"
            )

    @property
    def alpha_n(self) -> float:
        return self.alpha + self.successes

    @property
    def beta_n(self) -> float:
        return self.beta + self.trials_total - self.successes


@dataclass(frozen=True)
class PoissonConjugateParams:
    alpha: float = 1.0
    beta: float = 1.0
    s: float = 0.0
    n: int = 0

    def __post_init__(self):
        _positive("alpha", self.alpha)
        if not self.beta >= 0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if not self.s >= 0:
            raise DomainError(f"s must be >= 0, got {self.s}")
        _nonneg_int("n", self.n)
        if self.beta + self.n <= 0:
            raise DomainError("beta + n must be positive")

    @property
    def shape_n(self) -> float:
        return self.alpha + self.s

    @property
    def rate_n(self) -> float:
        return self.beta + self.n


@dataclass(frozen=True)
class NNGParams:
    """Normal likelihood, normal prior on the mean, gamma prior on the precision.

    Data may be given as raw observations ``y`` or as sufficient statistics
    ``(n, ybar, sum_sq)``.
    """

    mu0: float = 0.0
    kappa0: float = 1.0
    alpha0: float = 2.0
    beta0: float = 1.0
    n: int = 0
    ybar: float = 0.0
    sum_sq: float = 0.0

    def __post_init__(self):
        _positive("kappa0", self.kappa0)
        _positive("beta0", self.beta0)
        _nonneg_int("n", self.n)
        if self.sum_sq < 0 or (self.n > 0 and self.sum_sq < self.n * self.ybar**2 * (1 - 1e-12)):
            raise DomainError("sum_sq is inconsistent with n and ybar")
        if not self.alpha_n > 1:
            raise DomainError(
                f"alpha_n = alpha0 + n/2 = {self.alpha_n} must exceed 1 for the mean of the variance to exist"
            )

    @classmethod
    def from_data(cls, y: Sequence[float], mu0=0.0, kappa0=1.0, alpha0=2.0, beta0=1.0) -> "NNGParams":
        y = np.asarray(y, dtype=float)
        n = y.size
        ybar = float(y.mean()) if n else 0.0
        return cls(mu0, kappa0, alpha0, beta0, n, ybar, float(np.sum(y * y)))

    @property
    def kappa_n(self) -> float:
        return self.kappa0 + self.n

    @property
    def alpha_n(self) -> float:
        return self.alpha0 + self.n / 2

    @property
    def mu_n(self) -> float:
        return (self.n * self.ybar + self.kappa0 * self.mu0) / self.kappa_n

    @property
    def beta_n(self) -> float:
        return self.beta0 + 0.5 * (
            self.sum_sq + self.kappa0 * self.mu0**2 - self.kappa_n * self.mu_n**2
        )


@dataclass(frozen=True)
class BPGParams:
    """Binomial thinning of a Poisson count with a gamma prior on the rate."""

    p: float = 0.5
    a: float = 1.0
    b: float = 1.0
    s: float = 0.0
    n: int = 0

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        _positive("a", self.a)
        _positive("b", self.b)
        if not self.s >= 0:
            raise DomainError(f"s must be >= 0, got {self.s}")
        _nonneg_int("n", self.n)

    @property
    def shape_n(self) -> float:
        return self.s + self.a

    @property
    def rate_n(self) -> float:
        return self.b + self.p * self.n


@dataclass(frozen=True)
class ThreeLevelNormalParams:
    """y | mu ~ N(mu, sigma0_sq), mu | nu ~ N(nu, tau0_sq), nu ~ N(a, b_sq)."""

    sigma0_sq: float = 1.0
    tau0_sq: float = 1.0
    a: float = 0.0
    b_sq: float = 1.0
    n: int = 1
    ybar: float = 0.0

    def __post_init__(self):
        _positive("sigma0_sq", self.sigma0_sq)
        _positive("tau0_sq", self.tau0_sq)
        if not (self.b_sq >= 0 and math.isfinite(self.b_sq)):
            raise DomainError(f"b_sq must be >= 0, got {self.b_sq}")
        _nonneg_int("n", self.n)
        if self.n < 1:
            raise DomainError("n must be >= 1")

    @property
    def eta_n(self) -> float:
        """Posterior variance of mu given the data (nu integrated out)."""
        return 1.0 / (self.n / self.sigma0_sq + 1.0 / (self.tau0_sq + self.b_sq))


# -- decompositions ------------------------------------------------------------

def _report(plan, terms, total, params=None, **diag):
    if params is not None:
        # same key as the matching Monte Carlo adapter, for conservation checks
        diag["model"] = f"{diag.get('family')}:{params!r}"
    return TermReport(plan, tuple(terms), total, CLOSED_FORM, diag)


def normal_known_var_decompose(p: NormalKnownVarParams) -> TermReport:
    """Two terms: likelihood noise and posterior variance of the mean."""
    s2, t2, n = p.sigma0_sq, p.tau0_sq, p.n
    term0 = s2
    term1 = s2 * t2 / (s2 + n * t2)
    total = s2 + p.tau_n_sq
    return _report(ExpansionPlan((("mu",),)), (term0, term1), total, params=p, family="normal-known-var")


def beta_binomial_decompose(p: BetaBinomialParams) -> TermReport:
    """Binomial noise term and success-probability term for ``m_next`` future trials."""
    an, bn, m = p.alpha_n, p.beta_n, p.m_next
    s = an + bn
    term0 = m * an * bn / (s * (s + 1))
    term1 = m * m * an * bn / (s * s * (s + 1))
    # beta-binomial variance, written in its usual form
    total = m * (an * bn / s**2) * ((s + m) / (s + 1))
    return _report(ExpansionPlan((("p",),)), (term0, term1), total, params=p, family="beta-binomial")


def poisson_conjugate_decompose(p: PoissonConjugateParams) -> TermReport:
    shape, rate = p.shape_n, p.rate_n
    term0 = shape / rate
    term1 = shape / rate**2
    total = shape / rate * (1 + 1 / rate)
    return _report(ExpansionPlan((("lambda",),)), (term0, term1), total, params=p, family="poisson-gamma")


def nng_plan(order: str) -> ExpansionPlan:
    if order == "mu_first":
        return ExpansionPlan((("lambda2",), ("mu",)))
    if order == "lambda_first":
        return ExpansionPlan((("mu",), ("lambda2",)))
    raise ValueError(f"order must be 'mu_first' or 'lambda_first', got {order!r}")


def nng_decompose(p: NNGParams, order: str = "mu_first") -> TermReport:
    """Three-term split of the Student-t predictive variance.

    ``mu_first`` takes the variance over the mean innermost, so the term for
    the precision block vanishes (the mean of the mean does not depend on the
    precision). ``lambda_first`` is the reverse and the other middle term
    vanishes. Terms are stored by block index; use ``ordered()`` for
    ``(leading, inner, outer)``.
    """
    plan = nng_plan(order)
    kn, an, bn = p.kappa_n, p.alpha_n, p.beta_n
    lead = bn / (an - 1)
    mean_var = bn / (kn * (an - 1))
    if order == "mu_first":
        terms = (lead, 0.0, mean_var)  # block 1 = lambda2, block 2 = mu
    else:
        terms = (lead, mean_var, 0.0)  # block 1 = mu, block 2 = lambda2
    total = (kn + 1) / kn * bn / (an - 1)
    return _report(plan, terms, total, params=p, family="nng", order=order, kappa_n=kn, alpha_n=an, beta_n=bn, mu_n=p.mu_n)


def bpg_decompose(p: BPGParams, order: str = "N_first", reduce: bool = True) -> TermReport:
    """Binomial, Poisson and gamma variability.

    ``N_first`` conditions on the rate then on the count and gives three
    terms. ``lambda_first`` conditions on the count first; the rate is then
    irrelevant, so by default the rate is left latent and two terms remain.
    ``reduce=False`` keeps it as a block with a zero term.
    """
    pp, shape, rate = p.p, p.shape_n, p.rate_n
    lam_mean = shape / rate
    binom = pp * (1 - pp) * lam_mean
    poiss = pp * pp * lam_mean
    gam = pp * pp * shape / rate**2
    total = pp * shape / rate * (1 + pp / rate)
    if order == "N_first":
        plan = ExpansionPlan((("lambda",), ("N",)))
        terms = (binom, gam, poiss)
    elif order == "lambda_first":
        if reduce:
            plan = ExpansionPlan((("N",),), ("lambda",))
            terms = (binom, poiss + gam)
        else:
            plan = ExpansionPlan((("N",), ("lambda",)))
            terms = (binom, poiss + gam, 0.0)
    else:
        raise ValueError(f"order must be 'N_first' or 'lambda_first', got {order!r}")
    return _report(plan, terms, total, params=p, family="bpg", order=order)


def three_level_normal_decompose(p: ThreeLevelNormalParams) -> TermReport:
    """Three terms for the plan conditioning on ``nu`` then ``mu``.

    The diagnostics carry ``var_given_mu`` and ``var_given_nu``, the
    predictive variances after conditioning on a single level.
    """
    s2, t2, b2, n = p.sigma0_sq, p.tau0_sq, p.b_sq, p.n
    inner = 1.0 / (n / s2 + 1.0 / t2)  # Var(mu | nu, y)
    if b2 == 0:
        outer = 0.0
    else:
        outer = inner**2 / (t2 * t2 * (1.0 / b2 + 1.0 / (t2 + s2 / n)))
    total = s2 + p.eta_n
    plan = ExpansionPlan((("nu",), ("mu",)))
    return _report(
        plan,
        (s2, outer, inner),
        total,
        params=p,
        family="normal-3level",
        var_given_mu=s2,
        var_given_nu=s2 + inner,
    )


# -- registry used by the CLI and by spec documents ---------------------------

FAMILIES = {
    "normal-known-var": (NormalKnownVarParams, normal_known_var_decompose),
    "beta-binomial": (BetaBinomialParams, beta_binomial_decompose),
    "poisson-gamma": (PoissonConjugateParams, poisson_conjugate_decompose),
    "nng": (NNGParams, nng_decompose),
    "bpg": (BPGParams, bpg_decompose),
    "normal-3level": (ThreeLevelNormalParams, three_level_normal_decompose),
}

_FAMILY_VARS = {
    "normal-known-var": ("mu",),
    "beta-binomial": ("p",),
    "poisson-gamma": ("lambda",),
    "nng": ("mu", "lambda2"),
    "bpg": ("lambda", "N"),
    "normal-3level": ("nu", "mu"),
}


def family_spec(family: str, params) -> HierarchySpec:
    """A :class:`HierarchySpec` naming the levels of a built-in family."""
    if family not in _FAMILY_VARS:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILY_VARS)}")
    names = _FAMILY_VARS[family]
    levels = tuple(Level(VariableId(nm, i), family, {}) for i, nm in enumerate(names, start=1))
    lik = {"dist": family, "params": dict(vars(params))}
    return HierarchySpec(levels, lik)
