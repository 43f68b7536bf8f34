"""Exact conditioning for jointly Gaussian blocks via Schur complements.

A :class:`CovarianceModel` holds a block-partitioned covariance over named
blocks, conventionally ``Y`` (the future observation), ``D`` (the data) and
hierarchy levels ``V1, V2, ...``. Conditional variances of a Gaussian do not
depend on the conditioning values, which makes every expected conditional
variance a plain Schur complement and lets :func:`gaussian_term_decompose`
produce exact expansion terms by telescoping.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .model import CLOSED_FORM, ExpansionPlan, TermReport

__all__ = [
    "SingularConditioningError",
    "CovarianceModel",
    "conditional_moments",
    "conditional_cov",
    "partial_corr_sq",
    "build_ci_covariance",
    "gaussian_term_decompose",
    "linear_gaussian_model",
    "three_level_normal_model",
    "anova_model",
]


class SingularConditioningError(np.linalg.LinAlgError):
    """The covariance of the conditioning blocks is (numerically) singular."""


@dataclass(frozen=True)
class CovarianceModel:
    """Joint Gaussian over named blocks.

    Parameters
    ----------
    block_names : sequence of str
    block_dims : sequence of int
        Dimension of each block, in the same order.
    sigma : (d, d) array
        Symmetric positive-definite covariance.
    mean : (d,) array, optional
    allow_singular : bool
        Skip the Cholesky check. Used for degenerate hierarchies where one
        level duplicates another.
    """

    block_names: tuple[str, ...]
    block_dims: tuple[int, ...]
    sigma: np.ndarray
    mean: np.ndarray | None = None
    allow_singular: bool = False
    _slices: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.block_names)
        dims = tuple(int(d) for d in self.block_dims)
        if len(names) != len(dims):
            raise ValueError("block_names and block_dims differ in length")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names in {names}")
        if any(d < 1 for d in dims):
            raise ValueError("block dimensions must be >= 1")
        sigma = np.array(self.sigma, dtype=float)
        d = sum(dims)
        if sigma.shape != (d, d):
            raise ValueError(f"sigma has shape {sigma.shape}, expected {(d, d)}")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(sigma).max())):
            raise ValueError("sigma is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        if not self.allow_singular:
            try:
                np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError:
                raise ValueError("sigma is not positive definite") from None
        mean = np.zeros(d) if self.mean is None else np.asarray(self.mean, dtype=float).reshape(d)
        sigma.setflags(write=False)
        mean.setflags(write=False)
        offs = np.concatenate([[0], np.cumsum(dims)])
        slices = {nm: np.arange(offs[i], offs[i + 1]) for i, nm in enumerate(names)}
        object.__setattr__(self, "block_names", names)
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "_slices", slices)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def index(self, blocks: str | Sequence[str]) -> np.ndarray:
        if isinstance(blocks, str):
            blocks = (blocks,)
        out = []
        for b in blocks:
            if b not in self._slices:
                raise KeyError(f"unknown block {b!r}; have {self.block_names}")
            out.append(self._slices[b])
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def to_json(self) -> str:
        return json.dumps({
            "blocks": [{"name": n, "dim": d} for n, d in zip(self.block_names, self.block_dims)],
            "sigma": self.sigma.tolist(),
            "mean": self.mean.tolist(),
        })

    @classmethod
    def from_json(cls, doc: str | Mapping) -> "CovarianceModel":
        obj = json.loads(doc) if isinstance(doc, str) else doc
        names = [b["name"] for b in obj["blocks"]]
        dims = [b["dim"] for b in obj["blocks"]]
        return cls(tuple(names), tuple(dims), np.array(obj["sigma"]), obj.get("mean"))


def _as_tuple(x) -> tuple[str, ...]:
    if isinstance(x, str):
        return (x,)
    return tuple(x)


def conditional_moments(m: CovarianceModel, target, given=()) -> tuple[np.ndarray, np.ndarray]:
    """Conditional covariance of ``target`` and regression coefficients on ``given``.

    Returns
    -------
    cov : (dt, dt) array
        ``S_tt - S_tg S_gg^{-1} S_gt``.
    coef : (dt, dg) array
        ``S_tg S_gg^{-1}``.

    Raises
    ------
    SingularConditioningError
        If ``S_gg`` is singular; the message reports its condition number.
    """
    target, given = _as_tuple(target), _as_tuple(given)
    overlap = set(target) & set(given)
    if overlap:
        raise ValueError(f"target blocks also in given: {sorted(overlap)}")
    it = m.index(target)
    S = m.sigma
    Stt = S[np.ix_(it, it)]
    if not given:
        return Stt.copy(), np.zeros((it.size, 0))
    ig = m.index(given)
    Sgg = S[np.ix_(ig, ig)]
    Stg = S[np.ix_(it, ig)]
    try:
        cf = linalg.cho_factor(Sgg, lower=True, check_finite=True)
        cond = np.linalg.cond(Sgg)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, linalg.LinAlgError):
        cond = np.linalg.cond(Sgg)
        raise SingularConditioningError(
            f"covariance of given blocks {given} is singular (condition number {cond:.3g})"
        ) from None
    coef = linalg.cho_solve(cf, Stg.T).T
    cov = Stt - coef @ Stg.T
    return 0.5 * (cov + cov.T), coef


def conditional_cov(m: CovarianceModel, a: str, b: str, given=()) -> np.ndarray:
    """Cross covariance of blocks ``a`` and ``b`` given ``given``."""
    cov, _ = conditional_moments(m, (a, b), given)
    da = m.index(a).size
    return cov[:da, da:]


def _scalar_var(m, target, given) -> float:
    cov, _ = conditional_moments(m, target, given)
    if cov.shape != (1, 1):
        raise ValueError(f"target {target!r} must be one-dimensional for a scalar variance")
    return float(cov[0, 0])


def partial_corr_sq(m: CovarianceModel, y: str, v: str, given=()) -> float:
    """Squared partial correlation of scalar blocks ``y`` and ``v`` given ``given``."""
    cov, _ = conditional_moments(m, (y, v), given)
    if cov.shape != (2, 2):
        raise ValueError("partial correlation needs two scalar blocks")
    return float(cov[0, 1] ** 2 / (cov[0, 0] * cov[1, 1]))


def gaussian_term_decompose(
    m: CovarianceModel,
    plan: ExpansionPlan | Sequence[Sequence[str]],
    target: str = "Y",
    data: Sequence[str] = ("D",),
) -> TermReport:
    """Exact expansion terms for a Gaussian model.

    ``term_0 = Var(Y | D, B_1..B_u)`` and
    ``term_k = Var(Y | D, B_1..B_{k-1}) - Var(Y | D, B_1..B_k)``; the total is
    ``Var(Y | D)``. An empty plan gives the single term ``Var(Y | D)``.
    """
    if not isinstance(plan, ExpansionPlan):
        plan = ExpansionPlan(tuple(tuple(b) for b in plan))
    data = tuple(d for d in _as_tuple(data) if d in m.block_names)
    cond = [_scalar_var(m, target, data)]
    prefix = list(data)
    for block in plan.blocks:
        prefix.extend(block)
        cond.append(_scalar_var(m, target, tuple(prefix)))
    terms = [cond[-1]] + [cond[k - 1] - cond[k] for k in range(1, len(cond))]
    return TermReport(plan, tuple(terms), cond[0], CLOSED_FORM, {"conditional_variances": cond})


# -- model builders ------------------------------------------------------------

def linear_gaussian_model(
    loadings: Mapping[str, np.ndarray],
    latent_var: np.ndarray,
    order: Sequence[str] | None = None,
    allow_singular: bool = False,
) -> CovarianceModel:
    """Covariance of blocks that are linear maps of independent latent normals.

    Each block ``name`` equals ``loadings[name] @ z`` where ``z`` has
    independent components with variances ``latent_var``. The covariance is
    ``L diag(latent_var) L^T``, built without any conditioning algebra, which
    is what makes these models useful as oracles.
    """
    order = list(order or loadings)
    rows = [np.atleast_2d(np.asarray(loadings[n], dtype=float)) for n in order]
    L = np.vstack(rows)
    S = (L * np.asarray(latent_var, dtype=float)) @ L.T
    return CovarianceModel(tuple(order), tuple(r.shape[0] for r in rows), S, allow_singular=allow_singular)


def three_level_normal_model(sigma0_sq, tau0_sq, b_sq, n) -> CovarianceModel:
    """Blocks ``Y, D, V1 = nu, V2 = mu`` for the three-level normal hierarchy."""
    # latent order: nu, mu-deviation, eps_1..eps_n, eps_new
    k = n + 3
    lv = np.r_[b_sq, tau0_sq, np.full(n, sigma0_sq), sigma0_sq]
    nu = np.zeros(k); nu[0] = 1
    mu = np.zeros(k); mu[:2] = 1
    D = np.zeros((n, k)); D[:, :2] = 1; D[np.arange(n), 2 + np.arange(n)] = 1
    Y = mu.copy(); Y[-1] = 1
    return linear_gaussian_model(
        {"Y": Y, "D": D, "nu": nu, "mu": mu}, lv, allow_singular=(b_sq == 0)
    )


def anova_model(T, B, sigma_eps_sq, sigma_tau_sq, sigma_beta_sq, i=0, j=0) -> CovarianceModel:
    """Joint normal of the two-way random-coefficient model.

    Blocks are ``Y`` (a fresh observation in cell ``(i, j)``), ``D`` (the
    ``T x B`` table, row-major), ``tau`` (T treatment effects) and ``beta``
    (B block effects). Location hyperparameters are set to zero since they
    do not affect variances.
    """
    nz = T + B + T * B + 1
    lv = np.r_[np.full(T, sigma_tau_sq), np.full(B, sigma_beta_sq), np.full(T * B + 1, sigma_eps_sq)]
    tau = np.eye(T, nz)
    beta = np.zeros((B, nz)); beta[:, T:T + B] = np.eye(B)
    D = np.zeros((T * B, nz))
    for r in range(T):
        for c in range(B):
            row = r * B + c
            D[row, r] = 1
            D[row, T + c] = 1
            D[row, T + B + row] = 1
    Y = np.zeros(nz); Y[i] = 1; Y[T + j] = 1; Y[-1] = 1
    return linear_gaussian_model({"Y": Y, "D": D, "tau": tau, "beta": beta}, lv)


def build_ci_covariance(dims: Mapping[str, int] | Sequence[int] = (1, 1, 1, 1), seed: int = 0,
                        max_attempts: int = 1000, duplicate_v2: bool = False) -> CovarianceModel:
    """Random Gaussian over ``Y, V1, V2, D`` with ``(Y, D)`` independent of ``V2`` given ``V1``.

    ``V2`` is generated as ``A V1 + noise``, and ``(Y, D)`` as a linear map
    of ``V1`` plus noise independent of everything else, so every partial
    covariance of ``(Y, D)`` with ``V2`` given ``V1`` vanishes. The contract
    is re-checked numerically before returning.

    Parameters
    ----------
    dims : mapping or sequence
        Dimensions for ``Y, V1, V2, D``. ``Y`` must be 1.
    duplicate_v2 : bool
        Make ``V2`` an exact copy of ``V1`` (the degenerate hierarchy). The
        returned model is then singular and built with ``allow_singular``.
    """
    if isinstance(dims, Mapping):
        dy, d1, d2, dd = (int(dims[k]) for k in ("Y", "V1", "V2", "D"))
    else:
        dy, d1, d2, dd = (int(x) for x in dims)
    if min(dy, d1, d2, dd) < 1:
        raise ValueError("all block dimensions must be >= 1")
    if dy != 1:
        raise ValueError("Y must be one-dimensional")
    if duplicate_v2:
        d2 = d1
    rng = np.random.default_rng(seed)
    names = ("Y", "V1", "V2", "D")
    for _ in range(max_attempts):
        # latent: V1 base, V2 noise, (Y,D) noise
        k1, k2, k3 = d1, d2, dy + dd
        G = rng.standard_normal((d1, d1))
        A = rng.standard_normal((d2, d1))
        C = rng.standard_normal((dy + dd, d1))
        R = rng.standard_normal((dy + dd, dy + dd))
        L = np.zeros((dy + d1 + d2 + dd, k1 + k2 + k3))
        v1 = slice(dy, dy + d1)
        v2 = slice(dy + d1, dy + d1 + d2)
        yd = np.r_[np.arange(dy), np.arange(dy + d1 + d2, dy + d1 + d2 + dd)]
        L[v1, :k1] = G
        if duplicate_v2:
            L[v2, :k1] = G
        else:
            L[v2, :k1] = A @ G
            L[v2, k1:k1 + k2] = np.diag(rng.uniform(0.3, 2.0, d2))
        L[yd, :k1] = C @ G
        L[yd, k1 + k2:] = R
        S = L @ L.T
        try:
            m = CovarianceModel(names, (dy, d1, d2, dd), S, allow_singular=duplicate_v2)
        except ValueError:
            continue
        if np.linalg.cond(S[np.ix_(m.index("V1"), m.index("V1"))]) > 1e8:
            continue
        resid = conditional_cov(m, "V2", "Y", "V1"), conditional_cov(m, "V2", "D", "V1")
        scale = np.abs(S).max()
        if duplicate_v2 or all(np.abs(r).max() <= 1e-12 * scale for r in resid):
            return m
    raise RuntimeError(f"no positive-definite draw satisfying the constraint in {max_attempts} attempts")
