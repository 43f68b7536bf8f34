"""O-ring failure probability at launch conditions, averaged over links and covariate sets.

Each cell of the grid (link function x covariate subset) is a binomial GLM
for the number of damaged O-rings out of six. Within a cell the coefficient
posterior is sampled with a random-walk Metropolis chain; across cells the
posterior weights come from Laplace approximations of the marginal
likelihoods under uniform priors on links and covariate sets. The draws of
the launch-day failure probability are then decomposed both ways with
:func:`~varscope.bma.decompose_labeled_draws`.
"""
from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .bma import LabeledDraws, decompose_labeled_draws
from .model import TermReport

__all__ = [
    "ChallengerConfig",
    "ChallengerResult",
    "load_orings",
    "default_data_path",
    "run_challenger",
    "LINKS",
    "COLUMNS",
    "all_subsets",
]

COLUMNS = ("1", "t", "t2", "s")
LINKS = ("logit", "cloglog", "probit")


def all_subsets(cols: Sequence[str] = COLUMNS) -> tuple[tuple[str, ...], ...]:
    """Every non-empty subset of ``cols``; the intercept counts as a column."""
    return tuple(c for r in range(1, len(cols) + 1) for c in itertools.combinations(cols, r))


def default_data_path() -> Path:
    return Path(str(resources.files("varscope") / "data" / "orings.csv"))


@dataclass(frozen=True)
class ChallengerConfig:
    data_path: str | Path | None = None
    n_rings: int = 6
    t_star: float = 31.0
    s_star: float = 200.0
    links: tuple[str, ...] = LINKS
    model_space: tuple[tuple[str, ...], ...] = field(default_factory=all_subsets)
    prior_sd: float = 10.0
    seed: int = 20240531
    draws_per_model: int = 20_000
    burn_in: int = 5_000
    thin: int = 1
    workers: int = 1
    standardize: bool = True

    def __post_init__(self):
        for link in self.links:
            if link not in LINKS:
                raise ValueError(f"unknown link {link!r}")
        for m in self.model_space:
            if not m or any(c not in COLUMNS for c in m):
                raise ValueError(f"bad covariate set {m!r}")
        if self.draws_per_model < 2 or self.burn_in < 0 or self.prior_sd <= 0:
            raise ValueError("need draws_per_model >= 2, burn_in >= 0, prior_sd > 0")


def load_orings(path=None, drop_excluded: bool = True) -> dict[str, np.ndarray]:
    """Read the O-ring CSV; rows flagged ``exclude=1`` are dropped by default."""
    path = default_data_path() if path is None else Path(path)
    need = ("flight_id", "temp_F", "pressure_psi", "n_failures", "n_rings", "exclude")
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in need if c not in (rd.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [r for r in rd]
    if drop_excluded:
        rows = [r for r in rows if int(r["exclude"]) == 0]
    out = {
        "flight_id": np.array([int(r["flight_id"]) for r in rows]),
        "t": np.array([float(r["temp_F"]) for r in rows]),
        "s": np.array([float(r["pressure_psi"]) for r in rows]),
        "y": np.array([float(r["n_failures"]) for r in rows]),
        "m": np.array([float(r["n_rings"]) for r in rows]),
    }
    if np.any(out["y"] > out["m"]) or np.any(out["y"] < 0):
        raise ValueError("failure counts must lie in [0, n_rings]")
    return out


def _design(cols, t, s, center=None):
    """Design matrix; ``center`` maps column name to (mean, sd) for standardizing."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    full = {"1": np.ones_like(t), "t": t, "t2": t * t, "s": s}
    if center:
        full = {c: (v - center[c][0]) / center[c][1] if c in center else v for c, v in full.items()}
    return np.column_stack([full[c] for c in cols])


def _standardizer(data):
    t, s = data["t"], data["s"]
    return {c: (float(v.mean()), float(v.std())) for c, v in (("t", t), ("t2", t * t), ("s", s))}


# -- link functions ------------------------------------------------------------
# each returns (log p, log(1-p)) and, for Newton steps, dp/deta and d2p/deta2

def _log_probs(link, eta):
    if link == "logit":
        return special.log_expit(eta), special.log_expit(-eta)
    if link == "probit":
        return special.log_ndtr(eta), special.log_ndtr(-eta)
    if link == "cloglog":
        e = np.exp(np.minimum(eta, 700.0))
        return np.log(-np.expm1(-e)), -e
    raise ValueError(link)


def inv_link(link, eta):
    if link == "logit":
        return special.expit(eta)
    if link == "probit":
        return special.ndtr(eta)
    if link == "cloglog":
        return -np.expm1(-np.exp(np.minimum(eta, 700.0)))
    raise ValueError(link)


def _dp(link, eta):
    if link == "logit":
        p = special.expit(eta)
        d1 = p * (1 - p)
        return p, d1, d1 * (1 - 2 * p)
    if link == "probit":
        phi = np.exp(-0.5 * eta * eta) / math.sqrt(2 * math.pi)
        return special.ndtr(eta), phi, -eta * phi
    e = np.exp(eta)
    d1 = e * np.exp(-e)
    return -np.expm1(-e), d1, d1 * (1 - e)


class _Posterior:
    """Log posterior of a binomial GLM with independent normal priors."""

    def __init__(self, X, y, m, link, prior_var):
        self.X, self.y, self.m, self.link = X, y, m, link
        self.prior_prec = 1.0 / np.asarray(prior_var, dtype=float)
        self.d = X.shape[1]

    def loglik(self, beta):
        lp, lq = _log_probs(self.link, self.X @ beta)
        return float(np.dot(self.y, lp) + np.dot(self.m - self.y, lq))

    def logpost(self, beta):
        return self.loglik(beta) - 0.5 * float(np.dot(self.prior_prec * beta, beta))

    def grad_hess(self, beta):
        eta = self.X @ beta
        p, d1, d2 = _dp(self.link, eta)
        p = np.clip(p, 1e-300, 1 - 1e-16)
        a = self.y / p - (self.m - self.y) / (1 - p)
        b = -(self.y / p**2 + (self.m - self.y) / (1 - p) ** 2)
        g = self.X.T @ (a * d1) - self.prior_prec * beta
        w = b * d1 * d1 + a * d2
        H = (self.X * w[:, None]).T @ self.X - np.diag(self.prior_prec)
        return g, H

    def mode(self, max_iter=200):
        beta = np.zeros(self.d)
        f = self.logpost(beta)
        for _ in range(max_iter):
            g, H = self.grad_hess(beta)
            try:
                step = np.linalg.solve(-H, g)
            except np.linalg.LinAlgError:
                step = g * 1e-3
            if not np.all(np.isfinite(step)) or np.dot(step, g) <= 0:
                step = g / max(1.0, np.abs(np.diag(H)).max())
            t = 1.0
            while t > 1e-12:
                cand = beta + t * step
                fc = self.logpost(cand)
                if np.isfinite(fc) and fc >= f - 1e-12:
                    break
                t *= 0.5
            if abs(fc - f) < 1e-11 * (1 + abs(f)) and np.max(np.abs(t * step)) < 1e-9 * (1 + np.max(np.abs(beta))):
                beta, f = cand, fc
                break
            beta, f = cand, fc
        _, H = self.grad_hess(beta)
        return beta, -H


@dataclass
class CellResult:
    link: str
    cols: tuple[str, ...]
    log_evidence: float
    p_draws: np.ndarray
    acceptance: float
    mode: np.ndarray
    warning: str | None = None

    @property
    def label(self) -> str:
        return "+".join(self.cols)


def _run_cell(idx, link, cols, data, cfg: ChallengerConfig) -> CellResult:
    center = _standardizer(data) if cfg.standardize else None
    X = _design(cols, data["t"], data["s"], center)
    # unit-scale columns for numerical stability; the prior is rescaled so it
    # is still N(0, prior_sd^2) on the coefficients of X
    scale = np.sqrt(np.mean(X * X, axis=0))
    Xs = X / scale
    prior_var = cfg.prior_sd**2 * scale**2
    post = _Posterior(Xs, data["y"], data["m"], link, prior_var)
    beta_hat, prec = post.mode()
    # Laplace evidence; the marginal likelihood does not depend on the
    # coefficient scale as long as the prior density is transformed with it
    sign, logdet = np.linalg.slogdet(prec)
    if sign <= 0:
        raise RuntimeError(f"non-concave posterior at the mode for {link}/{cols}")
    d = post.d
    log_prior_norm = -0.5 * np.sum(np.log(2 * np.pi * prior_var))
    lbin = float(np.sum(special.gammaln(data["m"] + 1) - special.gammaln(data["y"] + 1)
                        - special.gammaln(data["m"] - data["y"] + 1)))
    log_ev = (post.logpost(beta_hat) + log_prior_norm + lbin
              + 0.5 * d * math.log(2 * math.pi) - 0.5 * logdet)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(idx,))))
    chol = np.linalg.cholesky(np.linalg.inv(prec))
    step = 2.38 / math.sqrt(d)
    beta, lp = beta_hat.copy(), post.logpost(beta_hat)
    x_star = _design(cols, [cfg.t_star], [cfg.s_star], center)[0] / scale
    n_keep = cfg.draws_per_model
    out = np.empty(n_keep)
    acc_window, acc_total, kept = 0, 0, 0
    total_iter = cfg.burn_in + n_keep * cfg.thin
    z = rng.standard_normal((total_iter, d))
    u = np.log(rng.random(total_iter))
    for it in range(total_iter):
        cand = beta + step * (chol @ z[it])
        lc = post.logpost(cand)
        if u[it] < lc - lp:
            beta, lp = cand, lc
            acc_window += 1
            if it >= cfg.burn_in:
                acc_total += 1
        if it < cfg.burn_in:
            if (it + 1) % 200 == 0:
                rate = acc_window / 200
                step *= math.exp(rate - 0.3)
                acc_window = 0
        elif (it - cfg.burn_in) % cfg.thin == 0:
            out[kept] = float(inv_link(link, x_star @ beta))
            kept += 1
    acc = acc_total / max(1, n_keep * cfg.thin)
    warn = None
    if not 0.1 <= acc <= 0.6:
        warn = f"{link}/{'+'.join(cols)}: acceptance rate {acc:.3f} outside [0.1, 0.6]"
    return CellResult(link, tuple(cols), float(log_ev), out, acc, beta_hat / scale, warn)


@dataclass
class ChallengerResult:
    reports: dict[str, TermReport]
    draws: LabeledDraws
    cells: list[CellResult]
    weights: np.ndarray
    posterior_mean: float
    posterior_sd: float
    warnings: list[str]

    def summary(self) -> dict:
        return {
            "posterior_mean_p": self.posterior_mean,
            "posterior_sd_p": self.posterior_sd,
            "decompositions": {k: {"terms": list(r.ordered()), "total": r.total} for k, r in self.reports.items()},
            "link_weights": self.link_weights(),
            "top_cells": [
                {"link": c.link, "model": c.label, "weight": float(w), "mean_p": float(c.p_draws.mean())}
                for c, w in sorted(zip(self.cells, self.weights), key=lambda x: -x[1])[:5]
            ],
            "warnings": self.warnings,
        }

    def link_weights(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c, w in zip(self.cells, self.weights):
            out[c.link] = out.get(c.link, 0.0) + float(w)
        return out


def run_challenger(cfg: ChallengerConfig = ChallengerConfig()) -> ChallengerResult:
    """Run every (link, covariate set) cell and decompose the averaged prediction.

    Returns both three-term decompositions (link outer, covariate set outer),
    the weighted draws, and the posterior mean of the launch-day failure
    probability. Output depends only on ``cfg`` (including its seed), not on
    ``cfg.workers``.
    """
    data = load_orings(cfg.data_path)
    jobs = [(link, cols) for link in cfg.links for cols in cfg.model_space]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            cells = list(ex.map(lambda a: _run_cell(a[0], *a[1], data, cfg), enumerate(jobs)))
    else:
        cells = [_run_cell(i, link, cols, data, cfg) for i, (link, cols) in enumerate(jobs)]
    log_ev = np.array([c.log_evidence for c in cells])
    # uniform priors over links and covariate sets: equal prior mass per cell
    wts = np.exp(log_ev - log_ev.max())
    wts /= wts.sum()
    v1, v2, pm, rw = [], [], [], []
    for c, w in zip(cells, wts):
        n = c.p_draws.size
        v1.extend([c.link] * n)
        v2.extend([c.label] * n)
        pm.append(c.p_draws)
        rw.append(np.full(n, w / n))
    pm = np.concatenate(pm)
    rw = np.concatenate(rw)
    draws = LabeledDraws(tuple(v1), tuple(v2), pm, np.zeros_like(pm), None, rw)
    reports = {
        "link_then_model": decompose_labeled_draws(draws, "v1_then_v2"),
        "model_then_link": decompose_labeled_draws(draws, "v2_then_v1"),
    }
    mean = float(np.dot(rw, pm) / rw.sum())
    sd = float(math.sqrt(np.dot(rw, (pm - mean) ** 2) / rw.sum()))
    warns = [c.warning for c in cells if c.warning]
    return ChallengerResult(reports, draws, cells, wts, mean, sd, warns)
