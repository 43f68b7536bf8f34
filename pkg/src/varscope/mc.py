"""Nested Monte Carlo estimates of expansion terms.

For a plan with blocks ``B_1..B_u`` each outer draw builds a sampling tree:
``n_inner`` draws of ``B_1``, then for each of those ``n_inner`` draws of
``B_2`` given it, and so on. Leaves evaluate the adapter's predictive
moments. Walking back up, every node's conditional mean is the average of
its children's, and

* ``term_0`` is the average leaf predictive variance,
* ``term_k`` is the sample variance (divisor ``n_inner - 1``) of the level-k
  conditional means within each sibling group, minus the average Monte Carlo
  noise of those means, averaged over the level-(k-1) nodes.

The noise correction makes each ``term_k`` unbiased; it is zero at the
deepest level, where node means are exact. Latent variables are handled as an
extra trailing block whose between-draw variance is added to ``term_0``.

An independent estimate of the total is taken from one extra full-chain draw
per outer draw, so comparing it with the term sum is a real check.

Every outer draw gets its own generator seeded from ``(seed, draw index)``
and results are reduced in draw order, so output does not depend on the
number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .model import MONTE_CARLO, CLOSED_FORM, ExpansionPlan, TermReport

__all__ = [
    "ModelAdapter",
    "McBudget",
    "AdapterError",
    "estimate_decomposition",
    "conservation_check",
    "ConservationResult",
    "default_workers",
]


class AdapterError(RuntimeError):
    """A model adapter failed while sampling a block."""


class ModelAdapter(Protocol):
    """Interface the engine needs from a model.

    ``sample`` draws the named variables from their posterior conditional on
    the data and on ``given`` (arrays of length ``size``), returning a dict of
    arrays of length ``size``. ``predictive_mean`` and ``predictive_var``
    receive a dict holding every variable of the model.
    """

    variables: tuple[str, ...]
    thread_safe: bool

    def sample(self, names: Sequence[str], given: Mapping[str, np.ndarray], size: int,
               rng: np.random.Generator) -> dict[str, np.ndarray]: ...

    def predictive_mean(self, values: Mapping[str, np.ndarray]) -> np.ndarray: ...

    def predictive_var(self, values: Mapping[str, np.ndarray]) -> np.ndarray: ...


@dataclass(frozen=True)
class McBudget:
    n_outer: int = 10_000
    n_inner: int = 64
    seed: int = 0

    def __post_init__(self):
        if int(self.n_outer) != self.n_outer or self.n_outer < 2:
            raise ValueError(f"n_outer must be an integer >= 2, got {self.n_outer}")
        if int(self.n_inner) != self.n_inner or self.n_inner < 2:
            raise ValueError(f"n_inner must be an integer >= 2, got {self.n_inner}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")


def default_workers() -> int:
    env = os.environ.get("VARSCOPE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"VARSCOPE_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return 1


def _draw_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(i,))))


def _sample(adapter, level, names, given, size, rng):
    try:
        out = adapter.sample(names, given, size, rng)
    except Exception as exc:
        raise AdapterError(f"sampling block {level} {tuple(names)} failed: {exc}") from exc
    for nm in names:
        if nm not in out:
            raise AdapterError(f"sampling block {level} did not return variable {nm!r}")
    return out


def _one_draw(adapter, levels, n_latent_level, J, rng):
    """Terms for one outer draw plus one independent chain draw.

    ``levels`` includes the latent block last when ``n_latent_level`` is set.
    Returns (terms_by_level, pm_chain, pv_chain) where terms_by_level[0] is
    the leading term with any latent contribution already folded in.
    """
    U = len(levels)
    given: dict[str, np.ndarray] = {}
    size = 1
    for k, names in enumerate(levels, start=1):
        rep = {nm: np.repeat(v, J) for nm, v in given.items()}
        size *= J
        draw = _sample(adapter, k, names, rep, size, rng)
        rep.update({nm: np.asarray(draw[nm], dtype=float).reshape(size) for nm in names})
        given = rep
    pm = np.asarray(adapter.predictive_mean(given), dtype=float).reshape(size)
    pv = np.asarray(adapter.predictive_var(given), dtype=float).reshape(size)
    if np.any(pv < 0) or not np.all(np.isfinite(pv)) or not np.all(np.isfinite(pm)):
        raise AdapterError("predictive moments must be finite with non-negative variance")

    terms = np.zeros(U + 1)
    terms[0] = pv.mean()
    means = pm  # node means at the current level, shape J**k
    noise = np.zeros_like(pm)  # unbiased estimates of Var(node mean estimate)
    for k in range(U, 0, -1):
        groups = means.reshape(-1, J)
        s2 = groups.var(axis=1, ddof=1)
        terms[k] = np.mean(s2 - noise.reshape(-1, J).mean(axis=1))
        means = groups.mean(axis=1)
        noise = s2 / J

    # independent single chain for the total
    chain: dict[str, np.ndarray] = {}
    for k, names in enumerate(levels, start=1):
        draw = _sample(adapter, k, names, chain, 1, rng)
        chain.update({nm: np.asarray(draw[nm], dtype=float).reshape(1) for nm in names})
    cpm = float(np.asarray(adapter.predictive_mean(chain), dtype=float).reshape(-1)[0])
    cpv = float(np.asarray(adapter.predictive_var(chain), dtype=float).reshape(-1)[0])

    if n_latent_level:
        terms[0] += terms[U]
        terms = terms[:U]
    return terms, cpm, cpv


def estimate_decomposition(adapter, plan: ExpansionPlan, budget: McBudget,
                           workers: int | None = None) -> TermReport:
    """Nested Monte Carlo estimate of every term of ``plan``.

    Parameters
    ----------
    adapter : ModelAdapter
    plan : ExpansionPlan
        Blocks name adapter variables; any adapter variable absent from the
        blocks is treated as latent.
    budget : McBudget
    workers : int, optional
        Thread count; defaults to ``VARSCOPE_THREADS`` or 1. Serial adapters
        (``thread_safe = False``) always run on one thread.

    Returns
    -------
    TermReport
        ``diagnostics`` holds per-term standard errors, the independent
        total's standard error, the budget and the seed.
    """
    known = tuple(adapter.variables)
    used = [n for b in plan.blocks for n in b]
    for n in used:
        if n not in known:
            raise ValueError(f"plan uses {n!r}, which the adapter does not provide ({known})")
    if len(set(used)) != len(used):
        raise ValueError("plan repeats a variable")
    latent = tuple(n for n in known if n not in used)
    levels = [tuple(b) for b in plan.blocks] + ([latent] if latent else [])
    if plan.latent and set(plan.latent) != set(latent):
        raise ValueError(f"plan latent set {plan.latent} does not match the adapter's remainder {latent}")
    out_plan = ExpansionPlan(plan.blocks, latent)

    J, N = int(budget.n_inner), int(budget.n_outer)
    workers = default_workers() if workers is None else max(1, int(workers))
    if not getattr(adapter, "thread_safe", False):
        workers = 1

    u = plan.u
    T = np.empty((N, u + 1))
    cpm = np.empty(N)
    cpv = np.empty(N)

    def run(lo, hi):
        for i in range(lo, hi):
            T[i], cpm[i], cpv[i] = _one_draw(adapter, levels, bool(latent), J, _draw_rng(budget.seed, i))

    if workers == 1:
        run(0, N)
    else:
        edges = np.linspace(0, N, min(N, workers * 8) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
            for f in futs:
                f.result()

    raw = T.mean(axis=0)
    term_se = T.std(axis=0, ddof=1) / math.sqrt(N)
    sums = T.sum(axis=1)
    sum_se = float(sums.std(ddof=1) / math.sqrt(N))
    terms = raw.copy()
    clipped = [k for k in range(1, u + 1) if terms[k] < 0]
    terms[clipped] = 0.0

    mu = cpm.mean()
    total = cpv.mean() + cpm.var(ddof=1)
    # delta-method standard error of the independent total
    contrib = cpv + (cpm - mu) ** 2 * N / (N - 1)
    total_se = float(contrib.std(ddof=1) / math.sqrt(N))

    diag = {
        "n_outer": N,
        "n_inner": J,
        "seed": int(budget.seed),
        "term_se": term_se.tolist(),
        "raw_terms": raw.tolist(),
        "clipped_terms": clipped,
        "sum_se": sum_se,
        "total_se": total_se,
        "model": getattr(adapter, "model_key", None),
    }
    return TermReport(out_plan, tuple(terms), total, MONTE_CARLO, diag)


@dataclass(frozen=True)
class ConservationResult:
    max_gap: float
    tolerance: float
    passed: bool
    totals: tuple[float, ...]


def conservation_check(reports: Sequence[TermReport]) -> ConservationResult:
    """Compare totals of several reports on the same model and data.

    Closed-form pairs must agree to 1e-12 relative; pairs involving a
    stochastic report must agree within three combined standard errors.
    Reports whose diagnostics name different models are rejected.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to compare")
    keys = {r.diagnostics.get("model") for r in reports} - {None}
    if len(keys) > 1:
        raise ValueError(f"reports describe different models: {sorted(map(str, keys))}")
    gap, worst_ratio, tol_at_worst = 0.0, -1.0, 0.0
    totals = tuple(r.total for r in reports)
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            a, b = reports[i], reports[j]
            g = abs(a.total - b.total)
            if a.method == CLOSED_FORM and b.method == CLOSED_FORM:
                tol = 1e-12 * max(1.0, abs(a.total), abs(b.total))
            else:
                tol = 3.0 * math.hypot(_total_se(a), _total_se(b))
            gap = max(gap, g)
            ratio = g / tol if tol > 0 else (0.0 if g == 0 else math.inf)
            if ratio > worst_ratio:
                worst_ratio, tol_at_worst = ratio, tol
    if len(reports) == 1:
        return ConservationResult(0.0, 0.0, True, totals)
    return ConservationResult(gap, tol_at_worst, worst_ratio <= 1.0, totals)


def _total_se(r: TermReport) -> float:
    if r.method == CLOSED_FORM:
        return 0.0
    return float(r.diagnostics.get("total_se", 0.0))
