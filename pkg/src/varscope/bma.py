"""Model-averaging decompositions from weight tables and labeled draws.

:func:`bma_two_term` splits a model-averaged predictive variance into the
weighted within-model variance and the weighted spread of model means.
:func:`decompose_labeled_draws` does the three-term version on a finite set
of draws tagged by two labels (for example link function and covariate
set), treating every ``(label1, label2)`` cell as the innermost level.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import CLOSED_FORM, EMPIRICAL_DRAWS, ExpansionPlan, TermReport

__all__ = [
    "ModelWeightTable",
    "LabeledDraws",
    "bma_two_term",
    "decompose_labeled_draws",
    "read_draws_csv",
    "write_draws_csv",
    "DRAWS_COLUMNS",
]

DRAWS_COLUMNS = ("v1_label", "v2_label", "pred_mean", "pred_var")


@dataclass(frozen=True)
class ModelWeightTable:
    """Rows of ``(label, weight, predictive mean, predictive variance)``."""

    entries: tuple

    def __post_init__(self):
        rows = tuple((str(a), float(w), float(m), float(v)) for a, w, m, v in self.entries)
        if not rows:
            raise ValueError("empty model table")
        wsum = math.fsum(r[1] for r in rows)
        if abs(wsum - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {wsum!r}, not 1")
        for lab, w, _, v in rows:
            if not 0 <= w <= 1:
                raise ValueError(f"weight of {lab!r} outside [0, 1]: {w}")
            if v < 0:
                raise ValueError(f"negative variance for {lab!r}: {v}")
        object.__setattr__(self, "entries", rows)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r[1] for r in self.entries])

    @property
    def means(self) -> np.ndarray:
        return np.array([r[2] for r in self.entries])

    @property
    def variances(self) -> np.ndarray:
        return np.array([r[3] for r in self.entries])


def bma_two_term(tbl: ModelWeightTable) -> TermReport:
    """Within-model and between-model terms of a model-averaged variance.

    The total is the variance of the mixture, computed from its second moment
    rather than from the two terms.
    """
    w, m, v = tbl.weights, tbl.means, tbl.variances
    mbar = float(np.dot(w, m))
    within = float(np.dot(w, v))
    between = float(np.dot(w, (m - mbar) ** 2))
    second = float(np.dot(w, v + m * m))
    total = second - mbar * mbar
    # guard against cancellation in the raw-moment form
    if abs(total - (within + between)) > 1e-12 * max(1.0, abs(total)):
        total = math.fsum(w * (v + (m - mbar) ** 2))
    return TermReport(ExpansionPlan((("model",),)), (within, between), total, CLOSED_FORM,
                      {"mixture_mean": mbar, "n_models": len(w)})


@dataclass(frozen=True)
class LabeledDraws:
    """Predictive moments per draw, tagged with two labels.

    Parameters
    ----------
    v1, v2 : sequence of str
    pred_mean, pred_var : sequence of float
    y_draw : sequence of float, optional
        Simulated future values. When given, :func:`decompose_labeled_draws`
        can decompose their spread instead of the predictive moments.
    weight : sequence of float, optional
        Row weights; defaults to equal weights (label frequencies).
    """

    v1: tuple
    v2: tuple
    pred_mean: np.ndarray
    pred_var: np.ndarray
    y_draw: np.ndarray | None = None
    weight: np.ndarray | None = None

    def __post_init__(self):
        v1 = tuple(str(x) for x in self.v1)
        v2 = tuple(str(x) for x in self.v2)
        pm = np.asarray(self.pred_mean, dtype=float).ravel()
        pv = np.asarray(self.pred_var, dtype=float).ravel()
        n = len(v1)
        if n == 0:
            raise ValueError("no draws")
        if not (len(v2) == pm.size == pv.size == n):
            raise ValueError("label and moment columns differ in length")
        if np.any(pv < 0):
            raise ValueError("pred_var must be non-negative")
        if not (np.all(np.isfinite(pm)) and np.all(np.isfinite(pv))):
            raise ValueError("non-finite predictive moments")
        yd = None if self.y_draw is None else np.asarray(self.y_draw, dtype=float).ravel()
        if yd is not None and yd.size != n:
            raise ValueError("y_draw differs in length")
        w = None if self.weight is None else np.asarray(self.weight, dtype=float).ravel()
        if w is not None and (w.size != n or np.any(w < 0) or w.sum() <= 0):
            raise ValueError("weights must be non-negative, one per row, with positive sum")
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)
        object.__setattr__(self, "pred_mean", pm)
        object.__setattr__(self, "pred_var", pv)
        object.__setattr__(self, "y_draw", yd)
        object.__setattr__(self, "weight", w)

    def __len__(self):
        return len(self.v1)


def _group_index(labels: Sequence[str]):
    uniq, inv = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    return uniq, inv


def decompose_labeled_draws(d: LabeledDraws, order: str = "v1_then_v2", target: str = "pred") -> TermReport:
    """Finite-population three-term decomposition.

    Parameters
    ----------
    d : LabeledDraws
    order : {"v1_then_v2", "v2_then_v1"}
        The first-named label is the outer conditioning variable.
    target : {"pred", "y"}
        ``"pred"`` decomposes ``pred_mean`` with ``pred_var`` as extra
        within-draw variance; ``"y"`` decomposes ``y_draw`` alone.

    Returns
    -------
    TermReport
        Blocks ``(outer,), (inner,)``. ``terms[0]`` is the mean of
        ``pred_var`` plus the within-cell spread of ``pred_mean``;
        ``terms[2]`` is the outer-weighted spread of cell means around their
        outer-label means; ``terms[1]`` is the spread of outer-label means.
        The total is the weighted variance of ``pred_mean`` plus the mean of
        ``pred_var``, computed directly.
    """
    if order == "v1_then_v2":
        outer, inner, names = d.v1, d.v2, ("v1", "v2")
    elif order == "v2_then_v1":
        outer, inner, names = d.v2, d.v1, ("v2", "v1")
    else:
        raise ValueError(f"order must be 'v1_then_v2' or 'v2_then_v1', got {order!r}")
    if target == "pred":
        x, pv = d.pred_mean, d.pred_var
    elif target == "y":
        if d.y_draw is None:
            raise ValueError("target='y' needs y_draw")
        x, pv = d.y_draw, np.zeros(len(d))
    else:
        raise ValueError(f"target must be 'pred' or 'y', got {target!r}")

    n = len(d)
    w = np.full(n, 1.0 / n) if d.weight is None else d.weight / d.weight.sum()
    o_lab, o_idx = _group_index(outer)
    _, c_idx = np.unique(np.stack([o_idx, _group_index(inner)[1]]), axis=1, return_inverse=True)
    c_idx = np.asarray(c_idx).ravel()
    n_cells = c_idx.max() + 1

    W_c = np.bincount(c_idx, w, n_cells)
    W_o = np.bincount(o_idx, w, o_lab.size)
    m_c = _safe_div(np.bincount(c_idx, w * x, n_cells), W_c)
    m_o = _safe_div(np.bincount(o_idx, w * x, o_lab.size), W_o)
    grand = float(np.dot(w, x))
    cell_of_row_outer = np.zeros(n_cells, dtype=int)
    cell_of_row_outer[c_idx] = o_idx

    within = float(np.dot(w, pv) + np.dot(w, (x - m_c[c_idx]) ** 2))
    middle = float(np.dot(W_c, (m_c - m_o[cell_of_row_outer]) ** 2))
    last = float(np.dot(W_o, (m_o - grand) ** 2))
    total = float(np.dot(w, pv) + np.dot(w, (x - grand) ** 2))

    warn = []
    if np.count_nonzero(W_o > 0) < 2:
        msg = f"only one {names[0]} label present; its variance term is 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn.append(msg)
        last = 0.0
    plan = ExpansionPlan(((names[0],), (names[1],)))
    return TermReport(plan, (within, last, middle), total, EMPIRICAL_DRAWS, {
        "n_draws": n,
        "n_outer_labels": int(o_lab.size),
        "n_cells": int(n_cells),
        "mean": grand,
        "warnings": warn,
        "order": order,
    })


def _safe_div(a, b):
    out = np.zeros_like(a)
    np.divide(a, b, out=out, where=b > 0)
    return out


def read_draws_csv(source) -> LabeledDraws:
    """Read ``v1_label,v2_label,pred_mean,pred_var[,y_draw][,weight]``."""
    if isinstance(source, (str, bytes)) and "\n" not in str(source):
        with open(source, newline="") as fh:
            return read_draws_csv(fh)
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    missing = [c for c in DRAWS_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ValueError(f"draws CSV lacks columns {missing}")
    v1, v2, pm, pv, yd, wt = [], [], [], [], [], []
    for row in reader:
        v1.append(row["v1_label"])
        v2.append(row["v2_label"])
        pm.append(float(row["pred_mean"]))
        pv.append(float(row["pred_var"]))
        if row.get("y_draw") not in (None, ""):
            yd.append(float(row["y_draw"]))
        if row.get("weight") not in (None, ""):
            wt.append(float(row["weight"]))
    y = np.array(yd) if yd and len(yd) == len(v1) else None
    w = np.array(wt) if wt and len(wt) == len(v1) else None
    return LabeledDraws(tuple(v1), tuple(v2), np.array(pm), np.array(pv), y, w)


def write_draws_csv(d: LabeledDraws, fh) -> None:
    cols = list(DRAWS_COLUMNS)
    if d.y_draw is not None:
        cols.append("y_draw")
    if d.weight is not None:
        cols.append("weight")
    wr = csv.writer(fh)
    wr.writerow(cols)
    for i in range(len(d)):
        row = [d.v1[i], d.v2[i], repr(float(d.pred_mean[i])), repr(float(d.pred_var[i]))]
        if d.y_draw is not None:
            row.append(repr(float(d.y_draw[i])))
        if d.weight is not None:
            row.append(repr(float(d.weight[i])))
        wr.writerow(row)
