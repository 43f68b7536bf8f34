import io
import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varscope.bma import (
    LabeledDraws,
    ModelWeightTable,
    bma_two_term,
    decompose_labeled_draws,
    read_draws_csv,
    write_draws_csv,
)


def test_single_model_has_no_between_term():
    r = bma_two_term(ModelWeightTable([("m", 1.0, 3.0, 0.5)]))
    assert r.terms == (0.5, 0.0) and r.total == 0.5


def test_symmetric_two_point_mixture():
    r = bma_two_term(ModelWeightTable([("a", 0.5, 0.0, 1.0), ("b", 0.5, 2.0, 1.0)]))
    assert r.terms == (1.0, 1.0) and r.total == 2.0


def test_weight_table_validation():
    with pytest.raises(ValueError):
        ModelWeightTable([("a", 0.4, 0.0, 1.0)])
    with pytest.raises(ValueError):
        ModelWeightTable([("a", 1.0, 0.0, -1.0)])
    with pytest.raises(ValueError):
        ModelWeightTable([])


def test_identical_rows():
    d = LabeledDraws(("a",) * 4, ("x",) * 4, np.full(4, 2.0), np.full(4, 0.3))
    with pytest.warns(RuntimeWarning):
        r = decompose_labeled_draws(d)
    assert r.terms == pytest.approx((0.3, 0.0, 0.0), abs=1e-15)


def _hand_mixture():
    """Two links x two models; each cell has its own mean and draw spread."""
    cells = {("logit", "A"): (0.2, 3), ("logit", "B"): (0.5, 2), ("probit", "A"): (0.3, 4), ("probit", "B"): (0.9, 1)}
    v1, v2, pm = [], [], []
    rng = np.random.default_rng(0)
    for (l, m), (mean, n) in cells.items():
        vals = mean + rng.normal(0, 0.05, n)
        v1 += [l] * n
        v2 += [m] * n
        pm += list(vals)
    return LabeledDraws(tuple(v1), tuple(v2), np.array(pm), np.zeros(len(pm)))


def test_hand_enumerated_four_cell_mixture():
    d = _hand_mixture()
    x = d.pred_mean
    n = len(x)
    v1, v2 = np.array(d.v1), np.array(d.v2)
    grand = x.mean()
    # brute force, link outer: sum over the four cells written out explicitly
    within = sum(((x[(v1 == l) & (v2 == m)] - x[(v1 == l) & (v2 == m)].mean()) ** 2).sum()
                 for l, m in itertools.product(("logit", "probit"), ("A", "B"))) / n
    middle = sum(((v1 == l) & (v2 == m)).sum() / n
                 * (x[(v1 == l) & (v2 == m)].mean() - x[v1 == l].mean()) ** 2
                 for l, m in itertools.product(("logit", "probit"), ("A", "B")))
    last = sum((v1 == l).sum() / n * (x[v1 == l].mean() - grand) ** 2 for l in ("logit", "probit"))
    r = decompose_labeled_draws(d, "v1_then_v2")
    assert r.terms == pytest.approx((within, last, middle), rel=1e-12)
    assert r.total == pytest.approx(np.var(x), rel=1e-12)


tables = st.lists(
    st.tuples(st.sampled_from("abc"), st.sampled_from("xyz"), st.floats(-5, 5), st.floats(0, 3),
              st.floats(0.01, 2)),
    min_size=2, max_size=40,
)


@given(tables)
def test_conservation_and_order_agreement(rows):
    v1, v2, pm, pv, w = zip(*rows)
    d = LabeledDraws(v1, v2, np.array(pm), np.array(pv), weight=np.array(w))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = decompose_labeled_draws(d, "v1_then_v2")
        b = decompose_labeled_draws(d, "v2_then_v1")
    ww = np.array(w) / np.sum(w)
    x = np.array(pm)
    direct = np.dot(ww, (x - np.dot(ww, x)) ** 2) + np.dot(ww, pv)
    scale = max(1.0, direct)
    assert abs(a.total - direct) <= 1e-12 * scale
    if len(set(v1)) > 1:
        assert abs(a.term_sum - direct) <= 1e-12 * scale
    if len(set(v2)) > 1:
        assert abs(b.term_sum - direct) <= 1e-12 * scale
    assert a.total == b.total
    assert a.terms[0] == pytest.approx(b.terms[0], rel=1e-12, abs=1e-12)


@given(st.lists(st.tuples(st.floats(0.05, 1), st.floats(-3, 3), st.floats(0, 2)), min_size=1, max_size=6))
def test_two_term_matches_collapsed_labeled_draws(rows):
    w = np.array([r[0] for r in rows])
    w /= w.sum()
    tbl = ModelWeightTable([(f"m{i}", wi, m, v) for i, (wi, (_, m, v)) in enumerate(zip(w, rows))])
    two = bma_two_term(tbl)
    d = LabeledDraws(tuple(f"m{i}" for i in range(len(rows))), ("only",) * len(rows),
                     np.array([r[1] for r in rows]), np.array([r[2] for r in rows]), weight=w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = decompose_labeled_draws(d, "v1_then_v2")
    if len(rows) > 1:
        assert r.terms[0] + r.terms[2] == pytest.approx(two.terms[0], rel=1e-10, abs=1e-12)
        assert r.terms[1] == pytest.approx(two.terms[1], rel=1e-10, abs=1e-12)
    assert r.total == pytest.approx(two.total, rel=1e-10, abs=1e-12)


def test_csv_round_trip():
    d = _hand_mixture()
    buf = io.StringIO()
    write_draws_csv(d, buf)
    back = read_draws_csv(buf.getvalue())
    assert back.v1 == d.v1 and np.array_equal(back.pred_mean, d.pred_mean)


def test_csv_missing_column():
    with pytest.raises(ValueError, match="lacks columns"):
        read_draws_csv("v1_label,v2_label,pred_mean\na,b,1\n")


def test_y_target():
    d = LabeledDraws(("a", "b"), ("x", "x"), np.array([0.0, 1.0]), np.array([1.0, 1.0]), y_draw=np.array([0.5, 2.5]))
    r = decompose_labeled_draws(d, target="y")
    assert r.total == pytest.approx(1.0)
    with pytest.raises(ValueError):
        decompose_labeled_draws(LabeledDraws(("a",), ("x",), [0.0], [0.0]), target="y")
