import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varscope.adapters import (
    BPGAdapter,
    ConstantAdapter,
    NNGAdapter,
    NormalKnownVarAdapter,
    ThreeLevelNormalAdapter,
    adapter_for,
)
from varscope.conjugate import (
    BPGParams,
    NNGParams,
    NormalKnownVarParams,
    ThreeLevelNormalParams,
    bpg_decompose,
    nng_decompose,
    normal_known_var_decompose,
    three_level_normal_decompose,
)
from varscope.mc import AdapterError, McBudget, conservation_check, estimate_decomposition
from varscope.model import ExpansionPlan

P = ExpansionPlan.parse


def _within(report, expected, k_sigma=3.0):
    se = report.diagnostics["term_se"]
    for t, e, s in zip(report.terms, expected, se):
        assert abs(t - e) <= k_sigma * s + 1e-12, (report.terms, expected, se)


def test_constant_model_has_only_leading_term():
    r = estimate_decomposition(ConstantAdapter(2.0, 0.7), P("V1|V2"), McBudget(200, 4, 1))
    assert r.terms[0] == pytest.approx(0.7, abs=1e-15)
    assert max(abs(t) for t in r.terms[1:]) <= 1e-15


def test_normal_known_var_against_closed_form():
    p = NormalKnownVarParams(0.0, 1.0, 1.0, 10, 0.0)
    r = estimate_decomposition(NormalKnownVarAdapter(p), P("mu"), McBudget(20_000, 16, 7))
    _within(r, normal_known_var_decompose(p).terms)
    assert r.is_conserved()


def test_nng_both_orders_against_closed_form():
    p = NNGParams.from_data([1.0, -1.0], 0.0, 1.0, 3.0, 2.0)
    a = NNGAdapter(p)
    for order, plan in (("mu_first", "lambda2|mu"), ("lambda_first", "mu|lambda2")):
        r = estimate_decomposition(a, P(plan), McBudget(6_000, 8, 3))
        _within(r, nng_decompose(p, order).terms, 4.0)
    cf = nng_decompose(p, "mu_first")
    assert conservation_check([cf, r]).passed


def test_bpg_plans_have_equal_totals():
    p = BPGParams(0.5, 1.0, 1.0, 3.0, 2)
    a = BPGAdapter(p)
    r1 = estimate_decomposition(a, P("N|lambda"), McBudget(6_000, 8, 5))
    r2 = estimate_decomposition(a, P("lambda|N"), McBudget(6_000, 8, 6))
    assert conservation_check([r1, r2]).passed
    _within(r2, bpg_decompose(p, "N_first").terms, 4.0)
    # conditioning on N first makes the rate block irrelevant
    assert abs(r1.terms[2]) <= 4 * r1.diagnostics["term_se"][2] + 1e-12


def test_latent_variable_folds_into_leading_term():
    p = BPGParams(0.5, 1.0, 1.0, 3.0, 2)
    r = estimate_decomposition(BPGAdapter(p), P("N"), McBudget(6_000, 8, 5))
    assert r.plan.latent == ("lambda",)
    _within(r, bpg_decompose(p, "lambda_first").terms, 4.0)


def test_three_level_against_closed_form():
    p = ThreeLevelNormalParams(1.0, 1.0, 0.0, 1.0, 1, 0.0)
    r = estimate_decomposition(ThreeLevelNormalAdapter(p), P("nu|mu"), McBudget(6_000, 8, 2))
    _within(r, three_level_normal_decompose(p).terms, 4.0)


def test_worker_count_does_not_change_output():
    a = NNGAdapter(NNGParams.from_data([0.3, 1.2, -0.4], 0.0, 1.0, 3.0, 2.0))
    b = McBudget(400, 4, 99)
    r1 = estimate_decomposition(a, P("mu|lambda2"), b, workers=1)
    r8 = estimate_decomposition(a, P("mu|lambda2"), b, workers=8)
    assert r1.terms == r8.terms and r1.total == r8.total
    assert r1.diagnostics == r8.diagnostics


def test_env_variable_sets_default_workers(monkeypatch):
    from varscope.mc import default_workers

    monkeypatch.setenv("VARSCOPE_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("VARSCOPE_THREADS", "x")
    with pytest.raises(ValueError):
        default_workers()


def test_parameter_term_shrinks_like_one_over_n():
    vals = []
    for n in (10, 100, 1000):
        p = NormalKnownVarParams(0.0, 1.0, 1.0, n, 0.0)
        vals.append(estimate_decomposition(NormalKnownVarAdapter(p), P("mu"), McBudget(4_000, 8, n)).terms[1])
    for lo, hi in zip(vals, vals[1:]):
        assert 0.05 <= hi / lo <= 0.2


@settings(max_examples=15)
@given(st.integers(0, 2**32), st.floats(0.0, 1.0), st.floats(0.5, 5), st.floats(0.5, 5))
def test_estimated_terms_are_nonnegative(seed, pp, a, b):
    r = estimate_decomposition(BPGAdapter(BPGParams(pp, a, b, 1.0, 1)), P("lambda|N"), McBudget(30, 3, seed))
    assert all(t >= 0 for t in r.terms)
    for k in r.diagnostics["clipped_terms"]:
        assert r.diagnostics["raw_terms"][k] < 0


def test_unknown_variable_rejected():
    with pytest.raises(ValueError):
        estimate_decomposition(NormalKnownVarAdapter(NormalKnownVarParams()), P("sigma"), McBudget(10, 2, 0))


class _Broken(ConstantAdapter):
    def sample(self, names, given, size, rng):
        raise NotImplementedError("no sampler")


def test_adapter_failure_is_wrapped():
    with pytest.raises(AdapterError, match="no sampler"):
        estimate_decomposition(_Broken(), P("V1|V2"), McBudget(10, 2, 0))


def test_unsupported_conditional_raises():
    a = NNGAdapter(NNGParams())
    with pytest.raises(NotImplementedError):
        a.sample(("other",), {}, 3, np.random.default_rng(0))


def test_budget_validation():
    with pytest.raises(ValueError):
        McBudget(1, 4, 0)
    with pytest.raises(ValueError):
        McBudget(10, 1, 0)
    with pytest.raises(ValueError):
        McBudget(10, 4, -1)


def test_conservation_check_rules():
    p = NNGParams.from_data([1.0, -1.0], 0.0, 1.0, 3.0, 2.0)
    res = conservation_check([nng_decompose(p, "mu_first"), nng_decompose(p, "lambda_first")])
    assert res.passed and res.max_gap == 0.0
    other = nng_decompose(NNGParams.from_data([2.0, 0.0], 0.0, 1.0, 3.0, 2.0))
    with pytest.raises(ValueError, match="different models"):
        conservation_check([nng_decompose(p), other])
    with pytest.raises(ValueError):
        conservation_check([])


def test_adapter_for_mapping():
    a = adapter_for("nng", {"mu0": 0.0, "kappa0": 1.0, "alpha0": 3.0, "beta0": 2.0, "y": [1, -1]})
    assert a.params.beta_n == 3.0
    with pytest.raises(ValueError):
        adapter_for("nope", {})


def test_user_defined_adapter():
    """A hand-written linear-Gaussian adapter: V1 ~ N(0, 4), V2 | V1 ~ N(V1, 1), Y | V ~ N(V1 + V2, 1)."""

    class Lin:
        variables = ("V1", "V2")
        thread_safe = True
        model_key = "lin"

        def sample(self, names, given, size, rng):
            names = tuple(names)
            if names == ("V1",) and not given:
                return {"V1": 2.0 * rng.standard_normal(size)}
            if names == ("V2",) and "V1" in given:
                return {"V2": given["V1"] + rng.standard_normal(size)}
            raise NotImplementedError(names)

        def predictive_mean(self, v):
            return v["V1"] + v["V2"]

        def predictive_var(self, v):
            return np.ones_like(v["V1"])

    r = estimate_decomposition(Lin(), P("V1|V2"), McBudget(20_000, 4, 0))
    # Var(2 V1 + e) = 16 + 1 ; inner term Var(V2 | V1) = 1
    _within(r, (1.0, 16.0, 1.0), 4.0)
    assert r.total == pytest.approx(18.0, abs=4 * r.diagnostics["total_se"])
    assert math.isfinite(r.diagnostics["sum_se"])
