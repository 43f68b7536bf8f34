"""Nested Monte Carlo against the exact answer on two models.

The estimator only sees a sampler, so agreement with the closed forms is a
direct check of the Monte Carlo engine. Each estimate is reported with its
standard error.

    python3 demos/mc_vs_closed_form.py
"""
from varscope.adapters import NNGAdapter, NormalKnownVarAdapter
from varscope.conjugate import NNGParams, NormalKnownVarParams, nng_decompose, nng_plan, normal_known_var_decompose
from varscope.mc import McBudget, conservation_check, estimate_decomposition
from varscope.model import ExpansionPlan

budget = McBudget(n_outer=20_000, n_inner=64, seed=7)


def compare(name, exact, est):
    print(name)
    for k, (e, m, s) in enumerate(zip(exact.terms, est.terms, est.diagnostics["term_se"])):
        print(f"  term {k}: exact {e:.5f}   estimate {m:.5f} +/- {s:.5f}")
    print(f"  total:  exact {exact.total:.5f}   estimate {est.total:.5f} +/- {est.diagnostics['total_se']:.5f}")
    check = conservation_check([exact, est])
    print(f"  closed form and estimate consistent: {check.passed} (gap {check.max_gap:.5f}, allowed {check.tolerance:.5f})")


p = NormalKnownVarParams(0.0, 1.0, 1.0, 10, 0.0)
compare("normal, known variance", normal_known_var_decompose(p),
        estimate_decomposition(NormalKnownVarAdapter(p), ExpansionPlan((("mu",),)), budget))

q = NNGParams.from_data([1.2, 0.4, 2.2, 1.9, 0.7, 1.1])
compare("normal-gamma, precision first", nng_decompose(q, "lambda_first"),
        estimate_decomposition(NNGAdapter(q), nng_plan("lambda_first"), budget))
