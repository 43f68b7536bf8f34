import itertools
import json

import numpy as np
import pytest
from scipy import integrate, special

from varscope.gaussian import conditional_cov, gaussian_term_decompose, linear_gaussian_model
from varscope.independence import (
    DATA,
    Y,
    CIStatement,
    ZeroFact,
    ci,
    derive_ci,
    entails,
    implication_graph,
    load_ci_json,
    node_label,
    ordering_plan,
    parse_term,
    propagate_zero_terms,
    reduce_plan,
)
from varscope.model import ExpansionPlan, TermId

LEVELS3 = ("V1", "V2", "V3")


# -- closure ----------------------------------------------------------------------

def test_split_of_joint_statement():
    closure = derive_ci([ci({"Y", "D"}, "V2", "V1")])
    assert ci("Y", "V2", {"V1", "D"}) in closure
    assert ci("D", "V2", "V1") in closure


def test_factoring_level_independent_of_the_rest():
    closure = derive_ci([ci("V3", {"V1", "V2"}, "D")], LEVELS3)
    assert ci("V3", "V2", {"D", "V1"}) in closure
    assert ci("V3", "V1", "D") in closure
    assert ci("V3", "V1", {"D", "V2"}) in closure


def test_empty_closure():
    assert derive_ci([]) == frozenset()


def test_entailment_accepts_mirror_for_levels_only():
    closure = derive_ci([ci("V3", {"V1", "V2"}, "D")], LEVELS3)
    assert entails(closure, ci("V1", "V3", "D"))
    assert not entails(closure, ci("V1", "V2", "D"))


def test_statement_validation():
    with pytest.raises(ValueError):
        ci("V1", "Y")
    with pytest.raises(ValueError):
        ci("V1", "V1")
    with pytest.raises(ValueError):
        ci("V1", "D")
    s = ci("V1", "V2", "D")
    assert CIStatement.from_json_obj(json.loads(json.dumps(s.to_json_obj()))) == s
    assert load_ci_json(json.dumps({"ci": [s.to_json_obj()]})) == [s]


def _sem(rng, free_level=None, y_ignores=None, d_dim=2):
    """Linear-Gaussian SEM over D, V1..V3, Y built from independent latent noises.

    ``free_level``: that level depends on D only (so it is independent of the
    other levels given D). ``y_ignores``: Y's mean does not involve it.
    """
    names = ["D", "V1", "V2", "V3", "Y"]
    dims = {"D": d_dim, "V1": 1, "V2": 1, "V3": 1, "Y": 1}
    nz = sum(dims.values())
    offs = dict(zip(names, np.cumsum([0] + [dims[n] for n in names])[:-1]))
    rows = {}
    rows["D"] = np.eye(nz)[offs["D"]:offs["D"] + d_dim]
    for v in ("V1", "V2", "V3"):
        r = np.zeros(nz)
        r[offs[v]] = rng.uniform(0.5, 1.5)
        r += rng.normal(size=d_dim) @ rows["D"]
        if v != free_level:
            for u in ("V1", "V2", "V3"):
                if u < v and u != free_level:
                    r += rng.normal() * rows[u]
        rows[v] = r
    y = np.zeros(nz)
    y[offs["Y"]] = rng.uniform(0.5, 1.5)
    y += rng.normal(size=d_dim) @ rows["D"]
    for v in ("V1", "V2", "V3"):
        if v != y_ignores:
            y += rng.normal() * rows[v]
    rows["Y"] = y
    return linear_gaussian_model({n: rows[n] for n in names}, rng.uniform(0.5, 2.0, nz))


def _gaussian_term(m, order, k):
    return gaussian_term_decompose(m, ordering_plan(order)).terms[k]


@pytest.mark.parametrize("seed", range(100))
def test_derived_zero_terms_are_zero_on_gaussian_instances(seed):
    rng = np.random.default_rng(seed)
    i = 1 + seed % 3
    vi = f"V{i}"
    m = _sem(rng, free_level=vi, d_dim=1 + seed % 3)
    # the construction really makes vi independent of the other levels given D
    for u in LEVELS3:
        if u != vi:
            assert abs(conditional_cov(m, vi, u, "D").item()) < 1e-10
    cis = [ci(vi, set(LEVELS3) - {vi}, "D")]
    # assert a true zero: the term for vi with every other level before it,
    # made zero by letting Y ignore vi
    m = _sem(np.random.default_rng(seed), free_level=vi, y_ignores=vi, d_dim=1 + seed % 3)
    others = [j for j in (1, 2, 3) if j != i]
    order = tuple(others) + (i,)
    assert abs(_gaussian_term(m, order, 3)) < 1e-9
    g = propagate_zero_terms([(order, 3)], cis, 3)
    assert len(g.facts) == 6  # every term whose operator acts on vi
    for (o, k), fact in g.facts.items():
        assert o[k - 1] == i
        assert abs(_gaussian_term(m, o, k)) < 1e-9, (o, k, fact)


@pytest.mark.parametrize("seed", range(20))
def test_two_sided_edges_are_sound_without_assumptions(seed):
    rng = np.random.default_rng(1000 + seed)
    m = _sem(rng, y_ignores="V3")
    assert abs(_gaussian_term(m, (1, 2, 3), 3)) < 1e-9
    g = propagate_zero_terms([((1, 2, 3), 3)], [], 3)
    assert set(g.facts) == {((1, 2, 3), 3), ((2, 1, 3), 3)}
    for o, k in g.facts:
        assert abs(_gaussian_term(m, o, k)) < 1e-9


def _norm1_var_of_conditional_mean(y, mu0, lam0_sq, a0, b0):
    """Var over lambda^2 | D of E(mu | lambda^2, D) by 1-D quadrature.

    Prior: mu ~ N(mu0, 1/lam0_sq) independent of lambda^2 ~ Gamma(a0, rate b0);
    y_i ~ N(mu, 1/lambda^2).
    """
    y = np.asarray(y, float)
    n, s, ss = y.size, y.sum(), np.sum((y - y.mean()) ** 2)

    def log_post(l2):
        # marginal of ybar given l2 is N(mu0, 1/lam0_sq + 1/(n l2))
        v = 1 / lam0_sq + 1 / (n * l2)
        return ((a0 - 1) * np.log(l2) - b0 * l2 + 0.5 * (n - 1) * np.log(l2)
                - 0.5 * l2 * ss - 0.5 * np.log(v) - 0.5 * (y.mean() - mu0) ** 2 / v)

    grid_max = 50.0
    ref = max(log_post(x) for x in np.linspace(0.01, grid_max, 2000))
    dens = lambda l2: np.exp(log_post(l2) - ref)
    cm = lambda l2: (l2 * s + lam0_sq * mu0) / (n * l2 + lam0_sq)
    z = integrate.quad(dens, 0, grid_max, limit=200)[0]
    m1 = integrate.quad(lambda x: cm(x) * dens(x), 0, grid_max, limit=200)[0] / z
    m2 = integrate.quad(lambda x: cm(x) ** 2 * dens(x), 0, grid_max, limit=200)[0] / z
    return m2 - m1 * m1


def test_no_one_sided_edge_without_entailment():
    # ordering (mu, lambda2): the term for lambda2 after mu is zero, since
    # E(Y | mu, lambda2, D) = mu. Without mu _||_ lambda2 | D nothing else follows.
    g = propagate_zero_terms([((1, 2), 2)], [], 2)
    assert set(g.facts) == {((1, 2), 2)}
    assert not g.edges_of("one_sided")
    # and indeed the would-be consequence is strictly positive
    v = _norm1_var_of_conditional_mean([0.2, 1.4, 2.1, -0.3, 0.9], mu0=-1.0, lam0_sq=0.5, a0=2.0, b0=1.0)
    assert v > 1e-4
    # with the (false here) assumption the engine would draw the edge
    g2 = propagate_zero_terms([((1, 2), 2)], [ci("V2", "V1", "D")], 2)
    assert ((2, 1), 1) in g2.facts


def test_worked_propagations():
    g = propagate_zero_terms([parse_term("123:3")], [], 3)
    assert {node_label(*n) for n in g.facts} == {"T[123]_3", "T[213]_3"}
    g = propagate_zero_terms([((1, 2, 3), 3)], [ci("V3", {"V1", "V2"}, "D")], 3)
    assert {((1, 3, 2), 2), ((3, 1, 2), 1)} <= set(g.facts)
    assert g.facts[((1, 2, 3), 3)].provenance == "asserted"
    assert g.facts[((3, 1, 2), 1)].provenance == "derived"


def test_no_facts_gives_empty_graph():
    assert propagate_zero_terms([], [ci("V3", {"V1", "V2"}, "D")], 3).is_empty()


def test_fact_inputs():
    tid = TermId(ordering_plan((2, 1, 3)), 3)
    g = propagate_zero_terms([ZeroFact(tid), tid], [], 3)
    assert set(g.facts) == {((2, 1, 3), 3), ((1, 2, 3), 3)}
    with pytest.raises(ValueError):
        propagate_zero_terms([((1, 2, 3), 0)], [], 3)
    with pytest.raises(ValueError):
        propagate_zero_terms([((1, 1, 3), 2)], [], 3)
    with pytest.raises(ValueError):
        parse_term("12-3")


def test_graph_structure():
    g = implication_graph(3)
    assert len(g.nodes) == 3 * 6
    two = g.edges_of("two_sided")
    assert all((b, a) in two for a, b in two)
    assert not g.edges_of("one_sided")
    full = implication_graph(3, [ci("V1", {"V2", "V3"}, "D"), ci("V2", {"V1", "V3"}, "D"), ci("V3", {"V1", "V2"}, "D")])
    for r in (1, 2, 3):
        assert len(full.edges_of("one_sided", r)) == 8
    dot = full.to_dot()
    assert dot.startswith("digraph") and "dashed" in dot and "dotted" in dot
    js = full.to_json_obj()
    assert json.loads(json.dumps(js)) == js


# -- structural reduction -----------------------------------------------------------

def test_chain_prior_reduction():
    plan = ExpansionPlan((("V1",), ("V2",)))
    reduced, facts = reduce_plan(plan, [ci({"Y", "D"}, "V2", "V1")])
    assert reduced.blocks == (("V1",),) and reduced.latent == ("V2",)
    assert [f.term.k for f in facts] == [2]


def test_block_reduction_general():
    plan = ExpansionPlan((("V1", "V2"), ("V3",), ("V4",)))
    reduced, facts = reduce_plan(plan, [ci({"Y", "D"}, {"V3", "V4"}, {"V1", "V2"})])
    assert reduced.u == 1 and reduced.M + 1 == 3
    assert sorted(f.term.k for f in facts) == [2, 3]


def test_empty_assumptions_leave_plan():
    plan = ExpansionPlan((("V1",), ("V2",)))
    assert reduce_plan(plan, []) == (plan, [])


def test_reduction_is_sound_on_gaussian_chain():
    # V2 -> V1 -> (Y, D): hyperparameter V2 only acts through V1
    rng = np.random.default_rng(0)
    L = {
        "Y": np.array([1.0, 1.0, 0.0, 0.0, 1.0]),
        "D": np.array([[1.0, 1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 1.0, 0.0]]),
        "V1": np.array([1.0, 1.0, 0.0, 0.0, 0.0]),
        "V2": np.array([1.0, 0.0, 0.0, 0.0, 0.0]),
    }
    m = linear_gaussian_model(L, rng.uniform(0.5, 2, 5))
    r = gaussian_term_decompose(m, ExpansionPlan((("V1",), ("V2",))))
    assert abs(r.terms[2]) < 1e-12 * r.total
    assert r.terms[1] > 1e-3
