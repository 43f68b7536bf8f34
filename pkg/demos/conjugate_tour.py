"""Walk through the closed-form expansions for each conjugate family.

For every family we print the terms in written order (leading term first,
outermost last) and confirm they add up to the predictive variance.

    python3 demos/conjugate_tour.py
"""
from varscope.conjugate import (
    BetaBinomialParams,
    BPGParams,
    NNGParams,
    NormalKnownVarParams,
    PoissonConjugateParams,
    ThreeLevelNormalParams,
    beta_binomial_decompose,
    bpg_decompose,
    nng_decompose,
    normal_known_var_decompose,
    poisson_conjugate_decompose,
    three_level_normal_decompose,
)


def show(title, r):
    terms = "  ".join(f"{t:.5f}" for t in r.ordered())
    print(f"{title:<34} terms [{terms}]  total {r.total:.5f}  gap {r.conservation_gap():.1e}")


# Ten observations with known unit noise: the next draw's spread is mostly
# noise, and only 1/11 of it comes from not knowing the mean.
show("normal, known variance", normal_known_var_decompose(NormalKnownVarParams(0.0, 1.0, 1.0, 10, 0.3)))

# Seven successes in twenty trials, predicting five more trials.
show("beta-binomial", beta_binomial_decompose(BetaBinomialParams(1.0, 1.0, 7, 20, 5)))

show("poisson-gamma", poisson_conjugate_decompose(PoissonConjugateParams(2.0, 1.0, 14.0, 6)))

# Unknown mean and precision. Conditioning on the mean first makes the
# outer term vanish; conditioning on the precision first moves the zero
# to the inner term. The leading term and the total do not move.
y = [1.2, 0.4, 2.2, 1.9, 0.7, 1.1]
p = NNGParams.from_data(y, mu0=0.0, kappa0=1.0, alpha0=2.0, beta0=1.0)
show("normal-gamma, mean first", nng_decompose(p, "mu_first"))
show("normal-gamma, precision first", nng_decompose(p, "lambda_first"))

q = BPGParams(0.5, 1.0, 1.0, 3.0, 2)
show("thinned poisson, count first", bpg_decompose(q, "N_first"))
show("thinned poisson, rate first", bpg_decompose(q, "lambda_first", reduce=False))

show("three-level normal", three_level_normal_decompose(ThreeLevelNormalParams(1.0, 0.5, 0.0, 2.0, 8, 0.4)))
