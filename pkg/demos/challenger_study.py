"""Model averaging over link functions and covariate sets for the O-ring data.

Predicts the failure probability of a single O-ring at 31 F and 200 psi,
averaging over three link functions and every covariate subset, and splits
the predictive variance into within-cell, covariate-set and link parts in
both nesting orders. The default budget takes well under a minute.

    python3 demos/challenger_study.py [draws_per_model]
"""
import sys

from varscope.challenger import ChallengerConfig, run_challenger

draws = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
res = run_challenger(ChallengerConfig(draws_per_model=draws))

print(f"posterior mean p = {res.posterior_mean:.3f} (sd {res.posterior_sd:.3f})")
print("link weights:", {k: round(v, 3) for k, v in res.link_weights().items()})
print("heaviest cells:")
for c in res.summary()["top_cells"]:
    print(f"  {c['link']:<8} {c['model']:<8} weight {c['weight']:.3f}  mean p {c['mean_p']:.3f}")
for name, r in res.reports.items():
    terms = " + ".join(f"{t:.5f}" for t in r.ordered())
    print(f"{name:<16} {terms} = {r.total:.5f}")
for w in res.warnings:
    print("warning:", w)
