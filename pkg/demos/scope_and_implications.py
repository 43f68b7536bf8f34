"""How many expansions exist, and which zero terms imply which.

First the count of expansion plans for a few hierarchy depths, with the
five plans for two levels listed. Then a three-level example: one term is
known to vanish, and the implication graph spreads that fact to other
orderings, first with no assumptions and then assuming the third level is
independent of the others given the data.

    python3 demos/scope_and_implications.py
"""
from varscope.independence import ci, node_label, propagate_zero_terms
from varscope.scope import count_expansions, enumerate_plans

for K in range(1, 7):
    print(f"K={K}: {count_expansions(K)} expansion plans")
print("plans for K=2:")
for plan in enumerate_plans(2):
    print(f"  blocks {plan.label():<8} latent {','.join(plan.latent) or '-'}")

start = [((1, 2, 3), 3)]
bare = propagate_zero_terms(start, [], 3)
print("\nzero at T[123]_3, no assumptions:", sorted(node_label(*n) for n in bare.facts))
assumed = propagate_zero_terms(start, [ci("V3", {"V1", "V2"}, "D")], 3)
print("same, with V3 independent of V1,V2 given D:")
for node, fact in sorted(assumed.facts.items()):
    print(f"  {node_label(*node):<10} {fact.provenance:<9} {fact.rule}")
