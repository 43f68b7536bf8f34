"""How the three ANOVA terms trade off as the number of treatments grows.

Writes ``anova_sweep.csv`` next to the working directory and prints where
the middle term first drops below 5% of the total.

    python3 demos/anova_sweep.py [out.csv]
"""
import csv
import sys

from varscope.anova import SWEEP_COLUMNS, AnovaParams, anova_sweep, first_crossing

out = sys.argv[1] if len(sys.argv) > 1 else "anova_sweep.csv"
base = AnovaParams(T=1, B=2, sigma_eps_sq=1.0, sigma_tau_sq=2.0, sigma_beta_sq=2.0)
rows = anova_sweep(base, "T", range(1, 41))

with open(out, "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
    w.writeheader()
    w.writerows(rows)

print(" T   term1    term2    term3    total   prop2")
for r in rows[:10] + rows[19::10]:
    print(f"{r['axis']:>2}  {r['term1']:.4f}  {r['term2']:.4f}  {r['term3']:.4f}  {r['total']:.4f}  {r['prop2']:.3f}")
print(f"middle term first below 5% of the total at T={first_crossing(rows, 'prop2', 0.05)}")
print(f"wrote {len(rows)} rows to {out}")
