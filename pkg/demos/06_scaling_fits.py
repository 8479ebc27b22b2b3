# %% [markdown]
# # IsoFLOP fits
#
# For each budget, loss is fit as a parabola in `log N`. The vertices then
# give a power law in compute. Two families whose laws differ only in the
# intercept need a constant compute ratio to reach the same loss.

# %%
import math

from maskdiff.scaling import compute_gap, isoflop_analysis, synthetic_isoflop_records

budgets = [1e8, 1e9, 1e10, 1e11]
optima, law_a = isoflop_analysis(synthetic_isoflop_records(budgets, beta=2.0))
for o in optima:
    print(f"C={o.C:.0e}  N*={o.fit.n_opt:.3e}  L*={o.fit.loss_opt:.4f}")
print(f"family a: alpha={law_a.alpha:.4f}, beta={law_a.beta:.4f}")

_, law_b = isoflop_analysis(synthetic_isoflop_records(budgets, beta=2.0 + 0.1 * math.log(16)))
for level in (3.0, 3.5):
    print(f"loss {level}: family b needs {compute_gap(law_a, law_b, level):.3f}x the compute")
