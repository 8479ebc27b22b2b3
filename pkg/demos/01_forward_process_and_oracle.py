# %% [markdown]
# # Masking and the exact oracle
#
# A clean sequence is corrupted by replacing tokens with the mask id `K`.
# For small vocabularies we can hold the whole data distribution in a table
# and read off every conditional the denoiser is supposed to learn.

# %%
import numpy as np

from maskdiff.oracle import BigramSource, exact_conditional, exact_nll, joint_from_bigram
from maskdiff.process import forward_mask

rng = np.random.default_rng(0)
source = BigramSource([0.7, 0.3], [[0.9, 0.1], [0.2, 0.8]])
joint = joint_from_bigram(source, 4)
x0 = np.array([0, 0, 1, 1])
for t in (0.0, 0.25, 0.5, 1.0):
    print(f"t={t:.2f}  x_t={forward_mask(x0, t, rng, joint.mask_id)}")

# %% [markdown]
# The mask id is 2 here. Conditioning on the visible tokens gives a
# categorical for each masked slot.

# %%
xt = np.array([0, 2, 2, 1])
pred = exact_conditional(joint, xt)
for i, row in pred:
    print(f"position {i}: p = {np.round(row, 4)}")
print("-log p(x0) =", round(exact_nll(joint, x0), 4))
