# %% [markdown]
# # Answering backwards
#
# Facts are stored only as `name SEP description`. Because the denoiser
# is trained on every masking pattern, it can also recover the name from the
# description.

# %%
from maskdiff.evaluate import ReversalConfig, reversal_experiment

for seed in range(3):
    r = reversal_experiment(ReversalConfig(seed=seed))
    print(f"seed {seed}: forward {r['forward_accuracy']:.2f}  reverse {r['reverse_accuracy']:.2f}  "
          f"(chance {r['reverse_chance']:.3f}, z={r['reverse_z']:.1f})")

r = reversal_experiment(ReversalConfig(trained=False))
print(f"untrained model: reverse {r['reverse_accuracy']:.2f}")
