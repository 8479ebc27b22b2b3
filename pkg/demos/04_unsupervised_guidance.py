# %% [markdown]
# # Guidance without paired data
#
# The unconditional branch is the same model with the prompt masked out.
# Dividing it away discounts answers the model likes regardless of the
# prompt. The task below has one such "popular" wrong answer.

# %%
import numpy as np

from maskdiff.evaluate import EvalConfig, guidance_choice_task, multiple_choice_accuracy
from maskdiff.guidance import GuidanceConfig, combine
from maskdiff.model import CompactModel, TrainConfig, train

print("hand check:", np.round(combine([0.8, 0.2], [0.5, 0.5], 1.0), 6))

joint, items = guidance_choice_task()
model, _ = train(CompactModel(6, 3, d=8, hidden=32, seed=0), joint,
                 TrainConfig(steps=1000, batch_size=64, learning_rate=0.5))
for w in (0.0, 0.4, 0.8, 1.0, 2.0):
    cfg = EvalConfig("chain_rule", guidance=GuidanceConfig("unsupervised", w))
    print(f"w={w:.1f}  accuracy {multiple_choice_accuracy(model, items, cfg):.3f}")
