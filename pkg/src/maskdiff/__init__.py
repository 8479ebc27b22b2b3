"""Desk-scale masked diffusion over discrete token sequences.

Modules:

- :mod:`maskdiff.process`   forward absorbing-mask noising
- :mod:`maskdiff.oracle`    exact tabular joints and brute-force conditionals
- :mod:`maskdiff.model`     data-prediction models, training objective, compute accounting
- :mod:`maskdiff.guidance`  classifier-free guidance (standard and unsupervised)
- :mod:`maskdiff.sampler`   ancestral and confidence-greedy reverse samplers
- :mod:`maskdiff.evaluate`  likelihoods, multiple choice, exact match, reversal demo
- :mod:`maskdiff.scaling`   IsoFLOP quadratic fits and power-law regression
- :mod:`maskdiff.checks`    brute-force consistency checks against the oracle
- :mod:`maskdiff.cli`       command-line front end
"""

from maskdiff.process import Vocabulary, alpha, forward_mask, forward_mask_frozen
from maskdiff.oracle import (
    BigramSource,
    TabularJoint,
    ZeroSupportError,
    exact_conditional,
    exact_conditional_nll,
    exact_nll,
    joint_from_bigram,
    sample_joint,
)
from maskdiff.model import (
    CompactModel,
    OracleModel,
    Prediction,
    TabularModel,
    TrainConfig,
    flops,
    loss_and_grad,
    loss_estimate,
    predict,
    sft_step,
    train,
)
from maskdiff.guidance import GuidanceConfig, combine, guided_predict, masked_condition_input
from maskdiff.sampler import (
    SampleConfig,
    ancestral_sample,
    ancestral_step,
    greedy_sample,
    strip_eos,
)

__version__ = "0.1.0"
