"""DataLad sketch alignment"""

__docformat__ = 'restructuredtext'

import logging
lgr = logging.getLogger('datalad.ext.sketchalign')

# Defines a datalad command suite.
# This variable must be bound as a setuptools entrypoint
# to be found by datalad
command_suite = (
    # description of the command suite, displayed in cmdline help
    "CAD sketch constraint generation aligned with solver feedback",
    [
        ('datalad_sketchalign.datagen', 'SketchalignDatagen',
         'sketchalign-datagen', 'sketchalign_datagen'),
        ('datalad_sketchalign.datagen', 'SketchalignStats',
         'sketchalign-stats', 'sketchalign_stats'),
        ('datalad_sketchalign.train', 'SketchalignPretrain',
         'sketchalign-pretrain', 'sketchalign_pretrain'),
        ('datalad_sketchalign.train', 'SketchalignSft',
         'sketchalign-sft', 'sketchalign_sft'),
        ('datalad_sketchalign.train', 'SketchalignAlign',
         'sketchalign-align', 'sketchalign_align'),
        ('datalad_sketchalign.metrics', 'SketchalignEval',
         'sketchalign-eval', 'sketchalign_eval'),
        ('datalad_sketchalign.solver', 'SketchalignSolve',
         'sketchalign-solve', 'sketchalign_solve'),
        ('datalad_sketchalign.render', 'SketchalignRender',
         'sketchalign-render', 'sketchalign_render'),
    ]
)

from datalad.support.extensions import register_config
from datalad.support.constraints import (
    EnsureBool,
    EnsureFloat,
    EnsureInt,
)

# (key, title, type, default)
_settings = (
    ('workers', 'Number of threads scoring samples with the solver',
     EnsureInt(), 1),
    # solver
    ('solver.max-iterations', 'Iteration budget of the solver',
     EnsureInt(), 200),
    ('solver.residual-tol',
     'Largest absolute residual of a solved sketch', EnsureFloat(), 1e-8),
    ('solver.rank-tol',
     'Relative singular value cutoff of the Jacobian rank', EnsureFloat(),
     1e-7),
    ('solver.nullspace-tol',
     'Largest nullspace row norm of a fully-constrained primitive',
     EnsureFloat(), 1e-6),
    ('solver.damping-init', 'Initial Levenberg-Marquardt damping',
     EnsureFloat(), 1e-3),
    ('solver.stability-bins', 'Grid size of the stability check',
     EnsureInt(), 4),
    # reward
    ('reward.r-unstable', 'Reward penalty of unstable sketches',
     EnsureFloat(), -0.25),
    ('reward.r-ns', 'Reward of not solvable sketches', EnsureFloat(), -1.0),
    ('reward.r-oc', 'Reward of over-constrained sketches', EnsureFloat(),
     -1.0),
    ('reward.r-f', 'Reward of invalid constraint sequences', EnsureFloat(),
     -0.5),
    ('reward.constraintwise-penalty',
     'Penalty on the tokens of each problematic constraint', EnsureFloat(),
     -1.0),
    ('reward.stability-bins', 'Grid size of the reward stability check',
     EnsureInt(), 4),
    ('reward.overdim-penalty', 'Penalize over-dimensioning',
     EnsureBool(), False),
    ('reward.overdim-count-coeff',
     'Weight of the constraints per entity penalty', EnsureFloat(), 0.05),
    ('reward.overdim-ratio-coeff',
     'Weight of the dimensions per constraint penalty', EnsureFloat(), 0.25),
    # policy
    ('policy.embed-dim', 'Embedding width of the policy', EnsureInt(), 128),
    ('policy.encoder-layers', 'Encoder layers of the policy', EnsureInt(), 2),
    ('policy.decoder-layers', 'Decoder layers of the policy', EnsureInt(), 2),
    ('policy.heads', 'Attention heads of the policy', EnsureInt(), 4),
    ('policy.feedforward-dim', 'Feed-forward width of the policy',
     EnsureInt(), 256),
    ('policy.max-seq-len', 'Longest constraint token sequence',
     EnsureInt(), 1 + 64 * 3 + 1),
    ('policy.seed', 'Seed of the policy weight initialization',
     EnsureInt(), 0),
    # supervised training
    ('pretrain.lr', 'Learning rate of pretraining', EnsureFloat(), 3e-4),
    ('pretrain.epochs', 'Epochs of pretraining', EnsureInt(), 20),
    ('pretrain.batch-size', 'Batch size of pretraining', EnsureInt(), 64),
    ('pretrain.seed', 'Seed of pretraining', EnsureInt(), 0),
    ('sft.lr', 'Learning rate of supervised fine-tuning', EnsureFloat(),
     1e-4),
    ('sft.epochs', 'Epochs of supervised fine-tuning', EnsureInt(), 10),
    ('sft.batch-size', 'Batch size of supervised fine-tuning', EnsureInt(),
     64),
    ('sft.seed', 'Seed of supervised fine-tuning', EnsureInt(), 0),
    # expert iteration
    ('exit.k', 'Samples per sketch in expert iteration', EnsureInt(), 8),
    ('exit.rounds', 'Rounds of expert iteration', EnsureInt(), 2),
    ('exit.lr', 'Learning rate of expert iteration', EnsureFloat(), 1e-6),
    ('exit.batch-size', 'Batch size of expert iteration', EnsureInt(), 64),
    ('exit.epochs', 'Epochs per expert iteration round', EnsureInt(), 1),
    ('exit.temperature', 'Sampling temperature of expert iteration',
     EnsureFloat(), 1.0),
    # preference optimization
    ('dpo.k', 'Samples per sketch in DPO', EnsureInt(), 8),
    ('dpo.rounds', 'Rounds of DPO', EnsureInt(), 2),
    ('dpo.lr', 'Learning rate of DPO', EnsureFloat(), 1e-5),
    ('dpo.batch-size', 'Batch size of DPO', EnsureInt(), 64),
    ('dpo.epochs', 'Epochs per DPO round', EnsureInt(), 1),
    ('dpo.temperature', 'Sampling temperature of DPO', EnsureFloat(), 1.0),
    ('dpo.beta', 'DPO inverse temperature', EnsureFloat(), 0.1),
    ('dpo.sft-weight', 'Weight of the SFT term of the DPO loss',
     EnsureFloat(), 0.05),
    ('dpo.label-smoothing', 'Label smoothing of the DPO loss',
     EnsureFloat(), 0.3),
    ('dpo.fc-threshold',
     'Rejected samples must have fewer fully-constrained curves',
     EnsureFloat(), 0.9),
    # reinforcement learning
    ('rl.batch-size', 'Sketches per RL update', EnsureInt(), 32),
    ('rl.group-size', 'Samples per sketch of RLOO and GRPO', EnsureInt(), 8),
    ('rl.lr', 'Learning rate of RL', EnsureFloat(), 1e-5),
    ('rl.temperature', 'Sampling temperature of RL', EnsureFloat(), 1.0),
    ('rl.ref-update-steps', 'Updates between reference policy refreshes',
     EnsureInt(), 100),
    ('rl.steps', 'Number of RL updates', EnsureInt(), 2000),
    ('rl.seed', 'Seed of RL sampling', EnsureInt(), 0),
    ('remax.kl-coeff', 'KL penalty added to the ReMax reward',
     EnsureFloat(), 0.01),
    ('rloo.kl-coeff', 'KL penalty added to the RLOO reward', EnsureFloat(),
     0.01),
    ('grpo.kl-coeff', 'KL penalty added to the GRPO reward', EnsureFloat(),
     0.0),
    ('grpo.beta', 'Weight of the GRPO KL regularization', EnsureFloat(),
     0.01),
    ('grpo.clip-eps', 'Clipping range of the GRPO ratio', EnsureFloat(),
     0.2),
    # data
    ('datagen.target-fc', 'Corpus fraction of fully-constrained records',
     EnsureFloat(), 0.08),
    ('datagen.max-primitives', 'Largest generated sketch', EnsureInt(), 16),
    ('datagen.min-fc-fraction',
     'Smallest fully-constrained curve fraction of pretraining records',
     EnsureFloat(), 0.0),
    ('datagen.seed', 'Seed of data generation', EnsureInt(), 0),
    # evaluation
    ('eval.k', 'Samples per sketch in evaluation', EnsureInt(), 8),
    ('eval.temperature', 'Sampling temperature of evaluation',
     EnsureFloat(), 1.0),
    ('eval.top-p', 'Nucleus mass of evaluation sampling', EnsureFloat(),
     1.0),
    ('eval.seed', 'Seed of evaluation sampling', EnsureInt(), 0),
)

for _key, _title, _type, _default in _settings:
    register_config(
        f'datalad.sketchalign.{_key}',
        _title,
        type=_type,
        default=_default,
        scope='global')
del _key, _title, _type, _default


from ._version import __version__
