"""Training commands

Pretraining and supervised fine-tuning on dataset records, and the
solver-feedback alignment procedures on the sketches of a dataset.
"""

__docformat__ = 'restructuredtext'

import logging
from typing import (
    Dict,
    List,
    Optional,
)

from datalad.interface.base import (
    Interface,
    build_doc,
)
from datalad.interface.results import get_status_dict
from datalad.interface.base import eval_results
from datalad.support.constraints import (
    EnsureChoice,
    EnsureInt,
    EnsureNone,
    EnsureStr,
)
from datalad.support.exceptions import CapturedException
from datalad.support.param import Parameter

from .alignment import (
    ALGORITHMS,
    DPOConfig,
    Example,
    ExItConfig,
    RLConfig,
    SupervisedConfig,
    TrainingSetup,
    supervised_train,
    train_dpo,
    train_exit,
    train_rl,
)
from .constraints import (
    EnsureConfigFile,
    EnsureExistingFile,
)
from .datagen import load_records
from .policy import (
    ConstraintPolicy,
    PolicyConfig,
    load_checkpoint,
    save_checkpoint,
)
from .sketch import (
    Sketch,
    load_sketch,
)
from .tokenizer import encode_constraints
from .utils import read_config_file

lgr = logging.getLogger('datalad.ext.sketchalign.train')


def _overrides(config) -> Dict:
    if not config:
        return {}
    if isinstance(config, dict):
        return config
    return read_config_file(config)


def record_examples(records: List[Dict], flag: str,
                    max_seq_len: int) -> List[Example]:
    """(sketch, tokens) of the records carrying ``flag``"""
    examples = []
    for rec in records:
        if not rec.get(flag):
            continue
        sketch, seq = load_sketch(rec)
        tokens = encode_constraints(seq)
        if len(tokens) > max_seq_len:
            lgr.debug('skipping %s, %i tokens exceed %i',
                      rec.get('id'), len(tokens), max_seq_len)
            continue
        examples.append((sketch, tokens))
    return examples


def _init_policy(init: Optional[str], overrides: Dict) -> ConstraintPolicy:
    if init:
        return load_checkpoint(init)
    return ConstraintPolicy(PolicyConfig.from_config(overrides))


def _supervised(namespace: str, flag: str, data, init, config, out, log):
    res_kwargs = dict(action=f'sketchalign-{namespace}', path=str(out))
    try:
        overrides = _overrides(config)
        policy = _init_policy(init, overrides)
        examples = record_examples(
            load_records(data, 'train'), flag, policy.config.max_seq_len)
        if not examples:
            raise ValueError(f'no {flag} records in the train split of {data}')
        lgr.info('%s on %i examples with %i parameters',
                 namespace, len(examples), policy.n_parameters)
        steps = supervised_train(
            policy, examples,
            SupervisedConfig.from_config(namespace, overrides),
            TrainingSetup.from_config(overrides, log=log, phase=namespace))
        save_checkpoint(policy, out)
    except Exception as e:
        ce = CapturedException(e)
        yield get_status_dict(
            status='error',
            message=('%s failed: %s', namespace, ce),
            exception=ce,
            **res_kwargs)
        return
    yield get_status_dict(
        status='ok',
        message=('%i steps on %i examples', steps, len(examples)),
        steps=steps,
        examples=len(examples),
        version=policy.version,
        **res_kwargs)


_common_params = dict(
    data=Parameter(
        args=("--data",),
        doc="""dataset JSONL file. Its train split is used""",
        constraints=EnsureExistingFile()),
    config=Parameter(
        args=("--config",),
        doc="""training config file with one key=value setting per line.
        Keys are configuration items without the 'datalad.sketchalign.'
        prefix, e.g. 'rloo.lr = 1e-5'""",
        constraints=EnsureConfigFile() | EnsureNone()),
    out=Parameter(
        args=("--out",),
        doc="""path of the resulting policy checkpoint""",
        constraints=EnsureStr()),
    log=Parameter(
        args=("--log",),
        doc="""path of a JSONL training log, one object per step""",
        constraints=EnsureStr() | EnsureNone()),
)


@build_doc
class SketchalignPretrain(Interface):
    """Pretrain a constraint generation policy

    A newly initialized policy is trained to predict the constraint
    sequences of all solvable records of the train split. The policy
    architecture is taken from the 'datalad.sketchalign.policy.*'
    configuration.
    """
    _examples_ = [
        dict(text="Pretrain a base model",
             code_py="sketchalign_pretrain(data='corpus.jsonl', "
                     "out='base.ckpt')",
             code_cmd="datalad sketchalign-pretrain --data corpus.jsonl "
                      "--out base.ckpt"),
    ]
    _params_ = dict(_common_params)

    @staticmethod
    @eval_results
    def __call__(data, out, config=None, log=None):
        yield from _supervised('pretrain', 'pretrain', data, None, config,
                               out, log)


@build_doc
class SketchalignSft(Interface):
    """Fine-tune a policy on fully-constrained records

    Only records that solve to a fully-constrained, stable and
    non-redundant sketch are used.
    """
    _examples_ = [
        dict(text="Fine-tune the base model",
             code_py="sketchalign_sft(data='corpus.jsonl', "
                     "init='base.ckpt', out='sft.ckpt')",
             code_cmd="datalad sketchalign-sft --data corpus.jsonl "
                      "--init base.ckpt --out sft.ckpt"),
    ]
    _params_ = dict(
        _common_params,
        init=Parameter(
            args=("--init",),
            doc="""policy checkpoint to start from""",
            constraints=EnsureExistingFile()),
    )

    @staticmethod
    @eval_results
    def __call__(data, init, out, config=None, log=None):
        yield from _supervised('sft', 'sft', data, init, config, out, log)


@build_doc
class SketchalignAlign(Interface):
    """Align a policy with solver feedback

    Supported procedures are expert iteration (exit), direct preference
    optimization (dpo), and the policy-gradient methods ReMax (remax),
    REINFORCE leave-one-out (rloo) and group relative policy optimization
    (grpo). All sketches of the train split are used as queries,
    including those whose constraints do not solve.
    """
    _examples_ = [
        dict(text="Align a fine-tuned model with RLOO",
             code_py="sketchalign_align(algo='rloo', data='corpus.jsonl', "
                     "init='sft.ckpt', out='rloo.ckpt')",
             code_cmd="datalad sketchalign-align --algo rloo "
                      "--data corpus.jsonl --init sft.ckpt "
                      "--out rloo.ckpt"),
        dict(text="Run 100 GRPO updates with settings from a file",
             code_py="sketchalign_align(algo='grpo', data='corpus.jsonl', "
                     "init='sft.ckpt', config='grpo.cfg', steps=100, "
                     "out='grpo.ckpt', log='grpo.log.jsonl')",
             code_cmd="datalad sketchalign-align --algo grpo "
                      "--data corpus.jsonl --init sft.ckpt --config "
                      "grpo.cfg --steps 100 --out grpo.ckpt "
                      "--log grpo.log.jsonl"),
    ]
    _params_ = dict(
        _common_params,
        algo=Parameter(
            args=("--algo",),
            doc="""alignment procedure""",
            constraints=EnsureChoice(*ALGORITHMS)),
        init=Parameter(
            args=("--init",),
            doc="""policy checkpoint to start from""",
            constraints=EnsureExistingFile()),
        steps=Parameter(
            args=("--steps",),
            doc="""number of policy-gradient updates. Defaults to
            'datalad.sketchalign.rl.steps'. Ignored by exit and dpo""",
            constraints=EnsureInt() | EnsureNone()),
    )

    @staticmethod
    @eval_results
    def __call__(algo, data, init, out, config=None, steps=None, log=None):
        res_kwargs = dict(action='sketchalign-align', path=str(out))
        try:
            overrides = dict(_overrides(config))
            if steps is not None:
                overrides['rl.steps'] = steps
            policy = load_checkpoint(init)
            sketches = [Sketch.from_json(r)
                        for r in load_records(data, 'train')]
            if not sketches:
                raise ValueError(f'no train records in {data}')
            setup = TrainingSetup.from_config(overrides, log=log, phase=algo)
            lgr.info('%s alignment on %i sketches', algo, len(sketches))
            if algo == 'exit':
                n_steps = train_exit(
                    policy, sketches, ExItConfig.from_config(overrides),
                    setup)
            elif algo == 'dpo':
                n_steps = train_dpo(
                    policy, sketches, DPOConfig.from_config(overrides),
                    setup)
            else:
                n_steps = len(train_rl(
                    policy, sketches, RLConfig.from_config(algo, overrides),
                    setup))
            save_checkpoint(policy, out)
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('%s alignment failed: %s', algo, ce),
                exception=ce,
                **res_kwargs)
            return
        yield get_status_dict(
            status='ok',
            message=('%s: %i steps', algo, n_steps),
            algo=algo,
            steps=n_steps,
            version=policy.version,
            **res_kwargs)
