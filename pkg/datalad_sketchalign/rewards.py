"""Solver feedback as rewards

Sequence-wise rewards from solve reports, per-item penalties for
constraints that break solvability, KL estimators and the advantage
normalizations of the policy-gradient methods.
"""

__docformat__ = 'restructuredtext'

import logging
from dataclasses import (
    dataclass,
    field,
    fields,
)
from enum import Enum
from typing import (
    Dict,
    List,
    Optional,
    Sequence,
)

import numpy as np
import torch

from datalad.support.exceptions import CapturedException

from .exceptions import (
    DegenerateGroup,
    SketchalignError,
)
from .sketch import (
    ConstraintSequence,
    Sketch,
)
from .solver import (
    SketchCategory,
    SolveOptions,
    SolveReport,
    incremental_apply,
    solve,
    stability_check,
)
from .tokenizer import (
    decode,
    token_item_index,
)
from .utils import obtain

lgr = logging.getLogger('datalad.ext.sketchalign.rewards')

NORM_EPS = 1e-8


@dataclass(frozen=True)
class RewardConfig:
    r_unstable: float = -0.25
    r_ns: float = -1.0
    r_oc: float = -1.0
    r_f: float = -0.5
    constraintwise_penalty: float = -1.0
    stability_bins: int = 4
    overdim_penalty: bool = False
    overdim_count_coeff: float = 0.05
    overdim_ratio_coeff: float = 0.25

    def __post_init__(self):
        for name in ('r_unstable', 'r_ns', 'r_oc', 'r_f',
                     'constraintwise_penalty'):
            if getattr(self, name) > 0:
                raise ValueError(f'{name} must not be positive')
        if self.stability_bins < 1:
            raise ValueError('stability_bins must be positive')

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None) -> 'RewardConfig':
        return cls(**{
            f.name: obtain(f"reward.{f.name.replace('_', '-')}", overrides)
            for f in fields(cls)
        })


class FailureMode(str, Enum):
    NOT_SOLVABLE = 'NS'
    OVER_CONSTRAINED = 'OC'
    FAILED = 'F'


@dataclass(frozen=True)
class RewardBreakdown:
    r_curves: float = 0.0
    r_points: float = 0.0
    penalty: float = 0.0
    total: float = 0.0
    failure_mode: Optional[FailureMode] = None

    @classmethod
    def failure(cls, mode: FailureMode, value: float) -> 'RewardBreakdown':
        return cls(total=value, failure_mode=mode)

    def to_json(self) -> dict:
        return dict(
            r_curves=self.r_curves,
            r_points=self.r_points,
            penalty=self.penalty,
            total=self.total,
            failure_mode=self.failure_mode.value
            if self.failure_mode else None,
        )


def reward(report: SolveReport,
           seq: ConstraintSequence,
           cfg: Optional[RewardConfig] = None,
           sketch: Optional[Sketch] = None) -> RewardBreakdown:
    """Sequence-wise reward of a solved sketch

    With the input ``sketch`` given, stability is re-evaluated at the
    reward's own grid size, otherwise the report's flag is used.
    """
    cfg = cfg or RewardConfig()
    category = report.status.category
    if category is SketchCategory.NOT_SOLVABLE:
        return RewardBreakdown.failure(FailureMode.NOT_SOLVABLE, cfg.r_ns)
    if category is SketchCategory.OVER_CONSTRAINED:
        return RewardBreakdown.failure(
            FailureMode.OVER_CONSTRAINED, cfg.r_oc)
    if sketch is not None:
        stable = stability_check(
            sketch, report.solved_sketch, cfg.stability_bins)
    else:
        stable = report.status.stable
    r_curves = report.status.fc_curve_fraction
    r_points = report.status.fc_point_fraction
    penalty = 0.0 if stable else cfg.r_unstable
    if cfg.overdim_penalty and len(seq):
        n_entities = len(sketch) if sketch is not None \
            else len(report.status.per_entity_fc)
        penalty -= cfg.overdim_count_coeff * len(seq) / max(n_entities, 1)
        penalty -= cfg.overdim_ratio_coeff * seq.n_dimensions / len(seq)
    return RewardBreakdown(
        r_curves=r_curves,
        r_points=r_points,
        penalty=penalty,
        total=r_curves + r_points + penalty,
    )


def constraintwise_penalties(
        sketch: Sketch,
        seq: ConstraintSequence,
        cfg: Optional[RewardConfig] = None,
        opts: Optional[SolveOptions] = None,
) -> Dict[int, float]:
    """Penalty of every item that makes the sketch unsolvable or redundant"""
    cfg = cfg or RewardConfig()
    if not len(seq):
        return {}
    _, problematic = incremental_apply(sketch, seq, opts)
    return {i: cfg.constraintwise_penalty for i in sorted(problematic)}


def token_penalties(tokens: Sequence[int],
                    penalties: Dict[int, float]) -> List[float]:
    """Per-token penalties, aligned with the tokens after SOS"""
    return [
        penalties.get(item, 0.0) if item is not None else 0.0
        for item in token_item_index(tokens)
    ]


@dataclass
class ScoredSample:
    """A sampled token sequence with its solver feedback"""
    sketch: Sketch
    tokens: List[int]
    logprobs: List[float] = field(default_factory=list)
    reward: RewardBreakdown = field(default_factory=RewardBreakdown)
    report: Optional[SolveReport] = None
    constraints: Optional[ConstraintSequence] = None
    penalties: Dict[int, float] = field(default_factory=dict)

    @property
    def category(self) -> SketchCategory:
        """Solver category, decode failures count as not solvable"""
        if self.report is None:
            return SketchCategory.NOT_SOLVABLE
        return self.report.status.category

    @property
    def fully_constrained(self) -> bool:
        return self.category is SketchCategory.FULLY_CONSTRAINED

    @property
    def stable(self) -> bool:
        return self.report is not None and self.report.status.stable

    @property
    def fc_curve_fraction(self) -> float:
        if self.report is None:
            return 0.0
        return self.report.status.fc_curve_fraction


def score_tokens(
        sketch: Sketch,
        tokens: Sequence[int],
        logprobs: Optional[Sequence[float]] = None,
        cfg: Optional[RewardConfig] = None,
        opts: Optional[SolveOptions] = None,
        with_penalties: bool = False,
) -> ScoredSample:
    """Decode, solve and reward one token sequence

    Decode and validation failures, and solver exceptions, receive the
    ``r_f`` reward. With ``with_penalties``, unsolvable and redundant
    sequences also get their per-item penalties.
    """
    cfg = cfg or RewardConfig()
    sample = ScoredSample(
        sketch=sketch,
        tokens=list(tokens),
        logprobs=list(logprobs or []),
    )
    try:
        seq = decode(tokens, sketch)
        report = solve(sketch, seq, opts)
    except SketchalignError as e:
        lgr.debug('sample fails to decode: %s', CapturedException(e))
        sample.reward = RewardBreakdown.failure(FailureMode.FAILED, cfg.r_f)
        if with_penalties and getattr(e, 'index', None) is not None:
            sample.penalties = {e.index: cfg.constraintwise_penalty}
        return sample
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        lgr.debug('solver failed on sample: %s', CapturedException(e))
        sample.reward = RewardBreakdown.failure(FailureMode.FAILED, cfg.r_f)
        return sample
    sample.constraints = seq
    sample.report = report
    sample.reward = reward(report, seq, cfg, sketch)
    if with_penalties and sample.reward.failure_mode in (
            FailureMode.NOT_SOLVABLE, FailureMode.OVER_CONSTRAINED):
        sample.penalties = constraintwise_penalties(sketch, seq, cfg, opts)
    return sample


def kl_per_token(logprobs: torch.Tensor, ref_logprobs: torch.Tensor,
                 estimator: str = 'log-ratio') -> torch.Tensor:
    """Per-token KL estimates of the policy against the reference

    ``log-ratio`` is log pi - log pi_ref. ``grpo`` is 1/rho + log rho - 1
    with rho = pi / pi_ref, which is nonnegative everywhere.
    """
    log_rho = logprobs - ref_logprobs
    if estimator == 'log-ratio':
        return log_rho
    if estimator == 'grpo':
        return torch.exp(-log_rho) + log_rho - 1
    raise ValueError(f'unknown KL estimator {estimator!r}')


def _normalize(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / (values.std() + NORM_EPS)


def remax_advantages(rewards: Sequence[float],
                     baselines: Sequence[float],
                     normalize: bool = True) -> np.ndarray:
    """Reward minus greedy-sequence reward, normalized over the batch"""
    a = np.asarray(rewards, dtype=np.float64) \
        - np.asarray(baselines, dtype=np.float64)
    return _normalize(a) if normalize else a


def leave_one_out_advantages(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    G = len(r)
    if G < 2:
        raise DegenerateGroup(f'a group needs at least 2 samples, got {G}')
    return r - (r.sum() - r) / (G - 1)


def rloo_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Leave-one-out advantages, normalized within the group"""
    return _normalize(leave_one_out_advantages(rewards))


def grpo_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Group-relative advantages; a constant group yields zeros"""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < 2:
        raise DegenerateGroup(
            f'a group needs at least 2 samples, got {len(r)}')
    std = r.std()
    if std < NORM_EPS:
        return np.zeros_like(r)
    return (r - r.mean()) / std
