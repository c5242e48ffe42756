"""Post-training of the constraint policy

Supervised next-token training (pretraining and SFT), expert iteration,
direct preference optimization, and the policy-gradient methods ReMax,
RLOO and GRPO, all scored by the constraint solver.
"""

__docformat__ = 'restructuredtext'

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import (
    dataclass,
    fields,
)
from pathlib import Path
from typing import (
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import torch
from torch.nn import functional as F

from .exceptions import (
    DegenerateGroup,
    NoPairs,
)
from .policy import (
    ConstraintPolicy,
    apply_update,
    make_optimizer,
    sample_batch,
    snapshot,
    token_logprobs,
)
from .rewards import (
    RewardConfig,
    ScoredSample,
    grpo_advantages,
    kl_per_token,
    remax_advantages,
    rloo_advantages,
    score_tokens,
    token_penalties,
)
from .sketch import Sketch
from .solver import (
    SketchCategory,
    SolveOptions,
)
from .utils import (
    append_jsonl,
    obtain,
)

lgr = logging.getLogger('datalad.ext.sketchalign.alignment')

# (sketch, token sequence from SOS to EOS)
Example = Tuple[Sketch, List[int]]

ALGORITHMS = ('exit', 'dpo', 'remax', 'rloo', 'grpo')


def _from_namespace(cls, namespace: str, overrides: Optional[Dict],
                    **aliases):
    """Dataclass from the ``<namespace>.*`` configuration items

    ``aliases`` map a field to a configuration key in another namespace.
    """
    return cls(**{
        f.name: obtain(
            aliases.get(
                f.name, f"{namespace}.{f.name.replace('_', '-')}"),
            overrides)
        for f in fields(cls)
    })


@dataclass(frozen=True)
class SupervisedConfig:
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0

    @classmethod
    def from_config(cls, namespace: str = 'sft',
                    overrides: Optional[Dict] = None):
        return _from_namespace(cls, namespace, overrides)


@dataclass(frozen=True)
class ExItConfig:
    k: int = 8
    rounds: int = 2
    lr: float = 1e-6
    batch_size: int = 64
    epochs: int = 1
    temperature: float = 1.0
    seed: int = 0

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None):
        return _from_namespace(cls, 'exit', overrides, seed='rl.seed')


@dataclass(frozen=True)
class DPOConfig:
    k: int = 8
    rounds: int = 2
    lr: float = 1e-5
    batch_size: int = 64
    epochs: int = 1
    temperature: float = 1.0
    beta: float = 0.1
    sft_weight: float = 0.05
    label_smoothing: float = 0.3
    fc_threshold: float = 0.9
    seed: int = 0

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None):
        return _from_namespace(cls, 'dpo', overrides, seed='rl.seed')


@dataclass(frozen=True)
class RLConfig:
    algo: str = 'rloo'
    batch_size: int = 32
    group_size: int = 8
    lr: float = 1e-5
    temperature: float = 1.0
    ref_update_steps: int = 100
    steps: int = 2000
    seed: int = 0
    kl_coeff: float = 0.01
    beta: float = 0.01
    clip_eps: float = 0.2

    def __post_init__(self):
        if self.algo not in ('remax', 'rloo', 'grpo'):
            raise ValueError(f'{self.algo!r} is not an RL algorithm')
        if self.algo != 'remax' and self.group_size < 2:
            raise DegenerateGroup(
                f'{self.algo} needs groups of at least 2 samples')

    @classmethod
    def from_config(cls, algo: str, overrides: Optional[Dict] = None):
        overrides = dict(overrides or {}, algo=algo)
        return _from_namespace(
            cls, 'rl', overrides,
            algo='algo',
            kl_coeff=f'{algo}.kl-coeff',
            beta='grpo.beta',
            clip_eps='grpo.clip-eps',
        )


@dataclass
class TrainingSetup:
    """What all training procedures share"""
    reward_cfg: RewardConfig
    solve_opts: SolveOptions
    workers: int = 1
    log: Optional[Path] = None
    phase: str = 'train'

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None,
                    log: Optional[Path] = None, phase: str = 'train'):
        return cls(
            reward_cfg=RewardConfig.from_config(overrides),
            solve_opts=SolveOptions.from_config(overrides),
            workers=obtain('workers', overrides),
            log=Path(log) if log else None,
            phase=phase,
        )

    def record(self, step: int, loss: float,
               mean_reward: Optional[float] = None,
               fc_rate: Optional[float] = None,
               kl: Optional[float] = None) -> Dict:
        rec = dict(step=step, loss=loss, mean_reward=mean_reward,
                   fc_rate=fc_rate, kl=kl, phase=self.phase)
        lgr.info('%s step %i: loss %.6g, mean reward %s, FC rate %s',
                 self.phase, step, loss, mean_reward, fc_rate)
        if self.log:
            append_jsonl(rec, self.log)
        return rec

    def score(self, sketches: Sequence[Sketch],
              rollouts: Sequence[Tuple[List[int], List[float]]],
              with_penalties: bool = False) -> List[ScoredSample]:
        """Solver feedback for each rollout, in input order"""
        def job(args):
            sketch, (tokens, logps) = args
            return score_tokens(
                sketch, tokens, logps, self.reward_cfg, self.solve_opts,
                with_penalties=with_penalties)

        pairs = list(zip(sketches, rollouts))
        if self.workers <= 1:
            return [job(p) for p in pairs]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(job, pairs))


def _minibatches(n: int, batch_size: int,
                 rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _sequence_logprobs(policy, sketches, token_lists):
    logp, mask = token_logprobs(policy, sketches, token_lists)
    return logp.sum(dim=1), logp, mask


#
# Objectives
#

def sft_loss(policy: ConstraintPolicy,
             sketches: Sequence[Sketch],
             token_lists: Sequence[Sequence[int]]) -> torch.Tensor:
    """Mean per-token cross-entropy of the given sequences"""
    logp, mask = token_logprobs(policy, sketches, token_lists)
    return -logp.sum() / mask.sum()


def dpo_preference_loss(delta: torch.Tensor, beta: float,
                        label_smoothing: float) -> torch.Tensor:
    """Label-smoothed preference loss per pair"""
    return -(1 - label_smoothing) * F.logsigmoid(beta * delta) \
        - label_smoothing * F.logsigmoid(-beta * delta)


def dpo_loss(policy: ConstraintPolicy,
             ref: ConstraintPolicy,
             pairs: Sequence[Tuple[Sketch, List[int], List[int]]],
             beta: float = 0.1,
             sft_weight: float = 0.05,
             label_smoothing: float = 0.3) -> torch.Tensor:
    """Preference loss over (sketch, preferred, rejected) token pairs,
    plus the weighted cross-entropy of the preferred sequences"""
    sketches = [p[0] for p in pairs]
    wins = [p[1] for p in pairs]
    losses = [p[2] for p in pairs]
    lw, logp_w, mask_w = _sequence_logprobs(policy, sketches, wins)
    ll, _, _ = _sequence_logprobs(policy, sketches, losses)
    with torch.no_grad():
        rw, _, _ = _sequence_logprobs(ref, sketches, wins)
        rl, _, _ = _sequence_logprobs(ref, sketches, losses)
    delta = (lw - rw) - (ll - rl)
    ce = -logp_w.sum() / mask_w.sum()
    return dpo_preference_loss(delta, beta, label_smoothing).mean() \
        + sft_weight * ce


def _penalty_tensor(token_lists, penalties, shape) -> torch.Tensor:
    out = torch.zeros(shape, dtype=torch.float64)
    for b, (tokens, pens) in enumerate(zip(token_lists, penalties)):
        per_token = token_penalties(tokens, pens)
        out[b, :len(per_token)] = torch.tensor(
            per_token, dtype=torch.float64)
    return out


def policy_gradient_loss(
        policy: ConstraintPolicy,
        sketches: Sequence[Sketch],
        token_lists: Sequence[Sequence[int]],
        advantages: Sequence[float],
        penalties: Optional[Sequence[Dict[int, float]]] = None,
) -> torch.Tensor:
    """REINFORCE loss -mean(a * log pi(tau)) with per-token penalties

    The penalty of a problematic item is added to the advantage of each
    of its tokens.
    """
    logp, mask = token_logprobs(policy, sketches, token_lists)
    weights = torch.as_tensor(
        np.asarray(advantages, dtype=np.float64)).unsqueeze(1) * mask
    if penalties is not None:
        weights = weights + _penalty_tensor(
            token_lists, penalties, logp.shape) * mask
    return -(weights * logp).sum(dim=1).mean()


def grpo_loss(
        policy: ConstraintPolicy,
        ref_logprobs: torch.Tensor,
        sketches: Sequence[Sketch],
        token_lists: Sequence[Sequence[int]],
        advantages: Sequence[float],
        penalties: Optional[Sequence[Dict[int, float]]] = None,
        clip_eps: float = 0.2,
        beta: float = 0.01,
) -> torch.Tensor:
    """Negated clipped surrogate with the nonnegative KL regularizer

    Per-token terms are averaged over each sequence, then over sequences.
    """
    logp, mask = token_logprobs(policy, sketches, token_lists)
    adv = torch.as_tensor(
        np.asarray(advantages, dtype=np.float64)).unsqueeze(1) \
        .expand_as(logp)
    if penalties is not None:
        adv = adv + _penalty_tensor(token_lists, penalties, logp.shape)
    ratio = torch.exp(logp - ref_logprobs)
    surrogate = torch.min(
        ratio * adv,
        torch.clamp(ratio, 1 - clip_eps, 1 + clip_eps) * adv)
    kl = kl_per_token(logp, ref_logprobs, 'grpo')
    per_token = (surrogate - beta * kl) * mask
    per_sequence = per_token.sum(dim=1) / mask.sum(dim=1).clamp(min=1)
    return -per_sequence.mean()


#
# Supervised training
#

def sft_step(policy: ConstraintPolicy,
             optimizer: torch.optim.Optimizer,
             batch: Sequence[Example]) -> float:
    sketches = [e[0] for e in batch]
    tokens = [e[1] for e in batch]
    return apply_update(
        policy, optimizer, lambda: sft_loss(policy, sketches, tokens))


def supervised_train(policy: ConstraintPolicy,
                     examples: Sequence[Example],
                     cfg: SupervisedConfig,
                     setup: Optional[TrainingSetup] = None,
                     optimizer: Optional[torch.optim.Optimizer] = None,
                     step: int = 0) -> int:
    """Epochs of next-token training; returns the step counter"""
    if not examples:
        lgr.warning('no training examples')
        return step
    optimizer = optimizer or make_optimizer(policy, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _minibatches(len(examples), cfg.batch_size, rng):
            loss = sft_step(policy, optimizer, [examples[i] for i in idx])
            losses.append(loss)
            step += 1
            if setup:
                setup.record(step, loss)
        lgr.info('epoch %i: mean loss %.6g', epoch + 1, float(np.mean(losses)))
    return step


#
# Expert iteration
#

def rollouts(policy, sketches, k, temperature, generator, setup,
             top_p=1.0, with_penalties=False) -> List[List[ScoredSample]]:
    """K scored samples per sketch"""
    repeated = [s for s in sketches for _ in range(k)]
    samples = setup.score(
        repeated,
        sample_batch(policy, repeated, temperature, top_p, generator),
        with_penalties=with_penalties)
    return [samples[i * k:(i + 1) * k] for i in range(len(sketches))]


def exit_filter(samples: Sequence[ScoredSample]) -> List[Example]:
    """Samples that are fully-constrained, solvable and not redundant"""
    return [
        (s.sketch, s.tokens) for s in samples
        if s.report is not None and s.report.solvable
        and s.fully_constrained
        and not s.report.status.oc_flag
    ]


def exit_round(policy: ConstraintPolicy,
               sketches: Sequence[Sketch],
               cfg: ExItConfig,
               setup: TrainingSetup,
               generator: torch.Generator,
               optimizer: Optional[torch.optim.Optimizer] = None,
               step: int = 0) -> Tuple[List[Example], int]:
    """Rejection-sample K sequences per sketch, fine-tune on the kept"""
    kept = []
    rewards = []
    for group in rollouts(policy, sketches, cfg.k, cfg.temperature,
                          generator, setup):
        kept.extend(exit_filter(group))
        rewards.extend(s.reward.total for s in group)
    lgr.info('expert iteration kept %i of %i samples',
             len(kept), len(rewards))
    step = supervised_train(
        policy, kept,
        SupervisedConfig(lr=cfg.lr, epochs=cfg.epochs,
                         batch_size=cfg.batch_size, seed=cfg.seed + step),
        setup, optimizer, step)
    return kept, step


def train_exit(policy: ConstraintPolicy, sketches: Sequence[Sketch],
               cfg: ExItConfig, setup: TrainingSetup) -> int:
    generator = torch.Generator().manual_seed(cfg.seed)
    optimizer = make_optimizer(policy, cfg.lr)
    step = 0
    for r in range(cfg.rounds):
        lgr.info('expert iteration round %i of %i', r + 1, cfg.rounds)
        _, step = exit_round(
            policy, sketches, cfg, setup, generator, optimizer, step)
    return step


#
# Direct preference optimization
#

def dpo_pairs(samples: Sequence[ScoredSample],
              fc_threshold: float = 0.9) -> List[Tuple[Sketch, List[int],
                                                       List[int]]]:
    """Preferred/rejected pairs among the samples of one sketch

    Preferred samples are fully-constrained. Rejected samples are under-
    or over-constrained or not solvable, with fewer than ``fc_threshold``
    of their curves fully constrained.
    """
    wins = [s for s in samples if s.fully_constrained]
    losses = [
        s for s in samples
        if s.category in (SketchCategory.UNDER_CONSTRAINED,
                          SketchCategory.OVER_CONSTRAINED,
                          SketchCategory.NOT_SOLVABLE)
        and s.fc_curve_fraction < fc_threshold
    ]
    if not wins or not losses:
        raise NoPairs(
            f'{len(wins)} preferred and {len(losses)} rejected samples')
    return [(w.sketch, w.tokens, l.tokens) for w, l in zip(wins, losses)]


def dpo_round(policy: ConstraintPolicy,
              sketches: Sequence[Sketch],
              cfg: DPOConfig,
              setup: TrainingSetup,
              generator: torch.Generator,
              optimizer: Optional[torch.optim.Optimizer] = None,
              step: int = 0) -> int:
    """Sample, pair and optimize against the policy at round start"""
    ref = snapshot(policy)
    optimizer = optimizer or make_optimizer(policy, cfg.lr)
    pairs = []
    for group in rollouts(policy, sketches, cfg.k, cfg.temperature,
                          generator, setup):
        try:
            pairs.extend(dpo_pairs(group, cfg.fc_threshold))
        except NoPairs as e:
            lgr.debug('skipping sketch: %s', e)
    lgr.info('DPO round with %i pairs', len(pairs))
    if not pairs:
        return step
    rng = np.random.default_rng(cfg.seed + step)
    for _ in range(cfg.epochs):
        for idx in _minibatches(len(pairs), cfg.batch_size, rng):
            batch = [pairs[i] for i in idx]
            loss = apply_update(
                policy, optimizer,
                lambda: dpo_loss(policy, ref, batch, cfg.beta,
                                 cfg.sft_weight, cfg.label_smoothing))
            step += 1
            setup.record(step, loss)
    return step


def train_dpo(policy: ConstraintPolicy, sketches: Sequence[Sketch],
              cfg: DPOConfig, setup: TrainingSetup) -> int:
    generator = torch.Generator().manual_seed(cfg.seed)
    optimizer = make_optimizer(policy, cfg.lr)
    step = 0
    for r in range(cfg.rounds):
        lgr.info('DPO round %i of %i', r + 1, cfg.rounds)
        step = dpo_round(
            policy, sketches, cfg, setup, generator, optimizer, step)
    return step


#
# Policy-gradient methods
#

@dataclass
class UpdateStats:
    loss: float
    mean_reward: float
    fc_rate: float
    kl: float


def _shaped_rewards(samples: Sequence[ScoredSample],
                    ref: ConstraintPolicy,
                    kl_coeff: float) -> Tuple[np.ndarray, np.ndarray]:
    """Rewards minus kl_coeff times the summed log-ratio KL"""
    rewards = np.array([s.reward.total for s in samples], dtype=np.float64)
    with torch.no_grad():
        ref_logp, mask = token_logprobs(
            ref, [s.sketch for s in samples], [s.tokens for s in samples])
    kl = np.zeros(len(samples))
    for b, s in enumerate(samples):
        n = int(mask[b].sum())
        kl[b] = float(kl_per_token(
            torch.tensor(s.logprobs[:n], dtype=torch.float64),
            ref_logp[b, :n]).sum())
    return rewards - kl_coeff * kl, kl


def _stats(loss, samples, kl) -> UpdateStats:
    return UpdateStats(
        loss=loss,
        mean_reward=float(np.mean([s.reward.total for s in samples])),
        fc_rate=float(np.mean([s.fully_constrained for s in samples])),
        kl=float(np.mean(kl)),
    )


def remax_update(policy: ConstraintPolicy,
                 ref: ConstraintPolicy,
                 optimizer: torch.optim.Optimizer,
                 sketches: Sequence[Sketch],
                 cfg: RLConfig,
                 setup: TrainingSetup,
                 generator: torch.Generator) -> UpdateStats:
    """One sample per sketch against the greedy-sequence baseline"""
    samples = setup.score(
        sketches,
        sample_batch(policy, sketches, cfg.temperature, 1.0, generator),
        with_penalties=True)
    greedy = setup.score(
        sketches, sample_batch(policy, sketches, temperature=0.0))
    rewards, kl = _shaped_rewards(samples, ref, cfg.kl_coeff)
    baselines, _ = _shaped_rewards(greedy, ref, cfg.kl_coeff)
    advantages = remax_advantages(rewards, baselines)
    loss = apply_update(
        policy, optimizer,
        lambda: policy_gradient_loss(
            policy, sketches, [s.tokens for s in samples], advantages,
            [s.penalties for s in samples]))
    return _stats(loss, samples, kl)


def rloo_update(policy: ConstraintPolicy,
                ref: ConstraintPolicy,
                optimizer: torch.optim.Optimizer,
                sketches: Sequence[Sketch],
                cfg: RLConfig,
                setup: TrainingSetup,
                generator: torch.Generator) -> UpdateStats:
    """G samples per sketch against the leave-one-out mean"""
    groups = rollouts(policy, sketches, cfg.group_size, cfg.temperature,
                      generator, setup, with_penalties=True)
    samples = [s for g in groups for s in g]
    rewards, kl = _shaped_rewards(samples, ref, cfg.kl_coeff)
    G = cfg.group_size
    advantages = np.concatenate([
        rloo_advantages(rewards[i:i + G])
        for i in range(0, len(samples), G)])
    loss = apply_update(
        policy, optimizer,
        lambda: policy_gradient_loss(
            policy, [s.sketch for s in samples],
            [s.tokens for s in samples], advantages,
            [s.penalties for s in samples]))
    return _stats(loss, samples, kl)


def grpo_update(policy: ConstraintPolicy,
                ref: ConstraintPolicy,
                optimizer: torch.optim.Optimizer,
                sketches: Sequence[Sketch],
                cfg: RLConfig,
                setup: TrainingSetup,
                generator: torch.Generator) -> UpdateStats:
    """G samples per sketch from the reference, group-relative advantages"""
    groups = rollouts(ref, sketches, cfg.group_size, cfg.temperature,
                      generator, setup, with_penalties=True)
    samples = [s for g in groups for s in g]
    rewards, kl = _shaped_rewards(samples, ref, cfg.kl_coeff)
    G = cfg.group_size
    advantages = np.concatenate([
        grpo_advantages(rewards[i:i + G])
        for i in range(0, len(samples), G)])
    sample_sketches = [s.sketch for s in samples]
    tokens = [s.tokens for s in samples]
    with torch.no_grad():
        ref_logp, _ = token_logprobs(ref, sample_sketches, tokens)
    loss = apply_update(
        policy, optimizer,
        lambda: grpo_loss(
            policy, ref_logp, sample_sketches, tokens, advantages,
            [s.penalties for s in samples], cfg.clip_eps, cfg.beta))
    return _stats(loss, samples, kl)


_RL_UPDATES = dict(
    remax=remax_update,
    rloo=rloo_update,
    grpo=grpo_update,
)


def train_rl(policy: ConstraintPolicy, sketches: Sequence[Sketch],
             cfg: RLConfig, setup: TrainingSetup) -> List[UpdateStats]:
    """``cfg.steps`` updates over batches cycling through the sketches

    The reference policy is refreshed every ``cfg.ref_update_steps``
    updates.
    """
    if not sketches:
        raise ValueError('no sketches to train on')
    update = _RL_UPDATES[cfg.algo]
    generator = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(policy, cfg.lr)
    ref = snapshot(policy)
    history = []
    batches = _minibatches(len(sketches), cfg.batch_size, rng)
    for step in range(1, cfg.steps + 1):
        idx = next(batches, None)
        if idx is None:
            batches = _minibatches(len(sketches), cfg.batch_size, rng)
            idx = next(batches)
        stats = update(policy, ref, optimizer, [sketches[i] for i in idx],
                       cfg, setup, generator)
        history.append(stats)
        setup.record(step, stats.loss, stats.mean_reward, stats.fc_rate,
                     stats.kl)
        if step % cfg.ref_update_steps == 0:
            lgr.debug('refreshing reference policy at step %i', step)
            ref = snapshot(policy)
    return history
