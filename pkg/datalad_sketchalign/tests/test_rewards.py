import math

import numpy as np
import pytest
import torch

from datalad.tests.utils_pytest import (
    assert_equal,
    assert_false,
    assert_is_none,
    assert_raises,
    assert_true,
)

from ..conftest import seq
from ..exceptions import DegenerateGroup
from ..rewards import (
    FailureMode,
    RewardConfig,
    constraintwise_penalties,
    grpo_advantages,
    kl_per_token,
    leave_one_out_advantages,
    remax_advantages,
    reward,
    rloo_advantages,
    score_tokens,
    token_penalties,
)
from ..solver import (
    SketchCategory,
    SketchStatus,
    SolveReport,
    solve,
)
from ..tokenizer import (
    VOCAB,
    encode_constraints,
)


def _report(category, curves=1.0, points=1.0, stable=True,
            per_entity=None):
    return SolveReport(
        status=SketchStatus(
            category=category,
            oc_flag=category is SketchCategory.OVER_CONSTRAINED,
            stable=stable,
            per_entity_fc=per_entity or {},
            fc_curve_fraction=curves,
            fc_point_fraction=points,
        ),
        solved_sketch=None,
        iterations=0,
        final_residual_norm=0.0,
        rank_analysis=None,
    )


def test_reward_config():
    cfg = RewardConfig.from_config()
    assert_equal(cfg, RewardConfig())
    assert_raises(ValueError, RewardConfig, r_ns=1.0)
    assert_raises(ValueError, RewardConfig, stability_bins=0)
    assert_equal(
        RewardConfig.from_config({'reward.r-f': -0.1}).r_f, -0.1)


def test_reward_arithmetic():
    r = reward(_report(SketchCategory.FULLY_CONSTRAINED), seq())
    assert_equal(r.total, 2.0)
    assert_is_none(r.failure_mode)

    r = reward(_report(SketchCategory.UNDER_CONSTRAINED, 0.5, 0.5,
                       stable=False), seq())
    assert_equal(r.total, 0.75)
    assert_equal(r.penalty, -0.25)

    r = reward(_report(SketchCategory.NOT_SOLVABLE), seq())
    assert_equal(r.total, -1.0)
    assert_equal(r.failure_mode, FailureMode.NOT_SOLVABLE)
    r = reward(_report(SketchCategory.OVER_CONSTRAINED), seq())
    assert_equal(r.total, -1.0)
    assert_equal(r.to_json()['failure_mode'], 'OC')


def test_overdim_penalty():
    cfg = RewardConfig(overdim_penalty=True)
    constraints = seq(('distance_dim', (0, 1), 5.0), ('horizontal', (0, 1)))
    report = _report(SketchCategory.FULLY_CONSTRAINED,
                     per_entity={0: True, 1: True})
    r = reward(report, constraints, cfg)
    # 2 constraints on 2 entities, half of them dimensions
    assert math.isclose(r.penalty, -0.05 - 0.125)
    assert math.isclose(r.total, 2.0 - 0.175)
    # disabled by default
    assert_equal(reward(report, constraints).total, 2.0)


def test_reward_of_solved_fixtures(f3):
    sk, constraints = f3
    r = reward(solve(sk, constraints), constraints)
    assert_equal((r.r_curves, r.r_points), (1.0, 1.0))
    oc = constraints + seq(('horizontal', (0, 1)))
    assert_equal(reward(solve(sk, oc), oc).total, -1.0)


def test_constraintwise_penalties(f4):
    sk, constraints = f4
    assert_equal(constraintwise_penalties(sk, constraints), {2: -1.0})
    assert_equal(constraintwise_penalties(sk, seq()), {})
    tokens = encode_constraints(constraints)
    assert_equal(token_penalties(tokens, {2: -1.0}),
                 [0.0] * 6 + [-1.0] * 3 + [0.0])


def test_score_tokens(f3, f4):
    sk, constraints = f3
    sample = score_tokens(sk, encode_constraints(constraints))
    assert_true(sample.fully_constrained)
    assert_equal(sample.fc_curve_fraction, 1.0)
    assert_true(sample.reward.total in (2.0, 1.75))
    assert_equal(sample.penalties, {})

    # horizontal and vertical together contradict the distance
    sk, constraints = f4
    sample = score_tokens(sk, encode_constraints(constraints),
                          with_penalties=True)
    assert_equal(sample.category, SketchCategory.NOT_SOLVABLE)
    assert_equal(sample.reward.total, -1.0)
    assert_equal(sample.penalties, {2: -1.0})


def test_score_tokens_failures(f3):
    sk, _ = f3
    truncated = [VOCAB.SOS, VOCAB.type_token('horizontal'),
                 VOCAB.ref_token(0)]
    sample = score_tokens(sk, truncated, [-0.1, -0.2])
    assert_is_none(sample.report)
    assert_equal(sample.reward.total, -0.5)
    assert_equal(sample.reward.failure_mode, FailureMode.FAILED)
    assert_equal(sample.category, SketchCategory.NOT_SOLVABLE)
    assert_equal(sample.fc_curve_fraction, 0.0)
    assert_false(sample.stable)
    assert_equal(sample.logprobs, [-0.1, -0.2])
    # illegal operands are penalized on their own item
    bad = [VOCAB.SOS, VOCAB.type_token('horizontal'), VOCAB.ref_token(0),
           VOCAB.ref_token(1), VOCAB.type_token('radius_dim'),
           VOCAB.ref_token(0), VOCAB.EOS]
    sample = score_tokens(sk, bad, with_penalties=True)
    assert_equal(sample.reward.failure_mode, FailureMode.FAILED)
    assert_equal(sample.penalties, {1: -1.0})


def test_kl_per_token():
    logp = torch.tensor([-1.0, -2.0, -0.5], dtype=torch.float64)
    assert_equal(kl_per_token(logp, logp, 'grpo').tolist(), [0.0] * 3)
    assert_equal(kl_per_token(logp, logp).tolist(), [0.0] * 3)
    ref = torch.tensor([-0.5, -3.0, -0.5], dtype=torch.float64)
    np.testing.assert_allclose(kl_per_token(logp, ref).numpy(),
                               [-0.5, 1.0, 0.0])
    assert_true((kl_per_token(logp, ref, 'grpo') >= 0).all())
    assert_raises(ValueError, kl_per_token, logp, ref, 'k2')


def test_remax_advantages():
    np.testing.assert_allclose(
        remax_advantages([1.5], [2.0], normalize=False), [-0.5])
    a = remax_advantages([1.0, 0.0, 2.0, -1.0], [0.5, 0.5, 0.5, 0.5])
    assert math.isclose(a.mean(), 0.0, abs_tol=1e-12)
    assert math.isclose(a.std(), 1.0, rel_tol=1e-6)


def test_leave_one_out_advantages():
    a = leave_one_out_advantages([2.0, 0.0, 1.0, 1.0])
    assert math.isclose(a[0], 4.0 / 3.0)
    assert math.isclose(a.sum(), 0.0, abs_tol=1e-12)
    assert_raises(DegenerateGroup, leave_one_out_advantages, [1.0])


@pytest.mark.parametrize('advantages', [rloo_advantages, grpo_advantages])
def test_constant_group_has_no_signal(advantages):
    np.testing.assert_array_equal(advantages([0.5] * 4), np.zeros(4))
    assert_raises(DegenerateGroup, advantages, [0.5])


def test_grpo_advantages():
    a = grpo_advantages([2.0, 0.0, 1.0, 1.0])
    assert math.isclose(a.mean(), 0.0, abs_tol=1e-12)
    assert math.isclose(a.std(), 1.0)
    assert a[0] > a[2] > a[1]
