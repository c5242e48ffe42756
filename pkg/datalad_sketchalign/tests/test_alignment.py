import math

import pytest
import torch

from datalad.tests.utils_pytest import (
    assert_equal,
    assert_in,
    assert_raises,
    assert_true,
)

from ..alignment import (
    ALGORITHMS,
    DPOConfig,
    ExItConfig,
    RLConfig,
    SupervisedConfig,
    TrainingSetup,
    dpo_loss,
    dpo_pairs,
    dpo_preference_loss,
    exit_filter,
    grpo_loss,
    policy_gradient_loss,
    sft_loss,
    supervised_train,
    train_dpo,
    train_exit,
    train_rl,
)
from ..conftest import (
    seq,
    two_points,
)
from ..exceptions import (
    DegenerateGroup,
    NoPairs,
)
from ..policy import (
    loss_and_grad,
    snapshot,
    token_logprobs,
)
from ..rewards import (
    RewardConfig,
    score_tokens,
)
from ..sketch import (
    Primitive,
    Sketch,
)
from ..solver import SolveOptions
from ..tokenizer import (
    VOCAB,
    encode_constraints,
)
from ..utils import read_jsonl

T = VOCAB.type_token
R = VOCAB.ref_token

FC_TOKENS = [VOCAB.SOS, T('distance_dim'), R(0), R(1),
             T('horizontal'), R(0), R(1), VOCAB.EOS]
UC_TOKENS = [VOCAB.SOS, T('distance_dim'), R(0), R(1), VOCAB.EOS]
OC_TOKENS = FC_TOKENS[:-1] + [T('horizontal'), R(0), R(1), VOCAB.EOS]

# fixed point 0 and line 1 starting on it
LINE_FC = [VOCAB.SOS, T('coincident'), R(0), R(1), T('horizontal'), R(1),
           T('length_dim'), R(1), VOCAB.EOS]
LINE_UC = LINE_FC[:6] + [VOCAB.EOS]
LINE_OC = LINE_FC[:-1] + [T('horizontal'), R(1), VOCAB.EOS]


def _line_sketch():
    return Sketch((
        Primitive(0, 'point', (0.0, 0.0), fixed=True),
        Primitive(1, 'line', (0.0, 0.0, 3.0, 4.0)),
    ))


@pytest.fixture
def setup(tmp_path):
    return TrainingSetup(
        reward_cfg=RewardConfig(),
        solve_opts=SolveOptions(),
        log=tmp_path / 'train.jsonl',
    )


def test_configs():
    assert_equal(ALGORITHMS, ('exit', 'dpo', 'remax', 'rloo', 'grpo'))
    assert_equal(SupervisedConfig.from_config('pretrain').lr, 3e-4)
    assert_equal(SupervisedConfig.from_config().lr, 1e-4)
    assert_equal(ExItConfig.from_config({'rl.seed': 5}).seed, 5)
    cfg = DPOConfig.from_config()
    assert_equal((cfg.beta, cfg.sft_weight, cfg.label_smoothing),
                 (0.1, 0.05, 0.3))
    cfg = RLConfig.from_config('grpo', {'grpo.clip-eps': 0.1})
    assert_equal(cfg.algo, 'grpo')
    assert_equal(cfg.clip_eps, 0.1)
    assert_equal(cfg.kl_coeff, 0.0)
    assert_equal(RLConfig.from_config('remax').kl_coeff, 0.01)
    assert_raises(ValueError, RLConfig, algo='dpo')
    assert_raises(DegenerateGroup, RLConfig, algo='rloo', group_size=1)
    # a single sample is all ReMax needs
    RLConfig(algo='remax', group_size=1)


@pytest.mark.parametrize('smoothing', [0.0, 0.3, 0.5])
def test_dpo_preference_loss_at_reference(smoothing):
    loss = dpo_preference_loss(
        torch.zeros(3, dtype=torch.float64), 0.1, smoothing)
    for v in loss.tolist():
        assert math.isclose(v, math.log(2), abs_tol=1e-12)


def test_dpo_loss_at_reference(tiny_policy):
    sk = two_points()
    ref = snapshot(tiny_policy)
    pairs = [(sk, FC_TOKENS, UC_TOKENS), (sk, FC_TOKENS, OC_TOKENS)]
    loss = dpo_loss(tiny_policy, ref, pairs, sft_weight=0.0)
    assert math.isclose(float(loss), math.log(2), abs_tol=1e-9)
    # the SFT term adds the cross-entropy of the preferred sequences
    with_sft = dpo_loss(tiny_policy, ref, pairs, sft_weight=1.0)
    ce = sft_loss(tiny_policy, [sk, sk], [FC_TOKENS, FC_TOKENS])
    assert math.isclose(float(with_sft), math.log(2) + float(ce),
                        rel_tol=1e-9)


def test_grpo_loss_at_reference(tiny_policy):
    sketches = [two_points()] * 2
    tokens = [FC_TOKENS, UC_TOKENS]
    with torch.no_grad():
        ref_logp, _ = token_logprobs(
            snapshot(tiny_policy), sketches, tokens)
    # constant group: zero advantages and zero KL at rho = 1
    loss, grad = loss_and_grad(
        tiny_policy,
        lambda: grpo_loss(tiny_policy, ref_logp, sketches, tokens,
                          [0.0, 0.0]))
    assert_equal(loss, 0.0)
    assert float(grad.abs().max()) < 1e-12
    # with an advantage, the surrogate at rho = 1 is the mean advantage
    loss, _ = loss_and_grad(
        tiny_policy,
        lambda: grpo_loss(tiny_policy, ref_logp, sketches, tokens,
                          [1.0, -0.5]))
    assert math.isclose(loss, -0.25, abs_tol=1e-12)


def test_policy_gradient_loss_without_signal(tiny_policy):
    sketches = [two_points()] * 2
    _, grad = loss_and_grad(
        tiny_policy,
        lambda: policy_gradient_loss(
            tiny_policy, sketches, [FC_TOKENS, UC_TOKENS], [0.0, 0.0]))
    assert_equal(float(grad.abs().max()), 0.0)
    # a penalty alone still pushes its item down
    _, grad = loss_and_grad(
        tiny_policy,
        lambda: policy_gradient_loss(
            tiny_policy, sketches, [FC_TOKENS, UC_TOKENS], [0.0, 0.0],
            [{1: -1.0}, {}]))
    assert float(grad.abs().max()) > 0


def _scored(tokens):
    return score_tokens(_line_sketch(), tokens)


def test_exit_filter():
    samples = [_scored(t) for t in (LINE_FC, LINE_UC, LINE_OC)]
    samples.append(_scored(LINE_FC[:3]))
    kept = exit_filter(samples)
    assert_equal(len(kept), 1)
    assert_equal(kept[0][1], LINE_FC)


def test_dpo_pairs():
    fc, uc = _scored(LINE_FC), _scored(LINE_UC)
    failed = _scored(LINE_FC[:3])
    assert_equal(uc.fc_curve_fraction, 0.0)
    pairs = dpo_pairs([fc, uc, fc, failed])
    # winners and losers are zipped in sample order
    assert_equal([p[2] for p in pairs], [LINE_UC, LINE_FC[:3]])
    assert_true(all(p[1] == LINE_FC for p in pairs))
    assert_raises(NoPairs, dpo_pairs, [fc, fc])
    assert_raises(NoPairs, dpo_pairs, [uc, failed])
    assert_raises(NoPairs, dpo_pairs, [fc, uc, failed], fc_threshold=0.0)


def test_supervised_train_fits(tiny_policy, setup):
    sk = two_points()
    examples = [(sk, FC_TOKENS)] * 4
    before = float(sft_loss(tiny_policy, [sk], [FC_TOKENS]))
    step = supervised_train(
        tiny_policy, examples,
        SupervisedConfig(lr=1e-2, epochs=10, batch_size=2), setup)
    assert_equal(step, 20)
    assert_equal(tiny_policy.version, 20)
    after = float(sft_loss(tiny_policy, [sk], [FC_TOKENS]))
    assert after < before
    log = list(read_jsonl(setup.log))
    assert_equal(len(log), 20)
    assert_equal(log[-1]['step'], 20)
    assert_equal(log[0]['phase'], 'train')
    assert_equal(supervised_train(tiny_policy, [], SupervisedConfig()), 0)


def test_train_exit(tiny_policy, setup):
    step = train_exit(
        tiny_policy, [two_points()],
        ExItConfig(k=4, rounds=2, batch_size=4, lr=1e-3), setup)
    assert step >= 0
    assert_equal(tiny_policy.version, step)


def test_train_dpo(tiny_policy, setup):
    step = train_dpo(
        tiny_policy, [two_points()],
        DPOConfig(k=4, rounds=1, batch_size=4, lr=1e-3), setup)
    assert step >= 0
    assert_equal(tiny_policy.version, step)


@pytest.mark.parametrize('algo', ['remax', 'rloo', 'grpo'])
def test_train_rl(algo, tiny_policy, setup):
    sketches = [two_points(), two_points((1.0, 2.0))]
    cfg = RLConfig(algo=algo, batch_size=1, group_size=2, steps=3,
                   ref_update_steps=2, lr=1e-3)
    history = train_rl(tiny_policy, sketches, cfg, setup)
    assert_equal(len(history), 3)
    assert_equal(tiny_policy.version, 3)
    for stats in history:
        assert math.isfinite(stats.loss)
        assert -1.0 <= stats.mean_reward <= 2.0
        assert 0.0 <= stats.fc_rate <= 1.0
    log = list(read_jsonl(setup.log))
    assert_equal([r['step'] for r in log], [1, 2, 3])
    assert_in('kl', log[0])
    assert_raises(ValueError, train_rl, tiny_policy, [], cfg, setup)


def test_encoded_fixture_tokens(f3):
    # the hand-written sequences are the ones the tokenizer produces
    _, constraints = f3
    assert_equal(encode_constraints(constraints), FC_TOKENS)
    assert_equal(encode_constraints(seq(('distance_dim', (0, 1), 5.0))),
                 UC_TOKENS)
