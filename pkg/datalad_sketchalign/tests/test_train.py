from datalad.tests.utils_pytest import (
    assert_equal,
    assert_in,
    assert_result_count,
    assert_true,
)

from ..conftest import (
    TINY_POLICY,
    seq,
    two_points,
)
from ..datagen import (
    make_record,
    preprocess,
)
from ..policy import (
    ConstraintPolicy,
    load_checkpoint,
    save_checkpoint,
)
from ..train import (
    SketchalignAlign,
    SketchalignPretrain,
    SketchalignSft,
    record_examples,
)
from ..utils import (
    read_jsonl,
    write_jsonl,
)

TINY_CONFIG = """\
# tiny policy
policy.embed-dim = 2
policy.encoder-layers = 1
policy.decoder-layers = 1
policy.heads = 1
policy.feedforward-dim = 4
policy.max-seq-len = 16

pretrain.epochs = 1
pretrain.batch-size = 2
sft.epochs = 2
sft.batch-size = 1
rl.batch-size = 1
rl.group-size = 2
rl.steps = 1
exit.k = 2
exit.rounds = 1
dpo.k = 2
dpo.rounds = 1
"""


def _records():
    full = seq(('distance_dim', (0, 1), 5.0), ('horizontal', (0, 1)))
    under = seq(('distance_dim', (0, 1), 5.0))
    return [
        dict(preprocess(make_record('points', 0, two_points((4.0, 1.0)),
                                    full)), split='train'),
        dict(preprocess(make_record('points', 1, two_points(), under)),
             split='train'),
        dict(preprocess(make_record('points', 2, two_points(), full)),
             split='test'),
    ]


def test_record_examples():
    records = _records()
    assert_equal(len(record_examples(records, 'pretrain', 16)), 3)
    sft = record_examples(records, 'sft', 16)
    assert_equal(len(sft), 2)
    assert_equal(len(sft[0][1]), 8)
    # sequences that do not fit are skipped
    assert_equal(record_examples(records, 'sft', 7), [])


def test_training_commands(tmp_path):
    data = tmp_path / 'corpus.jsonl'
    write_jsonl(_records(), data)
    config = tmp_path / 'tiny.cfg'
    config.write_text(TINY_CONFIG)

    base = tmp_path / 'base.ckpt'
    log = tmp_path / 'pretrain.jsonl'
    res = SketchalignPretrain.__call__(
        data=str(data), out=str(base), config=str(config), log=str(log),
        result_renderer='disabled')
    assert_result_count(res, 1, action='sketchalign-pretrain', status='ok')
    assert_equal((res[0]['examples'], res[0]['steps']), (2, 1))
    assert_equal(load_checkpoint(base).config.embed_dim, 2)
    assert_equal([r['phase'] for r in read_jsonl(log)], ['pretrain'])

    sft = tmp_path / 'sft.ckpt'
    res = SketchalignSft.__call__(
        data=str(data), init=str(base), out=str(sft), config=str(config),
        result_renderer='disabled')
    assert_result_count(res, 1, action='sketchalign-sft', status='ok')
    assert_equal((res[0]['examples'], res[0]['steps']), (1, 2))
    assert_equal(load_checkpoint(sft).version, 3)

    for algo in ('exit', 'dpo', 'rloo', 'grpo'):
        out = tmp_path / f'{algo}.ckpt'
        res = SketchalignAlign.__call__(
            algo=algo, data=str(data), init=str(sft), out=str(out),
            config=str(config), result_renderer='disabled')
        assert_result_count(res, 1, action='sketchalign-align',
                            status='ok', algo=algo)
        assert_true(out.exists())
    # the step count given to the command wins over the config file
    res = SketchalignAlign.__call__(
        algo='remax', data=str(data), init=str(sft),
        out=str(tmp_path / 'remax.ckpt'), config=str(config), steps=2,
        result_renderer='disabled')
    assert_equal(res[0]['steps'], 2)


def test_training_command_errors(tmp_path):
    data = tmp_path / 'corpus.jsonl'
    write_jsonl(_records()[1:], data)
    config = tmp_path / 'bad.cfg'
    config.write_text('policy.width = 3\n')
    res = SketchalignPretrain.__call__(
        data=str(data), out=str(tmp_path / 'a.ckpt'), config=str(config),
        on_failure='ignore', result_renderer='disabled')
    assert_result_count(res, 1, status='error')
    assert_in('unknown setting', str(res[0]['message'][2]))

    # the only train record is not fully constrained
    init = tmp_path / 'init.ckpt'
    save_checkpoint(ConstraintPolicy(TINY_POLICY), init)
    res = SketchalignSft.__call__(
        data=str(data), init=str(init), out=str(tmp_path / 'b.ckpt'),
        on_failure='ignore', result_renderer='disabled')
    assert_result_count(res, 1, status='error')
    assert_true(not (tmp_path / 'b.ckpt').exists())


def test_training_is_reproducible(tmp_path):
    data = tmp_path / 'corpus.jsonl'
    write_jsonl(_records(), data)
    config = tmp_path / 'tiny.cfg'
    config.write_text(TINY_CONFIG)

    def run(name):
        base = tmp_path / f'{name}.base.ckpt'
        aligned = tmp_path / f'{name}.grpo.ckpt'
        log = tmp_path / f'{name}.grpo.jsonl'
        SketchalignPretrain.__call__(
            data=str(data), out=str(base), config=str(config),
            result_renderer='disabled')
        SketchalignAlign.__call__(
            algo='grpo', data=str(data), init=str(base), out=str(aligned),
            config=str(config), steps=2, log=str(log),
            result_renderer='disabled')
        return base.read_bytes(), aligned.read_bytes(), log.read_text()

    first, second = run('a'), run('b')
    assert_equal(first[0], second[0])
    assert_equal(first[1], second[1])
    assert_equal(first[2], second[2])
    # the update changed the policy
    assert_true(first[0] != first[1])
