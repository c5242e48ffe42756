import math

import numpy as np

from datalad.tests.utils_pytest import (
    assert_equal,
    assert_false,
    assert_in,
    assert_raises,
    assert_true,
)

from ..conftest import seq
from ..exceptions import (
    BadArity,
    IllegalOperandKinds,
    RefOutOfRange,
    StructurallyInvalid,
    Truncated,
)
from ..sketch import (
    ConstraintKind,
    Primitive,
    Sketch,
)
from ..tokenizer import (
    COORD_BINS,
    VOCAB,
    GrammarState,
    TokenClass,
    allowed_tokens,
    decode,
    encode_constraints,
    encode_geometry,
    grammar_mask,
    partial_items,
    quantize,
    token_item_index,
    vocabulary_json,
)

T = VOCAB.type_token
R = VOCAB.ref_token


def _sketch():
    return Sketch((
        Primitive(0, 'point', (0, 0), fixed=True),
        Primitive(1, 'point', (3, 4)),
        Primitive(2, 'line', (0, 0, 3, 4)),
        Primitive(3, 'line', (3, 4, 6, 4)),
        Primitive(4, 'circle', (6, 4, 1)),
    ))


def test_vocabulary_is_dense():
    names = [VOCAB.name(t) for t in range(VOCAB.size)]
    assert_equal(len(set(names)), VOCAB.size)
    assert_equal(VOCAB.type_offset, 3)
    assert_equal(VOCAB.ref_offset - VOCAB.type_offset, 14)
    assert_equal(VOCAB.output_size - VOCAB.ref_offset, 16)
    assert_equal(VOCAB.name(R(15)), 'REF_15')
    assert_equal(VOCAB.name(T('perpendicular')), 'PER')
    assert_raises(RefOutOfRange, R, 16)
    assert_raises(ValueError, VOCAB.name, VOCAB.size)
    obj = vocabulary_json()
    assert_equal(len(obj['tokens']), VOCAB.size)
    assert_equal(obj['wl_hash']['iterations'], 3)


def test_quantize():
    assert_equal(quantize(0.0, 0.0, 1.0), 0)
    assert_equal(quantize(0.5, 0.0, 1.0), COORD_BINS // 2)
    # clamped at both ends
    assert_equal(quantize(1.0, 0.0, 1.0), COORD_BINS - 1)
    assert_equal(quantize(-3.0, 0.0, 1.0), 0)


def test_encode_geometry():
    rows = encode_geometry(_sketch())
    assert_equal(rows.shape, (5, 12))
    assert_equal(VOCAB.name(int(rows[0, 0])), 'KIND_POINT')
    assert_equal(VOCAB.name(int(rows[0, 1])), 'FIXED_1')
    assert_equal(VOCAB.name(int(rows[2, 1])), 'FIXED_0')
    assert_equal(VOCAB.name(int(rows[4, 0])), 'KIND_CIRCLE')
    # a point repeats its location for all sample slots
    assert_equal(len(set(rows[1, 2::2])), 1)
    assert_true(all(VOCAB.name(int(t)).startswith('X_')
                    for t in rows[:, 2::2].ravel()))
    assert_true(all(VOCAB.name(int(t)).startswith('Y_')
                    for t in rows[:, 3::2].ravel()))


def test_encode_constraints():
    constraints = seq(
        ('perpendicular', (2, 3)),
        ('horizontal', (3,)),
        ('distance_dim', (0, 1), 5.0),
    )
    tokens = encode_constraints(constraints)
    assert_equal(tokens, [
        VOCAB.SOS,
        T('perpendicular'), R(2), R(3),
        T('horizontal'), R(3),
        T('distance_dim'), R(0), R(1),
        VOCAB.EOS,
    ])
    assert_equal(encode_constraints(seq()), [VOCAB.SOS, VOCAB.EOS])


def test_decode_measures_dimensions():
    sk = _sketch()
    tokens = [VOCAB.SOS, T('distance_dim'), R(0), R(1),
              T('radius_dim'), R(4), VOCAB.EOS]
    decoded = decode(tokens, sk)
    assert_equal(decoded, seq(('distance_dim', (0, 1), 5.0),
                              ('radius_dim', (4,), 1.0)))
    # re-encoding ignores values
    assert_equal(encode_constraints(decoded), tokens)


def test_decode_errors():
    sk = _sketch()
    with assert_raises(Truncated):
        decode([VOCAB.SOS, T('parallel'), R(2), R(3)], sk)
    with assert_raises(StructurallyInvalid):
        decode([T('parallel'), R(2), R(3), VOCAB.EOS], sk)
    with assert_raises(BadArity) as cm:
        decode([VOCAB.SOS, T('parallel'), R(2), R(3),
                T('parallel'), R(2), VOCAB.EOS], sk)
    assert_equal(cm.exception.index, 1)
    with assert_raises(RefOutOfRange):
        decode([VOCAB.SOS, T('length_dim'), R(9), VOCAB.EOS], sk)
    # structurally fine, illegal operands
    with assert_raises(IllegalOperandKinds) as cm:
        decode([VOCAB.SOS, T('horizontal'), R(2),
                T('perpendicular'), R(0), R(2), VOCAB.EOS], sk)
    assert_equal(cm.exception.index, 1)


def test_grammar_state():
    kinds = _sketch().kinds
    st = GrammarState()
    assert_equal(grammar_mask(st), {TokenClass.TYPE, TokenClass.EOS})
    st = st.advance(T('horizontal'), kinds)
    assert_equal(grammar_mask(st), {TokenClass.REF})
    # a line closes a horizontal item
    done = st.advance(R(2), kinds)
    assert_false(done.expect_ref)
    assert_equal(done.emitted, 1)
    # a point asks for a second point
    pending = st.advance(R(1), kinds)
    assert_true(pending.expect_ref)
    assert_equal(pending.remaining, 1)
    end = done.advance(VOCAB.EOS, kinds)
    assert_true(end.done)
    assert_equal(grammar_mask(end), frozenset())
    assert_raises(StructurallyInvalid, end.advance, VOCAB.EOS, kinds)


def test_allowed_tokens():
    mask = allowed_tokens(GrammarState(), 3)
    assert_true(mask[VOCAB.EOS])
    assert_true(mask[T('coincident')])
    assert_false(mask[R(0)])
    mask = allowed_tokens(
        GrammarState(remaining=2, kind=ConstraintKind.PARALLEL), 3)
    assert_equal(np.flatnonzero(mask).tolist(), [R(0), R(1), R(2)])


def test_max_constraints_forces_eos():
    st = GrammarState(emitted=64)
    assert_equal(grammar_mask(st), {TokenClass.EOS})
    assert_raises(StructurallyInvalid, st.advance, T('parallel'), ())


def test_token_item_index():
    tokens = [VOCAB.SOS, T('parallel'), R(2), R(3), T('horizontal'), R(3),
              VOCAB.EOS]
    assert_equal(token_item_index(tokens), [0, 0, 0, 1, 1, None])


def test_partial_items():
    kinds = _sketch().kinds
    tokens = [VOCAB.SOS, T('parallel'), R(2), R(3), T('coincident'), R(0)]
    assert_equal(partial_items(tokens, kinds),
                 [(ConstraintKind.PARALLEL, (2, 3))])
    assert_in((ConstraintKind.PARALLEL, (2, 3)),
              partial_items(tokens + [R(1), VOCAB.EOS], kinds))


def test_sample_points_of_arc():
    from ..tokenizer import sample_points
    pts = sample_points(Primitive(0, 'arc', (0, 0, 1, 0, math.pi)))
    np.testing.assert_allclose(pts[0], (1, 0), atol=1e-12)
    np.testing.assert_allclose(pts[2], (0, 1), atol=1e-12)
    np.testing.assert_allclose(pts[-1], (-1, 0), atol=1e-12)
