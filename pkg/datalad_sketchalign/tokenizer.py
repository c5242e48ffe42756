"""Token vocabulary and grammar of constraint sequences

The policy consumes one geometry token row per primitive and produces a
constraint token stream ``SOS (TYPE REF..)* EOS``. Dimensions carry no
value token, values are measured on the sketch at decoding time.
"""

__docformat__ = 'restructuredtext'

import logging
import math
from dataclasses import (
    dataclass,
    replace,
)
from enum import Enum
from typing import (
    Dict,
    FrozenSet,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .exceptions import (
    BadArity,
    RefOutOfRange,
    SketchalignError,
    StructurallyInvalid,
    TooManyPrimitives,
    Truncated,
)
from .sketch import (
    MAX_CONSTRAINTS,
    MAX_PRIMITIVES,
    ConstraintInstance,
    ConstraintKind,
    ConstraintSequence,
    Primitive,
    PrimitiveKind,
    Sketch,
    expected_arity,
    measure_dimension,
    validate_constraint,
)

lgr = logging.getLogger('datalad.ext.sketchalign.tokenizer')

COORD_BINS = 64
SAMPLE_POINTS = 5
# settings of the diversity hash, reported with the vocabulary
WL_ITERATIONS = 3
WL_DIGEST_SIZE = 16

_TYPE_NAMES = {
    ConstraintKind.COINCIDENT: 'COI',
    ConstraintKind.HORIZONTAL: 'HOR',
    ConstraintKind.VERTICAL: 'VER',
    ConstraintKind.PARALLEL: 'PAR',
    ConstraintKind.PERPENDICULAR: 'PER',
    ConstraintKind.TANGENT: 'TAN',
    ConstraintKind.MIDPOINT: 'MID',
    ConstraintKind.EQUAL: 'EQU',
    ConstraintKind.CONCENTRIC: 'CON',
    ConstraintKind.DISTANCE_DIM: 'DIST',
    ConstraintKind.LENGTH_DIM: 'LEN',
    ConstraintKind.RADIUS_DIM: 'RAD',
    ConstraintKind.DIAMETER_DIM: 'DIA',
    ConstraintKind.ANGLE_DIM: 'ANG',
}


class Vocabulary:
    """Dense token ids, disjoint per token class

    Output side (what the policy emits): PAD, SOS, EOS, one type token
    per constraint kind, REF_0..REF_15. Input side: primitive kinds,
    fixed flags, and 64 coordinate bins per axis.
    """
    PAD = 0
    SOS = 1
    EOS = 2

    def __init__(self):
        self.kinds = tuple(ConstraintKind)
        self.type_offset = 3
        self.ref_offset = self.type_offset + len(self.kinds)
        self.n_refs = MAX_PRIMITIVES
        # size of the policy output space
        self.output_size = self.ref_offset + self.n_refs
        self.primitive_kinds = tuple(PrimitiveKind)
        self.primitive_offset = self.output_size
        self.fixed_offset = self.primitive_offset + len(self.primitive_kinds)
        self.xbin_offset = self.fixed_offset + 2
        self.ybin_offset = self.xbin_offset + COORD_BINS
        self.size = self.ybin_offset + COORD_BINS

    def type_token(self, kind: ConstraintKind) -> int:
        return self.type_offset + self.kinds.index(ConstraintKind(kind))

    def ref_token(self, i: int) -> int:
        if not 0 <= i < self.n_refs:
            raise RefOutOfRange(f'no pointer token for primitive {i}')
        return self.ref_offset + i

    def is_type(self, token: int) -> bool:
        return self.type_offset <= token < self.ref_offset

    def is_ref(self, token: int) -> bool:
        return self.ref_offset <= token < self.output_size

    def kind_of(self, token: int) -> ConstraintKind:
        return self.kinds[token - self.type_offset]

    def ref_index(self, token: int) -> int:
        return token - self.ref_offset

    def name(self, token: int) -> str:
        if token == self.PAD:
            return 'PAD'
        if token == self.SOS:
            return 'SOS'
        if token == self.EOS:
            return 'EOS'
        if self.is_type(token):
            return _TYPE_NAMES[self.kind_of(token)]
        if self.is_ref(token):
            return f'REF_{self.ref_index(token)}'
        if token < self.fixed_offset:
            kind = self.primitive_kinds[token - self.primitive_offset]
            return f'KIND_{kind.name}'
        if token < self.xbin_offset:
            return f'FIXED_{token - self.fixed_offset}'
        if token < self.ybin_offset:
            return f'X_{token - self.xbin_offset}'
        if token < self.size:
            return f'Y_{token - self.ybin_offset}'
        raise ValueError(f'token {token} outside of the vocabulary')

    def to_json(self) -> dict:
        return dict(
            tokens={str(t): self.name(t) for t in range(self.size)},
            output_size=self.output_size,
            coordinate_bins=COORD_BINS,
            sample_points=SAMPLE_POINTS,
            wl_hash=dict(
                graph='bipartite primitive/constraint graph',
                iterations=WL_ITERATIONS,
                digest='blake2b',
                digest_size=WL_DIGEST_SIZE,
            ),
        )


VOCAB = Vocabulary()


def quantize(value: float, lo: float, extent: float,
             bins: int = COORD_BINS) -> int:
    """Bin of a coordinate on a canvas axis, clamped to the canvas"""
    b = math.floor(bins * (value - lo) / extent)
    return min(max(b, 0), bins - 1)


def sample_points(p: Primitive) -> List[Tuple[float, float]]:
    """Five points along the path of a primitive"""
    if p.kind is PrimitiveKind.POINT:
        return [tuple(p.params)] * SAMPLE_POINTS
    ts = [k / (SAMPLE_POINTS - 1) for k in range(SAMPLE_POINTS)]
    if p.kind is PrimitiveKind.LINE:
        x1, y1, x2, y2 = p.params
        return [(x1 + t * (x2 - x1), y1 + t * (y2 - y1)) for t in ts]
    cx, cy = p.center
    r = p.radius
    if p.kind is PrimitiveKind.CIRCLE:
        angles = [2 * math.pi * k / SAMPLE_POINTS
                  for k in range(SAMPLE_POINTS)]
    else:
        start = p.params[3]
        angles = [start + t * p.sweep() for t in ts]
    return [(cx + r * math.cos(a), cy + r * math.sin(a)) for a in angles]


def encode_geometry(sketch: Sketch) -> np.ndarray:
    """Geometry token rows, one per primitive

    Columns: primitive kind, fixed flag, then x and y bins of the five
    sample points in turn.
    """
    if len(sketch) > MAX_PRIMITIVES:
        raise TooManyPrimitives(
            f'{len(sketch)} primitives exceed the limit of {MAX_PRIMITIVES}')
    canvas = sketch.canvas
    rows = np.zeros((len(sketch), 2 + 2 * SAMPLE_POINTS), dtype=np.int64)
    for i, p in enumerate(sketch):
        rows[i, 0] = VOCAB.primitive_offset \
            + VOCAB.primitive_kinds.index(p.kind)
        rows[i, 1] = VOCAB.fixed_offset + int(p.fixed)
        for k, (x, y) in enumerate(sample_points(p)):
            rows[i, 2 + 2 * k] = VOCAB.xbin_offset \
                + quantize(x, canvas.xmin, canvas.width)
            rows[i, 3 + 2 * k] = VOCAB.ybin_offset \
                + quantize(y, canvas.ymin, canvas.height)
    return rows


def encode_constraints(seq: ConstraintSequence) -> List[int]:
    tokens = [VOCAB.SOS]
    for i, c in enumerate(seq):
        if len(c.refs) not in c.kind.arities:
            raise BadArity(
                f'{c.kind.value} with {len(c.refs)} references', index=i)
        tokens.append(VOCAB.type_token(c.kind))
        try:
            tokens.extend(VOCAB.ref_token(r) for r in c.refs)
        except RefOutOfRange as e:
            e.index = i
            raise
    tokens.append(VOCAB.EOS)
    return tokens


class TokenClass(str, Enum):
    TYPE = 'type'
    EOS = 'eos'
    REF = 'ref'


@dataclass(frozen=True)
class GrammarState:
    """Position in the constraint token grammar

    ``remaining`` is 0 when a type token or EOS is expected, else the
    number of pending references of the current item.
    """
    remaining: int = 0
    kind: Optional[ConstraintKind] = None
    refs: Tuple[int, ...] = ()
    emitted: int = 0
    done: bool = False

    @property
    def expect_ref(self) -> bool:
        return self.remaining > 0

    def advance(self, token: int,
                kinds: Sequence[PrimitiveKind]) -> 'GrammarState':
        """State after ``token``; raises on a structural violation"""
        if self.done:
            raise StructurallyInvalid('token after EOS', index=self.emitted)
        if not self.expect_ref:
            if token == VOCAB.EOS:
                return replace(self, done=True)
            if VOCAB.is_type(token):
                if self.emitted >= MAX_CONSTRAINTS:
                    raise StructurallyInvalid(
                        f'more than {MAX_CONSTRAINTS} constraints',
                        index=self.emitted)
                kind = VOCAB.kind_of(token)
                return GrammarState(
                    remaining=expected_arity(kind), kind=kind, refs=(),
                    emitted=self.emitted)
            if VOCAB.is_ref(token):
                raise BadArity('reference without a constraint type',
                               index=self.emitted)
            raise StructurallyInvalid(
                f'unexpected {VOCAB.name(token)}', index=self.emitted)
        if not VOCAB.is_ref(token):
            raise BadArity(
                f'{self.kind.value} lacks {self.remaining} reference(s)',
                index=self.emitted)
        ref = VOCAB.ref_index(token)
        if ref >= len(kinds):
            raise RefOutOfRange(
                f'reference {ref} outside of {len(kinds)} primitives',
                index=self.emitted)
        refs = self.refs + (ref,)
        remaining = self.remaining - 1
        if len(refs) == 1 and len(self.kind.arities) > 1:
            remaining = expected_arity(self.kind, kinds[ref]) - 1
        if remaining == 0:
            return GrammarState(emitted=self.emitted + 1)
        return replace(self, remaining=remaining, refs=refs)


def grammar_mask(state: GrammarState) -> FrozenSet[TokenClass]:
    """Token classes allowed in a grammar state"""
    if state.done:
        return frozenset()
    if state.expect_ref:
        return frozenset((TokenClass.REF,))
    if state.emitted >= MAX_CONSTRAINTS:
        return frozenset((TokenClass.EOS,))
    return frozenset((TokenClass.TYPE, TokenClass.EOS))


def allowed_tokens(state: GrammarState, n_primitives: int) -> np.ndarray:
    """Boolean mask over the output vocabulary"""
    mask = np.zeros(VOCAB.output_size, dtype=bool)
    classes = grammar_mask(state)
    if TokenClass.EOS in classes:
        mask[VOCAB.EOS] = True
    if TokenClass.TYPE in classes:
        mask[VOCAB.type_offset:VOCAB.ref_offset] = True
    if TokenClass.REF in classes:
        mask[VOCAB.ref_offset:VOCAB.ref_offset + n_primitives] = True
    return mask


def parse_tokens(tokens: Sequence[int],
                 kinds: Sequence[PrimitiveKind]) -> List[Tuple]:
    """Structural parse into (kind, refs) items, values not filled in"""
    tokens = list(tokens)
    if not tokens or tokens[0] != VOCAB.SOS:
        raise StructurallyInvalid('token stream must start with SOS')
    state = GrammarState()
    items = []
    for tok in tokens[1:]:
        if tok == VOCAB.PAD:
            raise StructurallyInvalid('PAD before EOS', index=len(items))
        new = state.advance(tok, kinds)
        if state.expect_ref and not new.expect_ref:
            items.append((state.kind, state.refs + (VOCAB.ref_index(tok),)))
        if new.done:
            return items
        state = new
    raise Truncated('token stream ends without EOS', index=len(items))


def partial_items(tokens: Sequence[int],
                  kinds: Sequence[PrimitiveKind]) -> List[Tuple]:
    """Complete items of a token stream, up to the first violation"""
    state = GrammarState()
    items = []
    for tok in list(tokens)[1:]:
        try:
            new = state.advance(tok, kinds)
        except SketchalignError:
            break
        if state.expect_ref and not new.expect_ref:
            items.append((state.kind, state.refs + (VOCAB.ref_index(tok),)))
        if new.done:
            break
        state = new
    return items


def decode(tokens: Sequence[int], sketch: Sketch) -> ConstraintSequence:
    """Constraint sequence of a token stream

    Dimension values are the current measurements on ``sketch``. Invalid
    items are reported by raising, with the item index attached.
    """
    items = []
    for i, (kind, refs) in enumerate(parse_tokens(tokens, sketch.kinds)):
        try:
            value = measure_dimension(
                sketch, ConstraintInstance(kind, refs)) \
                if kind.is_dimension else None
            c = ConstraintInstance(kind, refs, value)
            validate_constraint(sketch, c)
        except SketchalignError as e:
            e.index = i
            raise
        items.append(c)
    return ConstraintSequence(tuple(items))


def token_item_index(tokens: Sequence[int]) -> List[Optional[int]]:
    """Constraint item index of every token after SOS

    EOS and anything that follows maps to None.
    """
    out = []
    item = -1
    for tok in list(tokens)[1:]:
        if VOCAB.is_type(tok):
            item += 1
        out.append(item if (VOCAB.is_type(tok) or VOCAB.is_ref(tok))
                   and item >= 0 else None)
    return out


def vocabulary_json() -> Dict:
    return VOCAB.to_json()
