"""Sketch domain model

Primitives, constraints and dimensions of a 2D CAD sketch, together with
the degree-of-freedom bookkeeping that maps a sketch onto the variable
vector of the solver.
"""

__docformat__ = 'restructuredtext'

import logging
import math
from dataclasses import (
    dataclass,
    field,
)
from enum import Enum
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .exceptions import (
    BadArity,
    DegeneratePrimitive,
    IllegalOperandKinds,
    InvalidPrimitive,
    MissingValue,
    RefOutOfRange,
    SequenceTooLong,
    StructurallyInvalid,
    TooManyPrimitives,
)

lgr = logging.getLogger('datalad.ext.sketchalign.sketch')

MAX_PRIMITIVES = 16
MAX_CONSTRAINTS = 64
# canvas margin per side, relative to the geometry bounding box
CANVAS_MARGIN = 0.1


class PrimitiveKind(str, Enum):
    POINT = 'point'
    LINE = 'line'
    CIRCLE = 'circle'
    ARC = 'arc'

    @property
    def n_params(self) -> int:
        return _PARAM_COUNT[self]

    @property
    def is_curve(self) -> bool:
        return self is not PrimitiveKind.POINT


_PARAM_COUNT = {
    PrimitiveKind.POINT: 2,
    PrimitiveKind.LINE: 4,
    PrimitiveKind.CIRCLE: 3,
    PrimitiveKind.ARC: 5,
}


class ConstraintKind(str, Enum):
    COINCIDENT = 'coincident'
    HORIZONTAL = 'horizontal'
    VERTICAL = 'vertical'
    PARALLEL = 'parallel'
    PERPENDICULAR = 'perpendicular'
    TANGENT = 'tangent'
    MIDPOINT = 'midpoint'
    EQUAL = 'equal'
    CONCENTRIC = 'concentric'
    DISTANCE_DIM = 'distance_dim'
    LENGTH_DIM = 'length_dim'
    RADIUS_DIM = 'radius_dim'
    DIAMETER_DIM = 'diameter_dim'
    ANGLE_DIM = 'angle_dim'

    @property
    def is_dimension(self) -> bool:
        return self.value.endswith('_dim')

    @property
    def arities(self) -> frozenset:
        return ARITIES[self]


_P = PrimitiveKind.POINT
_L = PrimitiveKind.LINE
_C = PrimitiveKind.CIRCLE
_A = PrimitiveKind.ARC
_ROUND = (_C, _A)


def _round_pairs(n_residuals: int) -> Dict[tuple, int]:
    return {(a, b): n_residuals for a in _ROUND for b in _ROUND}


# constraint kind -> {operand kinds: residual count}
LEGAL_OPERANDS: Dict[ConstraintKind, Dict[tuple, int]] = {
    ConstraintKind.COINCIDENT: {
        (_P, _P): 2,
        # endpoint/center attachment of a point to a curve
        (_P, _L): 2,
        (_P, _C): 2,
        (_P, _A): 2,
    },
    ConstraintKind.HORIZONTAL: {(_L,): 1, (_P, _P): 1},
    ConstraintKind.VERTICAL: {(_L,): 1, (_P, _P): 1},
    ConstraintKind.PARALLEL: {(_L, _L): 1},
    ConstraintKind.PERPENDICULAR: {(_L, _L): 1},
    ConstraintKind.TANGENT: {(_L, _C): 1, (_L, _A): 1, **_round_pairs(1)},
    ConstraintKind.MIDPOINT: {(_P, _L): 2},
    ConstraintKind.EQUAL: {(_L, _L): 1, **_round_pairs(1)},
    ConstraintKind.CONCENTRIC: _round_pairs(2),
    ConstraintKind.DISTANCE_DIM: {(_P, _P): 1},
    ConstraintKind.LENGTH_DIM: {(_L,): 1},
    ConstraintKind.RADIUS_DIM: {(_C,): 1, (_A,): 1},
    ConstraintKind.DIAMETER_DIM: {(_C,): 1, (_A,): 1},
    ConstraintKind.ANGLE_DIM: {(_L, _L): 1},
}

ARITIES: Dict[ConstraintKind, frozenset] = {
    k: frozenset(len(ops) for ops in v) for k, v in LEGAL_OPERANDS.items()
}
MAX_ARITY = max(max(a) for a in ARITIES.values())

# kinds whose operands are interchangeable
SYMMETRIC_KINDS = frozenset((
    ConstraintKind.COINCIDENT,
    ConstraintKind.HORIZONTAL,
    ConstraintKind.VERTICAL,
    ConstraintKind.PARALLEL,
    ConstraintKind.PERPENDICULAR,
    ConstraintKind.EQUAL,
    ConstraintKind.CONCENTRIC,
    ConstraintKind.DISTANCE_DIM,
    ConstraintKind.ANGLE_DIM,
))


def expected_arity(kind: ConstraintKind,
                   first: Optional[PrimitiveKind] = None) -> int:
    """Number of references of a constraint item

    Horizontal and Vertical take a single Line or two Points, so their
    arity is known once the first reference is. Without that information
    the maximum arity of the kind is reported.
    """
    arities = ARITIES[ConstraintKind(kind)]
    if len(arities) == 1:
        return next(iter(arities))
    if first is None:
        return max(arities)
    return 1 if PrimitiveKind(first) is _L else 2


@dataclass(frozen=True)
class Primitive:
    """Parametric geometric primitive

    Parameter layout: Point (x, y); Line (x1, y1, x2, y2); Circle
    (cx, cy, r); Arc (cx, cy, r, theta_start, theta_end), swept
    counterclockwise from start to end.
    """
    id: int
    kind: PrimitiveKind
    params: Tuple[float, ...]
    fixed: bool = False

    def __post_init__(self):
        try:
            kind = PrimitiveKind(self.kind)
        except ValueError as e:
            raise InvalidPrimitive(f'unknown primitive kind {self.kind!r}') \
                from e
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'params', params)
        object.__setattr__(self, 'id', int(self.id))
        object.__setattr__(self, 'fixed', bool(self.fixed))
        if len(params) != kind.n_params:
            raise InvalidPrimitive(
                f'{kind.value} needs {kind.n_params} parameters, '
                f'got {len(params)}')
        if not all(math.isfinite(p) for p in params):
            raise InvalidPrimitive(
                f'non-finite parameter in primitive {self.id}')
        if kind in _ROUND and params[2] <= 0:
            raise InvalidPrimitive(
                f'radius of primitive {self.id} must be positive')
        if kind is _A and _same_angle(params[3], params[4]):
            raise InvalidPrimitive(
                f'arc {self.id} has identical start and end angle')

    @property
    def center(self) -> Tuple[float, float]:
        return self.params[0], self.params[1]

    @property
    def radius(self) -> float:
        return self.params[2]

    def endpoints(self) -> List[Tuple[float, float]]:
        """Start and end point of a Line or an Arc"""
        p = self.params
        if self.kind is _L:
            return [(p[0], p[1]), (p[2], p[3])]
        if self.kind is _A:
            return [
                (p[0] + p[2] * math.cos(t), p[1] + p[2] * math.sin(t))
                for t in (p[3], p[4])]
        return []

    def tracked_points(self) -> List[Tuple[float, float]]:
        """Points whose grid cells define the stability of a primitive"""
        if self.kind is _P:
            return [self.params]
        if self.kind is _L:
            return self.endpoints()
        if self.kind is _C:
            return [self.center]
        return [self.center] + self.endpoints()

    def length(self) -> float:
        x1, y1, x2, y2 = self.params
        return math.hypot(x2 - x1, y2 - y1)

    def sweep(self) -> float:
        """Counterclockwise sweep angle of an Arc in (0, 2pi)"""
        return (self.params[4] - self.params[3]) % (2 * math.pi)

    def to_json(self) -> dict:
        return dict(
            id=self.id,
            kind=self.kind.value,
            params=list(self.params),
            fixed=self.fixed,
        )

    @classmethod
    def from_json(cls, obj: dict) -> 'Primitive':
        return cls(
            id=obj['id'],
            kind=obj['kind'],
            params=tuple(obj['params']),
            fixed=obj.get('fixed', False),
        )


def _same_angle(a: float, b: float) -> bool:
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d) < 1e-12


@dataclass(frozen=True)
class Canvas:
    """Axis-aligned frame for quantization and stability bins"""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidPrimitive(f'empty canvas {self}')

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def bin_of(self, x: float, y: float, bins: int) -> Tuple[int, int]:
        return (
            _bin(x, self.xmin, self.width, bins),
            _bin(y, self.ymin, self.height, bins),
        )

    @classmethod
    def from_primitives(cls, primitives: Iterable[Primitive],
                        margin: float = CANVAS_MARGIN) -> 'Canvas':
        xs = []
        ys = []
        for p in primitives:
            for x, y in p.tracked_points():
                xs.append(x)
                ys.append(y)
            if p.kind in _ROUND:
                cx, cy = p.center
                xs.extend((cx - p.radius, cx + p.radius))
                ys.extend((cy - p.radius, cy + p.radius))
        if not xs:
            return cls(0.0, 0.0, 1.0, 1.0)
        lo = [min(xs), min(ys)]
        hi = [max(xs), max(ys)]
        for i in range(2):
            extent = hi[i] - lo[i]
            if extent <= 0:
                # a single location still needs a frame of nonzero size
                lo[i] -= 0.5
                hi[i] += 0.5
                extent = 1.0
            lo[i] -= margin * extent
            hi[i] += margin * extent
        return cls(lo[0], lo[1], hi[0], hi[1])

    def to_json(self) -> list:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


def _bin(c: float, lo: float, extent: float, bins: int) -> int:
    b = math.floor(bins * (c - lo) / extent)
    return min(max(b, 0), bins - 1)


@dataclass(frozen=True)
class Sketch:
    """Immutable set of primitives on a canvas

    Primitive ids are dense ``0..n-1`` and equal to the position in
    ``primitives``. Without an explicit canvas, the bounding box of the
    geometry expanded by 10% per side is used.
    """
    primitives: Tuple[Primitive, ...]
    canvas: Optional[Canvas] = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        object.__setattr__(self, 'primitives', prims)
        if len(prims) > MAX_PRIMITIVES:
            raise TooManyPrimitives(
                f'{len(prims)} primitives exceed the limit of '
                f'{MAX_PRIMITIVES}')
        for i, p in enumerate(prims):
            if p.id != i:
                raise InvalidPrimitive(
                    f'primitive ids must be dense, found id {p.id} at '
                    f'position {i}')
        if self.canvas is None:
            object.__setattr__(
                self, 'canvas', Canvas.from_primitives(prims))

    def __len__(self) -> int:
        return len(self.primitives)

    def __getitem__(self, i: int) -> Primitive:
        return self.primitives[i]

    def __iter__(self) -> Iterator[Primitive]:
        return iter(self.primitives)

    @property
    def kinds(self) -> Tuple[PrimitiveKind, ...]:
        return tuple(p.kind for p in self.primitives)

    @property
    def has_anchor(self) -> bool:
        return any(p.fixed for p in self.primitives)

    def with_primitives(self, primitives: Sequence[Primitive]) -> 'Sketch':
        """New sketch with replaced geometry, keeping the canvas"""
        return Sketch(tuple(primitives), canvas=self.canvas)

    def to_json(self) -> dict:
        return dict(
            primitives=[p.to_json() for p in self.primitives],
            canvas=self.canvas.to_json(),
        )

    @classmethod
    def from_json(cls, obj: dict) -> 'Sketch':
        canvas = obj.get('canvas')
        return cls(
            tuple(Primitive.from_json(p) for p in obj['primitives']),
            canvas=Canvas(*canvas) if canvas else None,
        )


@dataclass(frozen=True)
class ConstraintInstance:
    kind: ConstraintKind
    refs: Tuple[int, ...]
    value: Optional[float] = None

    def __post_init__(self):
        try:
            kind = ConstraintKind(self.kind)
        except ValueError as e:
            raise StructurallyInvalid(
                f'unknown constraint kind {self.kind!r}') from e
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'refs', tuple(int(r) for r in self.refs))
        if self.value is not None:
            object.__setattr__(self, 'value', float(self.value))

    def canonical(self) -> tuple:
        """Identity of the item with values excluded

        References of symmetric kinds are sorted.
        """
        refs = tuple(sorted(self.refs)) \
            if self.kind in SYMMETRIC_KINDS else self.refs
        return self.kind.value, refs

    def to_json(self) -> dict:
        obj = dict(kind=self.kind.value, refs=list(self.refs))
        if self.value is not None:
            obj['value'] = self.value
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> 'ConstraintInstance':
        return cls(
            kind=obj['kind'],
            refs=tuple(obj['refs']),
            value=obj.get('value'),
        )


@dataclass(frozen=True)
class ConstraintSequence:
    items: Tuple[ConstraintInstance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        items = tuple(self.items)
        if len(items) > MAX_CONSTRAINTS:
            raise SequenceTooLong(
                f'{len(items)} constraints exceed the limit of '
                f'{MAX_CONSTRAINTS}')
        object.__setattr__(self, 'items', items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[ConstraintInstance]:
        return iter(self.items)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ConstraintSequence(self.items[i])
        return self.items[i]

    def __add__(self, other) -> 'ConstraintSequence':
        return ConstraintSequence(self.items + tuple(other))

    @property
    def n_dimensions(self) -> int:
        return sum(c.kind.is_dimension for c in self.items)

    def to_json(self) -> list:
        return [c.to_json() for c in self.items]

    @classmethod
    def from_json(cls, objs: Iterable[dict]) -> 'ConstraintSequence':
        return cls(tuple(ConstraintInstance.from_json(o) for o in objs))


def dof_of_primitive(kind: PrimitiveKind, fixed: bool = False) -> int:
    """Parameter count a primitive contributes to the variable vector"""
    return 0 if fixed else PrimitiveKind(kind).n_params


def residual_arity(kind: ConstraintKind,
                   operand_kinds: Sequence[PrimitiveKind]) -> int:
    """Number of scalar residual equations of a constraint"""
    kind = ConstraintKind(kind)
    ops = tuple(PrimitiveKind(k) for k in operand_kinds)
    try:
        return LEGAL_OPERANDS[kind][ops]
    except KeyError:
        raise IllegalOperandKinds(
            f'{kind.value} is not defined for '
            f'({", ".join(o.value for o in ops)})') from None


def pack_parameters(sketch: Sketch) -> Tuple[np.ndarray, Dict[int, slice]]:
    """Concatenate the parameters of all non-fixed primitives"""
    chunks = []
    index_map = {}
    offset = 0
    for p in sketch.primitives:
        if p.fixed:
            continue
        n = dof_of_primitive(p.kind)
        index_map[p.id] = slice(offset, offset + n)
        chunks.extend(p.params)
        offset += n
    return np.array(chunks, dtype=np.float64), index_map


def unpack_parameters(sketch: Sketch, x: np.ndarray,
                      index_map: Dict[int, slice]) -> Sketch:
    """Inverse of `pack_parameters` with the values of ``x``"""
    prims = []
    for p in sketch.primitives:
        sl = index_map.get(p.id)
        if sl is None:
            prims.append(p)
            continue
        prims.append(Primitive(
            id=p.id,
            kind=p.kind,
            params=tuple(float(v) for v in x[sl]),
            fixed=p.fixed,
        ))
    return sketch.with_primitives(prims)


def _direction(line: Primitive) -> Tuple[float, float]:
    x1, y1, x2, y2 = line.params
    return x2 - x1, y2 - y1


def measure_dimension(sketch: Sketch, dim: ConstraintInstance) -> float:
    """Current value of the quantity a dimension locks"""
    kind = dim.kind
    if not kind.is_dimension:
        raise IllegalOperandKinds(f'{kind.value} is not a dimension')
    prims = [sketch[r] for r in dim.refs]
    residual_arity(kind, [p.kind for p in prims])
    if kind is ConstraintKind.DISTANCE_DIM:
        (x1, y1), (x2, y2) = prims[0].params, prims[1].params
        return math.hypot(x2 - x1, y2 - y1)
    if kind is ConstraintKind.LENGTH_DIM:
        return prims[0].length()
    if kind is ConstraintKind.RADIUS_DIM:
        return prims[0].radius
    if kind is ConstraintKind.DIAMETER_DIM:
        return 2 * prims[0].radius
    # angle between line directions in [0, pi]
    (a, b), (c, d) = _direction(prims[0]), _direction(prims[1])
    return math.atan2(abs(a * d - b * c), a * c + b * d)


def validate_constraint(sketch: Sketch, c: ConstraintInstance) -> None:
    """Raise if ``c`` is not a well-formed constraint on ``sketch``"""
    if len(c.refs) not in ARITIES[c.kind]:
        raise BadArity(
            f'{c.kind.value} takes '
            f'{"/".join(map(str, sorted(c.kind.arities)))} references, '
            f'got {len(c.refs)}')
    for r in c.refs:
        if not 0 <= r < len(sketch):
            raise RefOutOfRange(
                f'reference {r} outside of {len(sketch)} primitives')
    prims = [sketch[r] for r in c.refs]
    residual_arity(c.kind, [p.kind for p in prims])
    if c.kind.is_dimension:
        if c.value is None:
            raise MissingValue(f'{c.kind.value} needs a value')
        if not math.isfinite(c.value):
            raise MissingValue(f'{c.kind.value} value is not finite')
    elif c.value is not None:
        raise StructurallyInvalid(f'{c.kind.value} cannot carry a value')
    tol = 1e-12 * sketch.canvas.diagonal
    for p in prims:
        if p.kind is _L and p.length() <= tol:
            raise DegeneratePrimitive(f'line {p.id} has zero length')


def validate_sequence(sketch: Sketch, seq: ConstraintSequence) -> None:
    """`validate_constraint` on every item, errors carry the item index"""
    for i, c in enumerate(seq):
        try:
            validate_constraint(sketch, c)
        except Exception as e:
            if hasattr(e, 'index'):
                e.index = i
            raise


def load_sketch(obj: dict) -> Tuple[Sketch, ConstraintSequence]:
    """Sketch and constraints from a sketch JSON object"""
    return (
        Sketch.from_json(obj),
        ConstraintSequence.from_json(obj.get('constraints', [])),
    )


def dump_sketch(sketch: Sketch,
                constraints: Optional[ConstraintSequence] = None,
                **extra) -> dict:
    obj = sketch.to_json()
    obj['constraints'] = constraints.to_json() \
        if constraints is not None else []
    obj.update(extra)
    return obj
