"""Synthetic sketch corpora

Parametric templates with fully-constrained constraint recipes, random
degradation towards a target fraction of fully-constrained records,
solver preprocessing, deduplication by WL hash, and train/val/test
splits.
"""

__docformat__ = 'restructuredtext'

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

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

from .constraints import (
    EnsureExistingFile,
    EnsureSplitRatios,
    EnsureUnitInterval,
)
from .metrics import wl_hash
from .sketch import (
    MAX_CONSTRAINTS,
    ConstraintInstance,
    ConstraintKind,
    ConstraintSequence,
    Primitive,
    PrimitiveKind,
    Sketch,
    dump_sketch,
    load_sketch,
    measure_dimension,
)
from .solver import (
    SketchCategory,
    SolveOptions,
    solve,
)
from .utils import (
    dump_json,
    obtain,
    read_jsonl,
    write_jsonl,
)

lgr = logging.getLogger('datalad.ext.sketchalign.datagen')

_K = ConstraintKind
SPLITS = ('train', 'val', 'test')


class _Builder:
    """Collects primitives and constraint items of a template instance"""
    def __init__(self):
        self.prims: List[Tuple[PrimitiveKind, tuple, bool]] = []
        self.items: List[Tuple[ConstraintKind, tuple]] = []

    def _add(self, kind, params, fixed=False) -> int:
        self.prims.append((kind, tuple(float(p) for p in params), fixed))
        return len(self.prims) - 1

    def point(self, xy, fixed=False) -> int:
        return self._add(PrimitiveKind.POINT, xy, fixed)

    def line(self, a, b) -> int:
        return self._add(PrimitiveKind.LINE, (*a, *b))

    def circle(self, center, r) -> int:
        return self._add(PrimitiveKind.CIRCLE, (*center, r))

    def arc(self, center, r, start, end) -> int:
        return self._add(PrimitiveKind.ARC, (*center, r, start, end))

    def add(self, kind: ConstraintKind, *refs: int) -> None:
        self.items.append((kind, refs))

    def segment(self, a: int, b: int) -> int:
        """Line between two existing points, tied to both"""
        pa, pb = self.prims[a][1], self.prims[b][1]
        line = self.line(pa, pb)
        self.add(_K.COINCIDENT, a, line)
        self.add(_K.COINCIDENT, b, line)
        return line

    def build(self) -> Tuple[Sketch, ConstraintSequence]:
        sketch = Sketch(tuple(
            Primitive(i, kind, params, fixed)
            for i, (kind, params, fixed) in enumerate(self.prims)))
        items = []
        for kind, refs in self.items:
            value = measure_dimension(sketch, ConstraintInstance(kind, refs)) \
                if kind.is_dimension else None
            items.append(ConstraintInstance(kind, refs, value))
        return sketch, ConstraintSequence(tuple(items))


def _size(rng, lo=1.0, hi=10.0) -> float:
    return round(float(rng.uniform(lo, hi)), 2)


def _origin(rng) -> Tuple[float, float]:
    return _size(rng, -10, 10), _size(rng, -10, 10)


def _offset(p, length, angle) -> Tuple[float, float]:
    return p[0] + length * math.cos(angle), p[1] + length * math.sin(angle)


def _rectangle(b: _Builder, rng) -> None:
    x, y = _origin(rng)
    w, h = _size(rng), _size(rng)
    pts = [b.point((x, y), fixed=True), b.point((x + w, y)),
           b.point((x + w, y + h)), b.point((x, y + h))]
    lines = [b.segment(pts[i], pts[(i + 1) % 4]) for i in range(4)]
    b.add(_K.HORIZONTAL, lines[0])
    b.add(_K.VERTICAL, lines[1])
    b.add(_K.HORIZONTAL, lines[2])
    b.add(_K.VERTICAL, lines[3])
    b.add(_K.DISTANCE_DIM, pts[0], pts[1])
    b.add(_K.DISTANCE_DIM, pts[1], pts[2])


def _l_shape(b: _Builder, rng) -> None:
    x, y = _origin(rng)
    w, h = _size(rng, 2, 10), _size(rng, 2, 10)
    # both legs stay at least 0.5 wide
    nw = _size(rng, 1, w - 0.5)
    nh = _size(rng, 0.5, h - 1)
    corners = [(x, y), (x + w, y), (x + w, y + nh), (x + nw, y + nh),
               (x + nw, y + h), (x, y + h)]
    pts = [b.point(c, fixed=i == 0) for i, c in enumerate(corners)]
    lines = [b.segment(pts[i], pts[(i + 1) % 6]) for i in range(6)]
    for i, line in enumerate(lines):
        b.add(_K.HORIZONTAL if i % 2 == 0 else _K.VERTICAL, line)
    for i in (0, 1, 2, 5):
        b.add(_K.LENGTH_DIM, lines[i])


def _slot(b: _Builder, rng) -> None:
    x, y = _origin(rng)
    length, r = _size(rng, 2, 10), _size(rng, 0.5, 3)
    p0 = b.point((x, y), fixed=True)
    p1 = b.point((x + length, y))
    p2 = b.point((x + length, y + 2 * r))
    p3 = b.point((x, y + 2 * r))
    bottom = b.segment(p0, p1)
    top = b.segment(p2, p3)
    right = b.arc((x + length, y + r), r, -math.pi / 2, math.pi / 2)
    left = b.arc((x, y + r), r, math.pi / 2, 3 * math.pi / 2)
    for p, a in ((p1, right), (p2, right), (p3, left), (p0, left)):
        b.add(_K.COINCIDENT, p, a)
    b.add(_K.HORIZONTAL, bottom)
    for line in (bottom, top):
        for a in (right, left):
            b.add(_K.TANGENT, line, a)
    b.add(_K.EQUAL, right, left)
    b.add(_K.DISTANCE_DIM, p0, p1)
    b.add(_K.RADIUS_DIM, right)


def _triangle(b: _Builder, rng) -> None:
    x, y = _origin(rng)
    base, side = _size(rng, 2, 10), _size(rng, 2, 10)
    right_angle = rng.random() < 0.3
    angle = math.pi / 2 if right_angle \
        else float(rng.uniform(math.pi / 6, 5 * math.pi / 6))
    p0 = b.point((x, y), fixed=True)
    p1 = b.point((x + base, y))
    p2 = b.point(_offset((x, y), side, angle))
    l0 = b.segment(p0, p1)
    b.segment(p1, p2)
    l2 = b.segment(p2, p0)
    b.add(_K.HORIZONTAL, l0)
    b.add(_K.LENGTH_DIM, l0)
    b.add(_K.LENGTH_DIM, l2)
    if right_angle:
        b.add(_K.PERPENDICULAR, l0, l2)
    else:
        b.add(_K.ANGLE_DIM, l0, l2)


def _concentric_circles(b: _Builder, rng) -> None:
    center = _origin(rng)
    p0 = b.point(center, fixed=True)
    r = _size(rng, 0.5, 2)
    inner = b.circle(center, r)
    b.add(_K.COINCIDENT, p0, inner)
    b.add(_K.DIAMETER_DIM, inner)
    for _ in range(int(rng.integers(1, 4))):
        r = round(r + _size(rng, 0.5, 3), 2)
        ring = b.circle(center, r)
        b.add(_K.CONCENTRIC, inner, ring)
        b.add(_K.RADIUS_DIM, ring)


def _polyline(b: _Builder, rng) -> None:
    start = _origin(rng)
    n = int(rng.integers(2, 6))
    pts = [b.point(start, fixed=True)]
    lines = []
    directions = []
    lengths = []
    for i in range(n):
        relation = None
        if i == 0:
            direction = 0.0
        else:
            choices = ['angle', 'perpendicular'] \
                + (['parallel'] if i >= 2 else [])
            relation = choices[int(rng.integers(len(choices)))]
            turn = 1 if rng.random() < 0.5 else -1
            if relation == 'perpendicular':
                direction = directions[-1] + turn * math.pi / 2
            elif relation == 'parallel':
                direction = directions[-2]
            else:
                direction = directions[-1] + turn * float(
                    rng.uniform(math.pi / 6, 5 * math.pi / 6))
        equal = i > 0 and rng.random() < 0.3
        length = lengths[-1] if equal else _size(rng, 1, 5)
        end = _offset(b.prims[pts[-1]][1], length, direction)
        pts.append(b.point(end))
        lines.append(b.segment(pts[-2], pts[-1]))
        directions.append(direction)
        lengths.append(length)
        if i == 0:
            b.add(_K.HORIZONTAL, lines[0])
        elif relation == 'perpendicular':
            b.add(_K.PERPENDICULAR, lines[-2], lines[-1])
        elif relation == 'parallel':
            b.add(_K.PARALLEL, lines[-3], lines[-1])
        else:
            b.add(_K.ANGLE_DIM, lines[-2], lines[-1])
        if equal:
            b.add(_K.EQUAL, lines[-2], lines[-1])
        else:
            b.add(_K.LENGTH_DIM, lines[-1])
    if rng.random() < 0.5:
        a, c = b.prims[pts[0]][1], b.prims[pts[1]][1]
        mid = b.point(((a[0] + c[0]) / 2, (a[1] + c[1]) / 2))
        b.add(_K.MIDPOINT, mid, lines[0])


def _line_arc_chain(b: _Builder, rng) -> None:
    x, y = _origin(rng)
    a, r, c = _size(rng, 1, 6), _size(rng, 0.5, 3), _size(rng, 1, 6)
    sweep = float(rng.uniform(math.pi / 4, 3 * math.pi / 4))
    p0 = b.point((x, y), fixed=True)
    p1 = b.point((x + a, y))
    center = (x + a, y + r)
    start = -math.pi / 2
    p2xy = _offset(center, r, start + sweep)
    p2 = b.point(p2xy)
    p3 = b.point(_offset(p2xy, c, sweep))
    l0 = b.segment(p0, p1)
    arc = b.arc(center, r, start, start + sweep)
    b.add(_K.COINCIDENT, p1, arc)
    b.add(_K.COINCIDENT, p2, arc)
    l1 = b.segment(p2, p3)
    b.add(_K.HORIZONTAL, l0)
    b.add(_K.LENGTH_DIM, l0)
    b.add(_K.TANGENT, l0, arc)
    b.add(_K.RADIUS_DIM, arc)
    b.add(_K.TANGENT, l1, arc)
    b.add(_K.LENGTH_DIM, l1)
    b.add(_K.ANGLE_DIM, l0, l1)
    if rng.random() < 0.5:
        # circle below the first line, centered under its end
        rc = _size(rng, 0.5, 2)
        pc = b.point((x + a, y - rc))
        circle = b.circle((x + a, y - rc), rc)
        b.add(_K.COINCIDENT, pc, circle)
        b.add(_K.VERTICAL, p1, pc)
        b.add(_K.TANGENT, l0, circle)
        b.add(_K.RADIUS_DIM, circle)


@dataclass(frozen=True)
class Template:
    name: str
    recipe: Callable[[_Builder, np.random.Generator], None]
    max_primitives: int


TEMPLATES: Dict[str, Template] = {
    t.name: t for t in (
        Template('rectangle', _rectangle, 8),
        Template('l_shape', _l_shape, 12),
        Template('slot', _slot, 8),
        Template('triangle', _triangle, 6),
        Template('concentric_circles', _concentric_circles, 5),
        Template('polyline', _polyline, 12),
        Template('line_arc_chain', _line_arc_chain, 9),
    )
}


def _permute(sketch: Sketch, seq: ConstraintSequence,
             rng) -> Tuple[Sketch, ConstraintSequence]:
    """Same sketch with the primitives in random order"""
    order = rng.permutation(len(sketch))
    new_id = {int(old): new for new, old in enumerate(order)}
    prims = tuple(
        Primitive(new, sketch[int(old)].kind, sketch[int(old)].params,
                  sketch[int(old)].fixed)
        for new, old in enumerate(order))
    items = tuple(
        ConstraintInstance(c.kind, tuple(new_id[r] for r in c.refs),
                           c.value)
        for c in seq)
    return Sketch(prims, canvas=sketch.canvas), ConstraintSequence(items)


def generate_sketch(
        template: str or Template,
        rng: np.random.Generator,
        shuffle: bool = True,
) -> Tuple[Sketch, ConstraintSequence]:
    """Random instance of a template with its fully-constraining recipe"""
    if not isinstance(template, Template):
        try:
            template = TEMPLATES[template]
        except KeyError:
            raise ValueError(f'unknown template {template!r}') from None
    b = _Builder()
    template.recipe(b, rng)
    sketch, seq = b.build()
    if shuffle:
        sketch, seq = _permute(sketch, seq, rng)
    return sketch, seq


def make_record(template: str, index: int, sketch: Sketch,
                seq: ConstraintSequence) -> Dict:
    return dump_sketch(
        sketch, seq,
        id=f'{template}-{index:06d}',
        template=template,
        ground_truth=seq.to_json(),
    )


def degrade_constraints(record: Dict, drop_prob: float,
                        rng: np.random.Generator,
                        duplicate_prob: float = 0.0) -> Dict:
    """Drop each ground-truth item with ``drop_prob``

    Kept items are duplicated with ``duplicate_prob``, which makes the
    record redundant. Whole items are dropped, never single references.
    """
    if not 0 <= drop_prob <= 1 or not 0 <= duplicate_prob <= 1:
        raise ValueError('probabilities must be within [0, 1]')
    items = record.get('ground_truth', record['constraints'])
    kept = []
    for item in items:
        if rng.random() < drop_prob:
            continue
        kept.append(item)
        if duplicate_prob and len(kept) < MAX_CONSTRAINTS \
                and rng.random() < duplicate_prob:
            kept.append(dict(item))
    return dict(record, constraints=kept)


def _status_json(report) -> Dict:
    st = report.status
    return dict(
        category=st.category.value,
        oc_flag=st.oc_flag,
        stable=st.stable,
        fc_curve_fraction=st.fc_curve_fraction,
        fc_point_fraction=st.fc_point_fraction,
    )


def preprocess(record: Dict, opts: Optional[SolveOptions] = None,
               min_fc_fraction: float = 0.0) -> Dict:
    """Replace the geometry by the solved geometry and flag the record

    ``pretrain`` marks solvable records with enough fully-constrained
    curves, ``sft`` those that are fully-constrained, stable, solvable
    and not redundant. Unsolvable records keep their geometry and stay
    available for alignment.
    """
    sketch, seq = load_sketch(record)
    report = solve(sketch, seq, opts)
    out = dict(record, status=_status_json(report),
               solvable=report.solvable)
    if report.solvable:
        out.update(report.solved_sketch.to_json())
    st = report.status
    out['pretrain'] = report.solvable \
        and st.fc_curve_fraction >= min_fc_fraction
    out['sft'] = report.solvable and st.stable and not st.oc_flag \
        and st.category is SketchCategory.FULLY_CONSTRAINED
    return out


def _fc_fraction(records, drop_prob, seed, duplicate_prob, opts) -> float:
    rng = np.random.default_rng(seed)
    fc = 0
    for rec in records:
        sketch, seq = load_sketch(
            degrade_constraints(rec, drop_prob, rng, duplicate_prob))
        report = solve(sketch, seq, opts)
        fc += report.status.category is SketchCategory.FULLY_CONSTRAINED
    return fc / len(records)


def calibrate_drop_prob(records: Sequence[Dict],
                        target_fc: float = 0.08,
                        seed: int = 0,
                        duplicate_prob: float = 0.0,
                        opts: Optional[SolveOptions] = None,
                        iterations: int = 12,
                        tolerance: float = 0.005) -> float:
    """Drop probability whose degraded corpus hits ``target_fc``

    Bisection on the solver-measured fraction of fully-constrained
    records, which decreases with the drop probability.
    """
    if not records:
        raise ValueError('cannot calibrate on an empty corpus')
    lo, hi = 0.0, 1.0
    best, best_err = 0.5, math.inf
    for _ in range(iterations):
        mid = (lo + hi) / 2
        frac = _fc_fraction(records, mid, seed, duplicate_prob, opts)
        lgr.debug('drop probability %.4f: FC fraction %.4f', mid, frac)
        err = abs(frac - target_fc)
        if err < best_err:
            best, best_err = mid, err
        if err <= tolerance:
            break
        if frac > target_fc:
            lo = mid
        else:
            hi = mid
    lgr.info('calibrated drop probability %.4f (FC fraction off by %.4f)',
             best, best_err)
    return best


def dedup(records: Iterable[Dict]) -> List[Dict]:
    """First record per WL hash, in input order"""
    seen = set()
    out = []
    for rec in records:
        h = rec.get('wl_hash')
        if h is None:
            h = wl_hash(*load_sketch(rec))
            rec = dict(rec, wl_hash=h)
        if h in seen:
            continue
        seen.add(h)
        out.append(rec)
    return out


def split(records: Sequence[Dict],
          ratios: Tuple[float, float, float] = (0.9, 0.05, 0.05),
          seed: int = 0) -> List[Dict]:
    """Tag records train/val/test after a seeded shuffle"""
    if len(ratios) != 3 or abs(sum(ratios) - 1) > 1e-9 \
            or any(r < 0 for r in ratios):
        raise ValueError(f'invalid split ratios {ratios}')
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    bounds = (round(n * ratios[0]), round(n * (ratios[0] + ratios[1])))
    tagged = []
    for rank, i in enumerate(order):
        tag = SPLITS[0] if rank < bounds[0] \
            else SPLITS[1] if rank < bounds[1] else SPLITS[2]
        tagged.append(dict(records[int(i)], split=tag))
    return tagged


def generate_corpus(
        count: int,
        templates: Optional[Sequence[str]] = None,
        drop_prob: Optional[float] = None,
        duplicate_prob: float = 0.0,
        ratios: Tuple[float, float, float] = (0.9, 0.05, 0.05),
        seed: int = 0,
        max_primitives: int = 16,
        target_fc: float = 0.08,
        min_fc_fraction: float = 0.0,
        opts: Optional[SolveOptions] = None,
        workers: int = 1,
) -> Tuple[List[Dict], float]:
    """Deduplicated, degraded, preprocessed and split corpus

    Without ``drop_prob`` the drop probability is calibrated to
    ``target_fc``. Returns the records and the drop probability used.
    """
    templates = list(templates or TEMPLATES)
    for t in templates:
        if t not in TEMPLATES:
            raise ValueError(f'unknown template {t!r}')
    rng = np.random.default_rng(seed)
    records = []
    seen = set()
    attempts = 0
    while len(records) < count and attempts < 20 * count:
        attempts += 1
        name = templates[int(rng.integers(len(templates)))]
        sketch, seq = generate_sketch(name, rng)
        if len(sketch) > max_primitives:
            continue
        h = wl_hash(sketch, seq)
        if h in seen:
            continue
        seen.add(h)
        rec = make_record(name, len(records), sketch, seq)
        rec['wl_hash'] = h
        records.append(rec)
    if len(records) < count:
        lgr.warning('only %i distinct sketches after %i attempts',
                    len(records), attempts)
    if drop_prob is None:
        drop_prob = calibrate_drop_prob(
            records[:200], target_fc, seed, duplicate_prob, opts)
    degraded = [
        degrade_constraints(rec, drop_prob, rng, duplicate_prob)
        for rec in records]

    def job(rec):
        return preprocess(rec, opts, min_fc_fraction)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            processed = list(pool.map(job, degraded))
    else:
        processed = [job(rec) for rec in degraded]
    return split(processed, ratios, seed), drop_prob


def load_records(path: Path or str,
                 split: Optional[str] = None) -> List[Dict]:
    return [r for r in read_jsonl(path)
            if split is None or r.get('split') == split]


def _summary(values: Sequence[float]) -> Dict:
    if not len(values):
        return dict(mean=None, std=None, min=None, median=None, max=None)
    v = np.asarray(values, dtype=np.float64)
    return dict(mean=float(v.mean()), std=float(v.std()),
                min=float(v.min()), median=float(np.median(v)),
                max=float(v.max()))


def corpus_stats(records: Sequence[Dict]) -> Dict:
    """Entity, constraint and state statistics of a corpus"""
    n = len(records)
    kind_count = {k.value: 0 for k in ConstraintKind}
    kind_sketches = {k.value: 0 for k in ConstraintKind}
    prim_count = {k.value: 0 for k in PrimitiveKind}
    n_constraints = []
    n_dims = []
    categories = {c.value: 0 for c in SketchCategory}
    stable = 0
    curve_fc = []
    point_fc = []
    for rec in records:
        for p in rec['primitives']:
            prim_count[p['kind']] += 1
        kinds = [c['kind'] for c in rec['constraints']]
        for k in kinds:
            kind_count[k] += 1
        for k in set(kinds):
            kind_sketches[k] += 1
        n_constraints.append(len(kinds))
        n_dims.append(sum(ConstraintKind(k).is_dimension for k in kinds))
        st = rec.get('status')
        if st:
            categories[st['category']] += 1
            stable += bool(st['stable'])
            curve_fc.append(st['fc_curve_fraction'])
            point_fc.append(st['fc_point_fraction'])
    total = sum(kind_count.values())
    n_status = len(curve_fc)

    def pct(v):
        return 100.0 * v / n_status if n_status else None

    return dict(
        records=n,
        splits={s: sum(r.get('split') == s for r in records)
                for s in SPLITS},
        entities=_summary([len(r['primitives']) for r in records]),
        constraints=_summary(n_constraints),
        dimensions=_summary(n_dims),
        primitive_frequency={
            k: v / max(sum(prim_count.values()), 1)
            for k, v in prim_count.items()},
        constraint_frequency={
            k: v / total if total else 0.0 for k, v in kind_count.items()},
        constraint_sketch_frequency={
            k: v / n if n else 0.0 for k, v in kind_sketches.items()},
        fc_pct=pct(categories['FC']),
        uc_pct=pct(categories['UC']),
        oc_pct=pct(categories['OC']),
        ns_pct=pct(categories['NS']),
        stable_pct=pct(stable),
        mean_fc_curve_fraction=float(np.mean(curve_fc)) if curve_fc
        else None,
        mean_fc_point_fraction=float(np.mean(point_fc)) if point_fc
        else None,
    )


@build_doc
class SketchalignDatagen(Interface):
    """Generate a synthetic sketch corpus

    Sketches are drawn from parametric templates whose constraint recipes
    fully constrain them. The recipes are degraded by randomly dropping
    constraint items, either with a given probability or with one
    calibrated so that the requested fraction of records is
    fully-constrained. Records are solved, deduplicated by WL hash, and
    tagged with a train, val, or test split.
    """
    _examples_ = [
        dict(text="Generate 2000 sketches with at most 8 primitives",
             code_py="sketchalign_datagen(count=2000, max_primitives=8, "
                     "out='corpus.jsonl')",
             code_cmd="datalad sketchalign-datagen --count 2000 "
                      "--max-primitives 8 --out corpus.jsonl"),
        dict(text="Generate rectangles and slots only, dropping every "
                  "constraint with probability 0.1",
             code_py="sketchalign_datagen(templates=['rectangle', 'slot'], "
                     "drop_prob=0.1, out='corpus.jsonl')",
             code_cmd="datalad sketchalign-datagen --templates rectangle "
                      "slot --drop-prob 0.1 --out corpus.jsonl"),
    ]
    _params_ = dict(
        templates=Parameter(
            args=("--templates",),
            nargs='+',
            doc="""templates to draw sketches from. All templates are used
            by default""",
            constraints=EnsureChoice(*TEMPLATES) | EnsureNone()),
        count=Parameter(
            args=("--count",),
            doc="""number of distinct sketches to generate""",
            constraints=EnsureInt()),
        drop_prob=Parameter(
            args=("--drop-prob",),
            doc="""probability to drop each constraint item. If not given,
            it is calibrated to the 'datalad.sketchalign.datagen.target-fc'
            fraction of fully-constrained records""",
            constraints=EnsureUnitInterval() | EnsureNone()),
        duplicate_prob=Parameter(
            args=("--duplicate-prob",),
            doc="""probability to duplicate a kept constraint item, which
            makes the record over-constrained""",
            constraints=EnsureUnitInterval()),
        splits=Parameter(
            args=("--splits",),
            doc="""train, val and test fractions""",
            constraints=EnsureSplitRatios()),
        max_primitives=Parameter(
            args=("--max-primitives",),
            doc="""largest number of primitives of a sketch. Defaults to
            'datalad.sketchalign.datagen.max-primitives'""",
            constraints=EnsureInt() | EnsureNone()),
        seed=Parameter(
            args=("--seed",),
            doc="""random seed. Defaults to
            'datalad.sketchalign.datagen.seed'""",
            constraints=EnsureInt() | EnsureNone()),
        out=Parameter(
            args=("--out",),
            doc="""path of the dataset JSONL file""",
            constraints=EnsureStr()),
        stats=Parameter(
            args=("--stats",),
            doc="""path to write the corpus statistics JSON to""",
            constraints=EnsureStr() | EnsureNone()),
    )

    @staticmethod
    @eval_results
    def __call__(out, count=1000, templates=None, drop_prob=None,
                 duplicate_prob=0.0, splits='0.9,0.05,0.05',
                 max_primitives=None, seed=None, stats=None):
        res_kwargs = dict(action='sketchalign-datagen', path=str(out))
        try:
            ratios = EnsureSplitRatios()(splits)
            records, used_drop_prob = generate_corpus(
                count=count,
                templates=templates,
                drop_prob=drop_prob,
                duplicate_prob=duplicate_prob,
                ratios=ratios,
                seed=obtain('datagen.seed') if seed is None else seed,
                max_primitives=obtain('datagen.max-primitives')
                if max_primitives is None else max_primitives,
                target_fc=obtain('datagen.target-fc'),
                min_fc_fraction=obtain('datagen.min-fc-fraction'),
                opts=SolveOptions.from_config(),
                workers=obtain('workers'),
            )
            write_jsonl(records, out)
            report = corpus_stats(records)
            report['drop_prob'] = used_drop_prob
            if stats:
                dump_json(report, stats)
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('cannot generate corpus: %s', ce),
                exception=ce,
                **res_kwargs)
            return
        yield get_status_dict(
            status='ok',
            message=('%i records (%s%% fully-constrained, drop '
                     'probability %.4f)',
                     len(records), report['fc_pct'], used_drop_prob),
            records=len(records),
            drop_prob=used_drop_prob,
            stats=report,
            **res_kwargs)


@build_doc
class SketchalignStats(Interface):
    """Report statistics of a sketch corpus

    Entity, constraint and dimension counts per record, the frequency of
    each constraint kind, and the fractions of fully-, under- and
    over-constrained, not solvable and stable records.
    """
    _params_ = dict(
        data=Parameter(
            args=("--data",),
            doc="""dataset JSONL file""",
            constraints=EnsureExistingFile()),
        split=Parameter(
            args=("--split",),
            doc="""only consider records of this split""",
            constraints=EnsureChoice(*SPLITS) | EnsureNone()),
        report=Parameter(
            args=("--report",),
            doc="""path to write the statistics JSON to""",
            constraints=EnsureStr() | EnsureNone()),
    )

    @staticmethod
    @eval_results
    def __call__(data, split=None, report=None):
        res_kwargs = dict(action='sketchalign-stats', path=str(data))
        try:
            stats = corpus_stats(load_records(data, split))
            if report:
                dump_json(stats, report)
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('cannot read corpus: %s', ce),
                exception=ce,
                **res_kwargs)
            return
        yield get_status_dict(
            status='ok',
            message=('%i records', stats['records']),
            stats=stats,
            **res_kwargs)
