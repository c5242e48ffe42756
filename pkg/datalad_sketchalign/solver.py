"""Geometric constraint solver

Damped least-squares solving of sketch constraints, Jacobian rank and
nullspace analysis, sketch-state classification, stability checks, and
incremental constraint application.
"""

__docformat__ = 'restructuredtext'

import logging
import math
from dataclasses import (
    dataclass,
    field,
    fields,
)
from enum import Enum
from typing import (
    Callable,
    Dict,
    List,
    Optional,
    Set,
    Tuple,
)

import numpy as np
from scipy import linalg

from datalad.interface.base import (
    Interface,
    build_doc,
)
from datalad.interface.results import get_status_dict
from datalad.interface.base import eval_results
from datalad.support.constraints import (
    EnsureNone,
    EnsureStr,
)
from datalad.support.exceptions import CapturedException
from datalad.support.param import Parameter

from .constraints import EnsureExistingFile
from .exceptions import (
    InvalidPrimitive,
    SketchalignError,
)
from .sketch import (
    ConstraintInstance,
    ConstraintKind,
    ConstraintSequence,
    PrimitiveKind,
    Sketch,
    load_sketch,
    pack_parameters,
    residual_arity,
    unpack_parameters,
    validate_constraint,
)
from .utils import (
    dump_json,
    load_json,
    obtain,
)

lgr = logging.getLogger('datalad.ext.sketchalign.solver')

_P = PrimitiveKind.POINT
_L = PrimitiveKind.LINE
_C = PrimitiveKind.CIRCLE
_A = PrimitiveKind.ARC
_K = ConstraintKind


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 200
    residual_tol: float = 1e-8
    rank_tol: float = 1e-7
    nullspace_tol: float = 1e-6
    damping_init: float = 1e-3
    stability_bins: int = 4

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f'{f.name} must be positive')

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None,
                    **kwargs) -> 'SolveOptions':
        """Options from the ``datalad.sketchalign.solver.*`` configuration"""
        values = {
            f.name: obtain(f"solver.{f.name.replace('_', '-')}", overrides)
            for f in fields(cls)
        }
        values.update(kwargs)
        return cls(**values)


class SketchCategory(str, Enum):
    FULLY_CONSTRAINED = 'FC'
    UNDER_CONSTRAINED = 'UC'
    OVER_CONSTRAINED = 'OC'
    NOT_SOLVABLE = 'NS'


@dataclass(frozen=True)
class RankAnalysis:
    n: int
    m: int
    rank: int
    nullspace_basis: np.ndarray
    redundant: bool

    @property
    def nullity(self) -> int:
        return self.n - self.rank


@dataclass(frozen=True)
class SketchStatus:
    category: SketchCategory
    oc_flag: bool
    stable: bool
    per_entity_fc: Dict[int, bool] = field(default_factory=dict)
    fc_curve_fraction: float = 0.0
    fc_point_fraction: float = 0.0


@dataclass(frozen=True)
class SolveReport:
    status: SketchStatus
    solved_sketch: Optional[Sketch]
    iterations: int
    final_residual_norm: float
    rank_analysis: Optional[RankAnalysis]

    @property
    def solvable(self) -> bool:
        return self.status.category is not SketchCategory.NOT_SOLVABLE

    def to_json(self) -> dict:
        st = self.status
        obj = dict(
            category=st.category.value,
            oc_flag=st.oc_flag,
            stable=st.stable,
            fc_curve_fraction=st.fc_curve_fraction,
            fc_point_fraction=st.fc_point_fraction,
            per_entity_fc={str(k): v for k, v in
                           sorted(st.per_entity_fc.items())},
            iterations=self.iterations,
            final_residual_norm=self.final_residual_norm,
        )
        if self.solved_sketch is not None:
            obj['solved_sketch'] = self.solved_sketch.to_json()
        return obj


# a residual term maps the parameter vectors of its operands to the
# residual values and one gradient block per operand
Term = Callable[[List[np.ndarray]], Tuple[np.ndarray, List[np.ndarray]]]


def _nearest(candidates: List[Tuple[float, float]],
             point: Tuple[float, float]) -> int:
    return int(np.argmin([
        math.hypot(c[0] - point[0], c[1] - point[1]) for c in candidates]))


def _sign(v: float) -> float:
    return 1.0 if v >= 0 else -1.0


def _unit(v: np.ndarray) -> Tuple[np.ndarray, float]:
    n = math.hypot(v[0], v[1])
    return (v / n if n > 0 else np.zeros(2)), n


def _coincident(prims) -> Term:
    q = prims[1]
    if q.kind is _P:
        def term(p):
            return p[0][:2] - p[1][:2], [np.eye(2), -np.eye(2)]
        return term
    # attach to the nearest characteristic point of the curve, decided
    # once on the initial geometry
    point = prims[0].params
    if q.kind is _C:
        target = 'center'
    elif q.kind is _L:
        target = ('start', 'end')[_nearest(q.endpoints(), point)]
    else:
        target = ('center', 'start', 'end')[
            _nearest([q.center] + q.endpoints(), point)]

    def term(p):
        pt, cp = p
        g = np.zeros((2, len(cp)))
        if q.kind is _L:
            o = 0 if target == 'start' else 2
            g[0, o] = g[1, o + 1] = -1.0
            return pt - cp[o:o + 2], [np.eye(2), g]
        g[0, 0] = g[1, 1] = -1.0
        if target == 'center':
            return pt - cp[:2], [np.eye(2), g]
        t = 3 if target == 'start' else 4
        c, s = math.cos(cp[t]), math.sin(cp[t])
        end = cp[:2] + cp[2] * np.array([c, s])
        g[0, 2], g[1, 2] = -c, -s
        g[0, t], g[1, t] = cp[2] * s, -cp[2] * c
        return pt - end, [np.eye(2), g]
    return term


def _horizontal_vertical(prims, axis: int) -> Term:
    if len(prims) == 1:
        g = np.zeros((1, 4))
        g[0, axis], g[0, 2 + axis] = -1.0, 1.0

        def term(p):
            return np.array([p[0][2 + axis] - p[0][axis]]), [g]
        return term
    gp = np.zeros((1, 2))
    gp[0, axis] = 1.0

    def term(p):
        return np.array([p[1][axis] - p[0][axis]]), [-gp, gp]
    return term


def _line_dirs(p):
    a, b = p[0][2] - p[0][0], p[0][3] - p[0][1]
    c, d = p[1][2] - p[1][0], p[1][3] - p[1][1]
    return a, b, c, d


def _cross_grads(a, b, c, d):
    return np.array([[-d, c, d, -c]]), np.array([[b, -a, -b, a]])


def _dot_grads(a, b, c, d):
    return np.array([[-c, -d, c, d]]), np.array([[-a, -b, a, b]])


def _parallel(prims) -> Term:
    def term(p):
        a, b, c, d = _line_dirs(p)
        return np.array([a * d - b * c]), list(_cross_grads(a, b, c, d))
    return term


def _perpendicular(prims) -> Term:
    def term(p):
        a, b, c, d = _line_dirs(p)
        return np.array([a * c + b * d]), list(_dot_grads(a, b, c, d))
    return term


def _line_curve_tangent(prims, canvas) -> Term:
    line, curve = prims
    if curve.kind is _A:
        ends = curve.endpoints()
        tol = 1e-6 * canvas.diagonal
        dists = [
            (math.hypot(e[0] - l[0], e[1] - l[1]), i)
            for i, e in enumerate(ends)
            for l in line.endpoints()]
        dist, which = min(dists)
        if dist <= tol:
            # shared endpoint: radius at that endpoint normal to the line
            t = 3 + which

            def term(p):
                lp, cp = p
                dx, dy = lp[2] - lp[0], lp[3] - lp[1]
                c, s = math.cos(cp[t]), math.sin(cp[t])
                gc = np.zeros((1, len(cp)))
                gc[0, t] = -s * dx + c * dy
                return (np.array([c * dx + s * dy]),
                        [np.array([[-c, -s, c, s]]), gc])
            return term

    def cross_of(lp, cp):
        dx, dy = lp[2] - lp[0], lp[3] - lp[1]
        return dx * (cp[1] - lp[1]) - dy * (cp[0] - lp[0])

    s = _sign(cross_of(np.array(line.params), np.array(curve.params)))

    def term(p):
        lp, cp = p
        x1, y1 = lp[0], lp[1]
        dx, dy = lp[2] - x1, lp[3] - y1
        cx, cy = cp[0], cp[1]
        cross = dx * (cy - y1) - dy * (cx - x1)
        ln = math.hypot(dx, dy)
        dcross = np.array([
            -(cy - y1) + dy, (cx - x1) - dx, cy - y1, -(cx - x1)])
        dln = np.array([-dx, -dy, dx, dy]) / ln
        gl = s * (dcross / ln - cross * dln / ln ** 2)
        gc = np.zeros((1, len(cp)))
        gc[0, 0], gc[0, 1], gc[0, 2] = -s * dy / ln, s * dx / ln, -1.0
        return np.array([s * cross / ln - cp[2]]), [gl[None, :], gc]
    return term


def _round_tangent(prims) -> Term:
    c1, c2 = prims
    dist0 = math.hypot(c1.params[0] - c2.params[0],
                       c1.params[1] - c2.params[1])
    r1, r2 = c1.radius, c2.radius
    external = abs(dist0 - (r1 + r2)) <= abs(dist0 - abs(r1 - r2))
    s = _sign(r1 - r2)
    # residual = |c1 - c2| - (k1 * r1 + k2 * r2)
    k1, k2 = (1.0, 1.0) if external else (s, -s)

    def term(p):
        u, d = _unit(p[0][:2] - p[1][:2])
        g1 = np.zeros((1, len(p[0])))
        g2 = np.zeros((1, len(p[1])))
        g1[0, :2], g1[0, 2] = u, -k1
        g2[0, :2], g2[0, 2] = -u, -k2
        return np.array([d - k1 * p[0][2] - k2 * p[1][2]]), [g1, g2]
    return term


def _midpoint(prims) -> Term:
    gl = np.array([[-.5, 0, -.5, 0], [0, -.5, 0, -.5]])

    def term(p):
        mid = (p[1][:2] + p[1][2:4]) / 2
        return p[0] - mid, [np.eye(2), gl]
    return term


def _length_grad(lp) -> Tuple[float, np.ndarray]:
    u, ln = _unit(lp[2:4] - lp[:2])
    return ln, np.array([[-u[0], -u[1], u[0], u[1]]])


def _equal(prims) -> Term:
    if prims[0].kind is _L:
        def term(p):
            l1, g1 = _length_grad(p[0])
            l2, g2 = _length_grad(p[1])
            return np.array([l1 - l2]), [g1, -g2]
        return term

    def term(p):
        g1 = np.zeros((1, len(p[0])))
        g2 = np.zeros((1, len(p[1])))
        g1[0, 2], g2[0, 2] = 1.0, -1.0
        return np.array([p[0][2] - p[1][2]]), [g1, g2]
    return term


def _concentric(prims) -> Term:
    def term(p):
        g1 = np.zeros((2, len(p[0])))
        g2 = np.zeros((2, len(p[1])))
        g1[:, :2] = np.eye(2)
        g2[:, :2] = -np.eye(2)
        return p[0][:2] - p[1][:2], [g1, g2]
    return term


def _dimension(prims, c: ConstraintInstance) -> Term:
    value = c.value
    kind = c.kind
    if kind is _K.DISTANCE_DIM:
        def term(p):
            u, d = _unit(p[1] - p[0])
            return np.array([d - value]), [-u[None, :], u[None, :]]
        return term
    if kind is _K.LENGTH_DIM:
        def term(p):
            ln, g = _length_grad(p[0])
            return np.array([ln - value]), [g]
        return term
    if kind in (_K.RADIUS_DIM, _K.DIAMETER_DIM):
        factor = 1.0 if kind is _K.RADIUS_DIM else 2.0

        def term(p):
            g = np.zeros((1, len(p[0])))
            g[0, 2] = factor
            return np.array([factor * p[0][2] - value]), [g]
        return term
    # angle dimension, orientation of the angle held from the initial
    # geometry so the residual stays smooth
    (a, b), (cc, d) = [
        (q.params[2] - q.params[0], q.params[3] - q.params[1])
        for q in prims]
    s = _sign(a * d - b * cc)

    def term(p):
        a, b, c, d = _line_dirs(p)
        cross = s * (a * d - b * c)
        dot = a * c + b * d
        den = cross ** 2 + dot ** 2
        gc1, gc2 = _cross_grads(a, b, c, d)
        gd1, gd2 = _dot_grads(a, b, c, d)
        g1 = (dot * s * gc1 - cross * gd1) / den
        g2 = (dot * s * gc2 - cross * gd2) / den
        return np.array([math.atan2(cross, dot) - value]), [g1, g2]
    return term


class ConstraintSystem:
    """Residuals and Jacobian of a constraint sequence on a sketch

    Branch choices (tangent side, angle orientation, attachment point of
    a coincidence) are made once from the geometry of ``sketch`` and held
    fixed for every evaluation.
    """
    def __init__(self, sketch: Sketch, constraints: ConstraintSequence):
        self.sketch = sketch
        self.x0, self.index_map = pack_parameters(sketch)
        self.n = len(self.x0)
        self._terms = []
        self.m = 0
        for c in constraints:
            prims = [sketch[r] for r in c.refs]
            rows = residual_arity(c.kind, [p.kind for p in prims])
            self._terms.append((self.m, rows, c.refs, self._build(c, prims)))
            self.m += rows

    def _build(self, c: ConstraintInstance, prims) -> Term:
        k = c.kind
        if k is _K.COINCIDENT:
            return _coincident(prims)
        if k is _K.HORIZONTAL:
            return _horizontal_vertical(prims, axis=1)
        if k is _K.VERTICAL:
            return _horizontal_vertical(prims, axis=0)
        if k is _K.PARALLEL:
            return _parallel(prims)
        if k is _K.PERPENDICULAR:
            return _perpendicular(prims)
        if k is _K.TANGENT:
            if prims[0].kind is _L:
                return _line_curve_tangent(prims, self.sketch.canvas)
            return _round_tangent(prims)
        if k is _K.MIDPOINT:
            return _midpoint(prims)
        if k is _K.EQUAL:
            return _equal(prims)
        if k is _K.CONCENTRIC:
            return _concentric(prims)
        return _dimension(prims, c)

    def _operands(self, x: np.ndarray, refs) -> List[np.ndarray]:
        out = []
        for r in refs:
            sl = self.index_map.get(r)
            out.append(
                np.asarray(x[sl], dtype=np.float64) if sl is not None
                else np.array(self.sketch[r].params))
        return out

    def residuals(self, x: np.ndarray) -> np.ndarray:
        r = np.zeros(self.m)
        for row, rows, refs, term in self._terms:
            r[row:row + rows] = term(self._operands(x, refs))[0]
        return r

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        J = np.zeros((self.m, self.n))
        for row, rows, refs, term in self._terms:
            _, grads = term(self._operands(x, refs))
            for ref, g in zip(refs, grads):
                sl = self.index_map.get(ref)
                if sl is not None:
                    J[row:row + rows, sl] += g
        return J


def residuals(sketch: Sketch, constraints: ConstraintSequence,
              x: np.ndarray) -> np.ndarray:
    """Stacked scalar residuals in constraint order"""
    return ConstraintSystem(sketch, constraints).residuals(x)


def jacobian(sketch: Sketch, constraints: ConstraintSequence,
             x: np.ndarray) -> np.ndarray:
    """Analytic m x n Jacobian of `residuals`"""
    return ConstraintSystem(sketch, constraints).jacobian(x)


def rank_analysis(J: np.ndarray,
                  opts: Optional[SolveOptions] = None) -> RankAnalysis:
    opts = opts or SolveOptions()
    m, n = J.shape
    # without free variables no equation is independent, so any
    # constraint on fixed geometry counts as redundant
    if m == 0 or n == 0:
        return RankAnalysis(
            n=n, m=m, rank=0, nullspace_basis=np.eye(n), redundant=m > 0)
    _, s, vt = linalg.svd(J, full_matrices=True)
    rank = int(np.sum(s > opts.rank_tol * s[0])) if s[0] > 0 else 0
    return RankAnalysis(
        n=n,
        m=m,
        rank=rank,
        nullspace_basis=vt[rank:].T.copy(),
        redundant=rank < m,
    )


def entity_fc_status(
        analysis: RankAnalysis,
        index_map: Dict[int, slice],
        sketch: Sketch,
        opts: Optional[SolveOptions] = None,
) -> Tuple[Dict[int, bool], float, float]:
    """Per-primitive fully-constrained flags and FC fractions

    A free primitive is fully constrained if its rows of the nullspace
    basis all vanish. Fixed primitives are fully constrained. An empty
    class counts as fully constrained.
    """
    opts = opts or SolveOptions()
    basis = analysis.nullspace_basis
    per_entity = {}
    for p in sketch:
        sl = index_map.get(p.id)
        if sl is None or basis.shape[1] == 0:
            per_entity[p.id] = True
            continue
        norms = np.linalg.norm(basis[sl], axis=1)
        per_entity[p.id] = bool(np.all(norms <= opts.nullspace_tol))

    def fraction(curves: bool) -> float:
        flags = [per_entity[p.id] for p in sketch
                 if p.kind.is_curve == curves]
        return sum(flags) / len(flags) if flags else 1.0

    return per_entity, fraction(True), fraction(False)


def classify(converged: bool,
             analysis: Optional[RankAnalysis]) -> SketchCategory:
    if not converged:
        return SketchCategory.NOT_SOLVABLE
    if analysis.redundant:
        return SketchCategory.OVER_CONSTRAINED
    if analysis.nullity == 0:
        return SketchCategory.FULLY_CONSTRAINED
    return SketchCategory.UNDER_CONSTRAINED


def stability_check(before: Sketch, after: Sketch, bins: int) -> bool:
    """Whether all tracked points stay in their cell of a bins x bins grid"""
    canvas = before.canvas
    for p, q in zip(before, after):
        for a, b in zip(p.tracked_points(), q.tracked_points()):
            if canvas.bin_of(*a, bins) != canvas.bin_of(*b, bins):
                return False
    return True


def _lm(system: ConstraintSystem, opts: SolveOptions):
    x = system.x0.copy()
    r = system.residuals(x)
    cost = 0.5 * r @ r
    it = 0
    mu = None
    nu = 2.0
    while it < opts.max_iterations \
            and np.max(np.abs(r), initial=0.0) > opts.residual_tol:
        if system.n == 0:
            break
        it += 1
        J = system.jacobian(x)
        A = J.T @ J
        g = J.T @ r
        if mu is None:
            mu = opts.damping_init * max(float(np.max(np.diag(A))), 1.0)
        h = linalg.lstsq(A + mu * np.eye(system.n), -g)[0]
        if np.linalg.norm(h) <= 1e-15 * (np.linalg.norm(x) + 1e-15):
            lgr.log(5, 'solver stalled at iteration %i', it)
            break
        x_new = x + h
        r_new = system.residuals(x_new)
        cost_new = 0.5 * r_new @ r_new
        predicted = 0.5 * h @ (mu * h - g)
        gain = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if gain > 0:
            x, r, cost = x_new, r_new, cost_new
            mu *= max(1 / 3, 1 - (2 * gain - 1) ** 3)
            nu = 2.0
        else:
            mu *= nu
            nu *= 2
            if mu > 1e20:
                break
    return x, r, it


def solve(sketch: Sketch, constraints: ConstraintSequence,
          opts: Optional[SolveOptions] = None) -> SolveReport:
    """Solve the constraints starting from the current geometry

    All failures are encoded in the status of the report.
    """
    opts = opts or SolveOptions()
    system = ConstraintSystem(sketch, constraints)
    x, r, iterations = _lm(system, opts)
    residual_norm = float(np.max(np.abs(r), initial=0.0))
    converged = residual_norm <= opts.residual_tol
    analysis = rank_analysis(system.jacobian(x), opts)
    solved = None
    if converged:
        try:
            solved = unpack_parameters(sketch, x, system.index_map)
        except InvalidPrimitive as e:
            lgr.debug('solution is not a valid sketch: %s',
                      CapturedException(e))
            converged = False
    category = classify(converged, analysis)
    lgr.debug(
        'solved %i constraints over %i variables in %i iterations '
        '(residual %g): %s',
        len(constraints), system.n, iterations, residual_norm,
        category.value)
    if not converged:
        return SolveReport(
            status=SketchStatus(
                category=category,
                oc_flag=analysis.redundant,
                stable=False,
            ),
            solved_sketch=None,
            iterations=iterations,
            final_residual_norm=residual_norm,
            rank_analysis=None,
        )
    per_entity, curve_fraction, point_fraction = entity_fc_status(
        analysis, system.index_map, sketch, opts)
    return SolveReport(
        status=SketchStatus(
            category=category,
            oc_flag=analysis.redundant,
            stable=stability_check(sketch, solved, opts.stability_bins),
            per_entity_fc=per_entity,
            fc_curve_fraction=curve_fraction,
            fc_point_fraction=point_fraction,
        ),
        solved_sketch=solved,
        iterations=iterations,
        final_residual_norm=residual_norm,
        rank_analysis=analysis,
    )


def incremental_apply(
        sketch: Sketch,
        seq: ConstraintSequence,
        opts: Optional[SolveOptions] = None,
) -> Tuple[ConstraintSequence, Set[int]]:
    """Add items one by one, dropping those that break solvability

    An item is problematic if it is invalid, or if adding it to the kept
    set makes the sketch not solvable or redundant. Every trial solves
    from the original geometry.
    """
    kept = []
    problematic = set()
    for i, c in enumerate(seq):
        try:
            validate_constraint(sketch, c)
        except SketchalignError as e:
            lgr.debug('dropping invalid item %i: %s', i, CapturedException(e))
            problematic.add(i)
            continue
        report = solve(sketch, ConstraintSequence(tuple(kept) + (c,)), opts)
        if not report.solvable or report.rank_analysis.redundant:
            problematic.add(i)
        else:
            kept.append(c)
    return ConstraintSequence(tuple(kept)), problematic


@build_doc
class SketchalignSolve(Interface):
    """Solve the constraints of a sketch and report its state

    The report classifies the sketch as fully-constrained (FC),
    under-constrained (UC), over-constrained (OC), or not solvable (NS),
    and lists the per-primitive fully-constrained flags, the FC fractions
    of curves and points, and whether the solved geometry is stable.
    """
    _examples_ = [
        dict(text="Solve a sketch and write the report",
             code_py="sketchalign_solve(sketch='part.json', "
                     "report='part.report.json')",
             code_cmd="datalad sketchalign-solve --sketch part.json "
                      "--report part.report.json"),
    ]
    _params_ = dict(
        sketch=Parameter(
            args=("--sketch",),
            doc="""sketch JSON file. Constraints in this file are used
            unless [CMD: --constraints CMD][PY: `constraints` PY] is
            given""",
            constraints=EnsureExistingFile()),
        constraints=Parameter(
            args=("--constraints",),
            doc="""JSON file with the constraint list, either a list or an
            object with a 'constraints' field""",
            constraints=EnsureExistingFile() | EnsureNone()),
        report=Parameter(
            args=("--report",),
            doc="""path to write the report JSON to""",
            constraints=EnsureStr() | EnsureNone()),
    )

    @staticmethod
    @eval_results
    def __call__(sketch, constraints=None, report=None):
        res_kwargs = dict(action='sketchalign-solve', path=str(sketch))
        try:
            sk, seq = load_sketch_and_constraints(sketch, constraints)
            for i, c in enumerate(seq):
                try:
                    validate_constraint(sk, c)
                except SketchalignError as e:
                    e.index = i
                    raise
            rep = solve(sk, seq, SolveOptions.from_config())
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('cannot solve sketch: %s', ce),
                exception=ce,
                **res_kwargs)
            return
        obj = rep.to_json()
        if report:
            dump_json(obj, report)
        yield get_status_dict(
            status='ok',
            message=('sketch is %s', rep.status.category.value),
            report=obj,
            **res_kwargs)


def load_sketch_and_constraints(
        sketch_path, constraints_path=None,
) -> Tuple[Sketch, ConstraintSequence]:
    sk, seq = load_sketch(load_json(sketch_path))
    if constraints_path:
        obj = load_json(constraints_path)
        if isinstance(obj, dict):
            obj = obj.get('constraints', [])
        seq = ConstraintSequence.from_json(obj)
    return sk, seq
