"""SVG rendering of solved sketches"""

__docformat__ = 'restructuredtext'

import logging
import math
from pathlib import Path
from typing import (
    Dict,
    List,
    Optional,
)

from datalad.interface.base import (
    Interface,
    build_doc,
)
from datalad.interface.results import get_status_dict
from datalad.interface.base import eval_results
from datalad.support.constraints import (
    EnsureBool,
    EnsureNone,
    EnsureStr,
)
from datalad.support.exceptions import CapturedException
from datalad.support.param import Parameter

from .constraints import EnsureExistingFile
from .sketch import (
    Canvas,
    Primitive,
    PrimitiveKind,
    Sketch,
    validate_sequence,
)
from .solver import (
    SketchStatus,
    SolveOptions,
    load_sketch_and_constraints,
    solve,
)

lgr = logging.getLogger('datalad.ext.sketchalign.render')

FC_COLOR = 'black'
FREE_COLOR = 'blue'
ORIGINAL_COLOR = 'red'
# longest side of the drawing in px
SIZE = 512

_SVG_HEADER = (
    '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
    '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
    'width="{width}" height="{height}" viewBox="0 0 {vw} {vh}">\n'
)


def _fmt(v: float) -> str:
    s = f'{v:.4f}'.rstrip('0').rstrip('.')
    return '0' if s == '-0' else s


class _Frame:
    """Canvas to SVG user coordinates, y pointing down"""
    def __init__(self, canvas: Canvas):
        self.canvas = canvas

    def __call__(self, x: float, y: float) -> str:
        return f'{_fmt(x - self.canvas.xmin)} ' \
               f'{_fmt(self.canvas.ymax - y)}'


def _path_data(p: Primitive, frame: _Frame) -> Optional[str]:
    prm = p.params
    if p.kind is PrimitiveKind.LINE:
        return f'M {frame(prm[0], prm[1])} L {frame(prm[2], prm[3])}'
    if p.kind is PrimitiveKind.CIRCLE:
        cx, cy, r = prm
        rr = _fmt(r)
        # two half circles, SVG cannot draw a full circle as one arc
        return (f'M {frame(cx + r, cy)} '
                f'A {rr} {rr} 0 1 0 {frame(cx - r, cy)} '
                f'A {rr} {rr} 0 1 0 {frame(cx + r, cy)} Z')
    if p.kind is PrimitiveKind.ARC:
        (sx, sy), (ex, ey) = p.endpoints()
        rr = _fmt(p.radius)
        large = int(p.sweep() > math.pi)
        # counterclockwise on the canvas is clockwise with y flipped
        return f'M {frame(sx, sy)} A {rr} {rr} 0 {large} 0 {frame(ex, ey)}'
    return None


def render_svg(sketch: Sketch,
               status: Optional[SketchStatus] = None,
               original: Optional[Sketch] = None) -> str:
    """SVG document of a sketch colored by fully-constrained state

    Fully-constrained primitives are drawn black, all others blue.
    Curves of ``original`` are overlaid in red.
    """
    canvas = sketch.canvas
    frame = _Frame(canvas)
    per_entity: Dict[int, bool] = status.per_entity_fc if status else {}
    scale = SIZE / max(canvas.width, canvas.height)
    stroke = _fmt(canvas.diagonal * 0.004)
    dot = _fmt(canvas.diagonal * 0.006)
    parts: List[str] = [_SVG_HEADER.format(
        width=_fmt(canvas.width * scale),
        height=_fmt(canvas.height * scale),
        vw=_fmt(canvas.width),
        vh=_fmt(canvas.height),
    )]
    if original is not None:
        parts.append('<g id="original">\n')
        for p in original:
            d = _path_data(p, frame)
            if d:
                parts.append(
                    f'<path d="{d}" fill="none" stroke="{ORIGINAL_COLOR}" '
                    f'stroke-width="{stroke}"/>\n')
        parts.append('</g>\n')
    parts.append('<g id="sketch">\n')
    for p in sketch:
        color = FC_COLOR if per_entity.get(p.id, False) else FREE_COLOR
        if p.kind is PrimitiveKind.POINT:
            x, y = frame(*p.params).split()
            parts.append(
                f'<circle cx="{x}" cy="{y}" r="{dot}" fill="{color}"/>\n')
            continue
        parts.append(
            f'<path d="{_path_data(p, frame)}" fill="none" '
            f'stroke="{color}" stroke-width="{stroke}"/>\n')
    parts.append('</g>\n</svg>\n')
    return ''.join(parts)


@build_doc
class SketchalignRender(Interface):
    """Render a solved sketch as SVG

    The constraints are solved first. Fully-constrained curves are drawn
    black, curves with remaining degrees of freedom blue. Optionally the
    input geometry is overlaid in red.
    """
    _examples_ = [
        dict(text="Render a sketch with the input geometry overlaid",
             code_py="sketchalign_render(sketch='part.json', "
                     "out='part.svg', overlay=True)",
             code_cmd="datalad sketchalign-render --sketch part.json "
                      "--out part.svg --overlay"),
    ]
    _params_ = dict(
        sketch=Parameter(
            args=("--sketch",),
            doc="""sketch JSON file""",
            constraints=EnsureExistingFile()),
        constraints=Parameter(
            args=("--constraints",),
            doc="""JSON file with the constraint list to use instead of the
            constraints of the sketch file""",
            constraints=EnsureExistingFile() | EnsureNone()),
        out=Parameter(
            args=("--out",),
            doc="""path of the SVG file""",
            constraints=EnsureStr()),
        overlay=Parameter(
            args=("--overlay",),
            action='store_true',
            doc="""overlay the input geometry in red""",
            constraints=EnsureBool()),
    )

    @staticmethod
    @eval_results
    def __call__(sketch, out, constraints=None, overlay=False):
        res_kwargs = dict(action='sketchalign-render', path=str(out))
        try:
            sk, seq = load_sketch_and_constraints(sketch, constraints)
            validate_sequence(sk, seq)
            report = solve(sk, seq, SolveOptions.from_config())
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('cannot solve sketch: %s', ce),
                exception=ce,
                **res_kwargs)
            return
        if not report.solvable:
            yield get_status_dict(
                status='impossible',
                message='sketch is not solvable, nothing to render',
                **res_kwargs)
            return
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(render_svg(
            report.solved_sketch, report.status,
            original=sk if overlay else None))
        yield get_status_dict(
            status='ok',
            message=('rendered %s sketch', report.status.category.value),
            **res_kwargs)
