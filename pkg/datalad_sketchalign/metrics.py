"""Evaluation of constraint generation

Solver-scored sample statistics (category rates, stability, Pass@k),
diversity (WL-hash uniqueness, mean pairwise IoU of constraint sets), and
the evaluation command.
"""

__docformat__ = 'restructuredtext'

import logging
import math
from dataclasses import (
    asdict,
    dataclass,
    field,
)
from itertools import combinations
from typing import (
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
)

import networkx as nx
import numpy as np
import torch

from datalad.interface.base import (
    Interface,
    build_doc,
)
from datalad.interface.results import get_status_dict
from datalad.interface.base import eval_results
from datalad.support.constraints import (
    EnsureChoice,
    EnsureFloat,
    EnsureInt,
    EnsureNone,
    EnsureStr,
)
from datalad.support.exceptions import CapturedException
from datalad.support.param import Parameter

from .alignment import (
    TrainingSetup,
    rollouts,
)
from .constraints import EnsureExistingFile
from .exceptions import DegenerateK
from .sketch import (
    SYMMETRIC_KINDS,
    ConstraintInstance,
    PrimitiveKind,
    Sketch,
)
from .solver import SketchCategory
from .tokenizer import (
    WL_DIGEST_SIZE,
    WL_ITERATIONS,
    partial_items,
    quantize,
)
from .utils import (
    dump_json,
    obtain,
)

lgr = logging.getLogger('datalad.ext.sketchalign.metrics')

# sketches sampled together in one batch during evaluation
EVAL_CHUNK = 16


def _primitive_label(p, canvas, bins: int) -> str:
    def qx(v):
        return quantize(v, canvas.xmin, canvas.width, bins)

    def qy(v):
        return quantize(v, canvas.ymin, canvas.height, bins)

    extent = max(canvas.width, canvas.height)
    prm = p.params
    if p.kind is PrimitiveKind.POINT:
        q = (qx(prm[0]), qy(prm[1]))
    elif p.kind is PrimitiveKind.LINE:
        q = (qx(prm[0]), qy(prm[1]), qx(prm[2]), qy(prm[3]))
    else:
        q = (qx(prm[0]), qy(prm[1]), quantize(prm[2], 0.0, extent, bins))
        if p.kind is PrimitiveKind.ARC:
            q += tuple(
                quantize(t % (2 * math.pi), 0.0, 2 * math.pi, bins)
                for t in prm[3:5])
    return f"{p.kind.value}:{int(p.fixed)}:{','.join(map(str, q))}"


def sketch_graph(sketch: Sketch, constraints: Iterable[ConstraintInstance],
                 quant_bins: int = 4) -> nx.Graph:
    """Bipartite primitive/constraint graph with WL labels

    Constraint nodes are labeled by kind. Edges carry the operand role,
    which is the same for all operands of a symmetric kind.
    """
    g = nx.Graph()
    for p in sketch:
        g.add_node(('p', p.id),
                   label=_primitive_label(p, sketch.canvas, quant_bins))
    for j, c in enumerate(constraints):
        node = ('c', j)
        g.add_node(node, label=c.kind.value)
        symmetric = c.kind in SYMMETRIC_KINDS
        for pos, r in enumerate(c.refs):
            g.add_edge(node, ('p', r),
                       role='operand' if symmetric else f'arg{pos}')
    return g


def wl_hash(sketch: Sketch, constraints: Iterable[ConstraintInstance],
            quant_bins: int = 4) -> str:
    """Weisfeiler-Lehman hash of a sketch with its constraints"""
    return nx.weisfeiler_lehman_graph_hash(
        sketch_graph(sketch, constraints, quant_bins),
        node_attr='label',
        edge_attr='role',
        iterations=WL_ITERATIONS,
        digest_size=WL_DIGEST_SIZE,
    )


def _identity_set(constraints) -> set:
    return {c.canonical() for c in constraints}


def miou(generations: Sequence[Iterable[ConstraintInstance]]) -> float:
    """Mean intersection over union of constraint sets over all pairs

    Items are compared by kind and references, values excluded.
    """
    if len(generations) < 2:
        raise DegenerateK(
            f'need at least 2 generations, got {len(generations)}')
    sets = [_identity_set(g) for g in generations]
    ious = []
    for a, b in combinations(sets, 2):
        union = a | b
        ious.append(len(a & b) / len(union) if union else 1.0)
    return float(np.mean(ious))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased probability that k of n samples hold >= 1 of c successes"""
    if not 1 <= k <= n:
        raise ValueError(f'k must be within [1, {n}], got {k}')
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def pass_ks(K: int) -> List[int]:
    """Powers of two up to K, and K"""
    ks = [2 ** i for i in range(int(math.log2(K)) + 1)]
    return ks if ks[-1] == K else ks + [K]


@dataclass
class MetricsTable:
    fc_pct: float
    uc_pct: float
    oc_pct: float
    ns_pct: float
    stable_pct: float
    success_pct: float
    success_unstable_pct: float
    mean_reward: float
    pass_at: Dict[int, float]
    unique_at_k: float
    miou_at_k: Optional[float]
    k: int
    temperature: float
    top_p: float
    seed: int
    n_sketches: int
    n_samples: int
    per_sketch_success: List[int] = field(default_factory=list)

    def to_json(self) -> dict:
        obj = asdict(self)
        obj['pass_at'] = {str(k): v for k, v in sorted(self.pass_at.items())}
        return obj


def _generated_items(sample) -> List[ConstraintInstance]:
    if sample.constraints is not None:
        return list(sample.constraints)
    return [ConstraintInstance(kind, refs) for kind, refs in
            partial_items(sample.tokens, sample.sketch.kinds)]


def _success(sample, require_stable: bool = True) -> bool:
    if sample.report is None or not sample.report.solvable:
        return False
    st = sample.report.status
    return st.category is SketchCategory.FULLY_CONSTRAINED \
        and not st.oc_flag and (st.stable or not require_stable)


def metrics_table(groups: Sequence[Sequence], k: int,
                  temperature: float = 1.0, top_p: float = 1.0,
                  seed: int = 0) -> MetricsTable:
    """Metrics of K scored samples per sketch"""
    samples = [s for g in groups for s in g]
    n = len(samples)
    if not n:
        raise ValueError('no samples to evaluate')
    cats = [s.category for s in samples]

    def pct(count):
        return 100.0 * count / n

    successes = [sum(_success(s) for s in g) for g in groups]
    pass_at = {
        kk: float(np.mean([pass_at_k(len(g), c, kk)
                           for g, c in zip(groups, successes)]))
        for kk in pass_ks(k)
    }
    unique = []
    mious = []
    for g in groups:
        items = [_generated_items(s) for s in g]
        hashes = [wl_hash(s.sketch, it) for s, it in zip(g, items)]
        unique.extend(hashes.count(h) == 1 for h in hashes)
        if len(g) >= 2:
            mious.append(miou(items))
    return MetricsTable(
        fc_pct=pct(cats.count(SketchCategory.FULLY_CONSTRAINED)),
        uc_pct=pct(cats.count(SketchCategory.UNDER_CONSTRAINED)),
        oc_pct=pct(cats.count(SketchCategory.OVER_CONSTRAINED)),
        ns_pct=pct(cats.count(SketchCategory.NOT_SOLVABLE)),
        stable_pct=pct(sum(s.stable for s in samples)),
        success_pct=pct(sum(successes)),
        success_unstable_pct=pct(
            sum(_success(s, require_stable=False) for s in samples)),
        mean_reward=float(np.mean([s.reward.total for s in samples])),
        pass_at=pass_at,
        unique_at_k=pct(sum(unique)),
        miou_at_k=float(np.mean(mious)) if mious else None,
        k=k,
        temperature=temperature,
        top_p=top_p,
        seed=seed,
        n_sketches=len(groups),
        n_samples=n,
        per_sketch_success=successes,
    )


def eval_model(policy, sketches: Sequence[Sketch], k: int = 8,
               temperature: float = 1.0, top_p: float = 1.0,
               seed: int = 0, setup=None) -> MetricsTable:
    """Sample K sequences per sketch, score them, and tabulate"""
    if k < 1:
        raise ValueError('k must be positive')
    setup = setup or TrainingSetup.from_config()
    generator = torch.Generator().manual_seed(seed)
    groups = []
    for start in range(0, len(sketches), EVAL_CHUNK):
        groups.extend(rollouts(
            policy, sketches[start:start + EVAL_CHUNK], k, temperature,
            generator, setup, top_p=top_p))
    table = metrics_table(groups, k, temperature, top_p, seed)
    lgr.info('T=%s p=%s: FC %.2f%%, NS %.2f%%, Pass@1 %.2f%%',
             temperature, top_p, table.fc_pct, table.ns_pct,
             100 * table.pass_at[1])
    return table


@build_doc
class SketchalignEval(Interface):
    """Evaluate a constraint generation model with the solver

    For every sketch of the dataset split, K constraint sequences are
    sampled and solved. The report lists the percentages of
    fully-constrained (FC), under-constrained (UC), over-constrained (OC)
    and not solvable (NS) samples, the stable percentage, success rates
    (FC, not OC, solvable and stable), Pass@k, the percentage of unique
    generations per sketch, and the mean pairwise IoU of the generated
    constraint sets. Several temperatures and top-p values yield one
    table per combination.
    """
    _examples_ = [
        dict(text="Evaluate with 8 samples per sketch at temperature 1",
             code_py="sketchalign_eval(model='rloo.ckpt', "
                     "data='corpus.jsonl', k=8, temperature=[1.0], "
                     "report='rloo.eval.json')",
             code_cmd="datalad sketchalign-eval --model rloo.ckpt "
                      "--data corpus.jsonl --k 8 --temperature 1.0 "
                      "--report rloo.eval.json"),
    ]
    _params_ = dict(
        model=Parameter(
            args=("--model",),
            doc="""policy checkpoint""",
            constraints=EnsureExistingFile()),
        data=Parameter(
            args=("--data",),
            doc="""dataset JSONL file""",
            constraints=EnsureExistingFile()),
        split=Parameter(
            args=("--split",),
            doc="""dataset split to evaluate on""",
            constraints=EnsureChoice('train', 'val', 'test')),
        k=Parameter(
            args=("--k",),
            doc="""samples per sketch. Defaults to
            'datalad.sketchalign.eval.k'""",
            constraints=EnsureInt() | EnsureNone()),
        temperature=Parameter(
            args=("--temperature",),
            nargs='+',
            doc="""sampling temperature(s)""",
            constraints=EnsureFloat() | EnsureNone()),
        top_p=Parameter(
            args=("--top-p",),
            nargs='+',
            doc="""nucleus sampling mass(es)""",
            constraints=EnsureFloat() | EnsureNone()),
        seed=Parameter(
            args=("--seed",),
            doc="""sampling seed""",
            constraints=EnsureInt() | EnsureNone()),
        report=Parameter(
            args=("--report",),
            doc="""path to write the report JSON to""",
            constraints=EnsureStr() | EnsureNone()),
    )

    @staticmethod
    @eval_results
    def __call__(model, data, split='test', k=None, temperature=None,
                 top_p=None, seed=None, report=None):
        from .datagen import load_records
        from .policy import load_checkpoint
        res_kwargs = dict(action='sketchalign-eval', path=str(model))
        k = obtain('eval.k') if k is None else k
        seed = obtain('eval.seed') if seed is None else seed
        temperatures = _as_list(temperature, obtain('eval.temperature'))
        top_ps = _as_list(top_p, obtain('eval.top-p'))
        tables = []
        try:
            policy = load_checkpoint(model)
            sketches = [Sketch.from_json(r)
                        for r in load_records(data, split)]
            if not sketches:
                raise ValueError(f'no {split} records in {data}')
            for t in temperatures:
                for p in top_ps:
                    tables.append(eval_model(
                        policy, sketches, k, t, p, seed))
            if report:
                dump_json(
                    tables[0].to_json() if len(tables) == 1
                    else [t.to_json() for t in tables],
                    report)
        except Exception as e:
            ce = CapturedException(e)
            yield get_status_dict(
                status='error',
                message=('evaluation failed: %s', ce),
                exception=ce,
                **res_kwargs)
            return
        for table in tables:
            yield get_status_dict(
                status='ok',
                message=('T=%s p=%s: FC %.2f%%, Pass@1 %.2f%%, Pass@%i '
                         '%.2f%%',
                         table.temperature, table.top_p, table.fc_pct,
                         100 * table.pass_at[1], k, 100 * table.pass_at[k]),
                metrics=table.to_json(),
                **res_kwargs)


def _as_list(value, default) -> list:
    if value is None:
        return [default]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]

