import numpy as np
import pytest

from datalad.tests.utils_pytest import (
    assert_equal,
    assert_false,
    assert_in,
    assert_result_count,
    assert_true,
)

from ..conftest import (
    seq,
    two_points,
)
from ..datagen import (
    TEMPLATES,
    degrade_constraints,
    generate_sketch,
    make_record,
)
from ..sketch import (
    Canvas,
    ConstraintKind,
    ConstraintSequence,
    Primitive,
    Sketch,
    load_sketch,
    pack_parameters,
)
from ..solver import (
    SketchCategory,
    SketchalignSolve,
    SolveOptions,
    incremental_apply,
    jacobian,
    rank_analysis,
    residuals,
    solve,
    stability_check,
)
from ..utils import (
    dump_json,
    load_json,
)

FC = SketchCategory.FULLY_CONSTRAINED
UC = SketchCategory.UNDER_CONSTRAINED
OC = SketchCategory.OVER_CONSTRAINED
NS = SketchCategory.NOT_SOLVABLE


def test_residuals():
    sk = two_points()
    x, _ = pack_parameters(sk)
    np.testing.assert_array_equal(
        residuals(sk, seq(('horizontal', (0, 1))), x), [4.0])
    np.testing.assert_allclose(
        residuals(sk, seq(('distance_dim', (0, 1), 5.0)), x), [0.0],
        atol=1e-15)
    lines = Sketch((
        Primitive(0, 'line', (0, 0, 1, 0)),
        Primitive(1, 'line', (0, 0, 0, 1)),
    ))
    x, _ = pack_parameters(lines)
    np.testing.assert_array_equal(
        residuals(lines, seq(('perpendicular', (0, 1))), x), [0.0])


def test_jacobian_fixtures():
    sk = two_points()
    x, _ = pack_parameters(sk)
    np.testing.assert_allclose(
        jacobian(sk, seq(('distance_dim', (0, 1), 5.0)), x), [[0.6, 0.8]])
    free = Sketch((
        Primitive(0, 'point', (1, 2)),
        Primitive(1, 'point', (3, 5)),
    ))
    x, _ = pack_parameters(free)
    # second minus first
    np.testing.assert_array_equal(
        jacobian(free, seq(('horizontal', (0, 1))), x), [[0, -1, 0, 1]])
    assert_equal(jacobian(free, ConstraintSequence(), x).shape, (0, 4))


def _random_instance(rng):
    """A sketch of every primitive kind and constraints on all of them"""
    def pt():
        return tuple(rng.uniform(-5, 5, size=2))

    c1 = pt()
    prims = (
        Primitive(0, 'point', pt(), fixed=True),
        Primitive(1, 'point', pt()),
        Primitive(2, 'line', pt() + pt()),
        Primitive(3, 'line', pt() + pt()),
        Primitive(4, 'circle', c1 + (rng.uniform(1, 2),)),
        Primitive(5, 'arc', pt() + (rng.uniform(1, 2),
                                    rng.uniform(0, 3), rng.uniform(3, 6))),
    )
    constraints = seq(
        ('coincident', (1, 2)),
        ('coincident', (1, 5)),
        ('coincident', (1, 4)),
        ('horizontal', (2,)),
        ('vertical', (0, 1)),
        ('parallel', (2, 3)),
        ('perpendicular', (2, 3)),
        ('tangent', (2, 4)),
        ('tangent', (3, 5)),
        ('tangent', (4, 5)),
        ('midpoint', (1, 3)),
        ('equal', (2, 3)),
        ('equal', (4, 5)),
        ('concentric', (4, 5)),
        ('distance_dim', (0, 1), 2.0),
        ('length_dim', (3,), 1.5),
        ('radius_dim', (5,), 1.0),
        ('diameter_dim', (4,), 3.0),
        ('angle_dim', (2, 3), 0.7),
    )
    return Sketch(prims), constraints


def test_jacobian_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        sk, constraints = _random_instance(rng)
        x0, _ = pack_parameters(sk)
        # evaluate away from the initial geometry, branches stay fixed
        x = x0 + rng.normal(scale=0.05, size=x0.shape)
        J = jacobian(sk, constraints, x)
        num = np.zeros_like(J)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = h
            num[:, j] = (residuals(sk, constraints, x + e)
                         - residuals(sk, constraints, x - e)) / (2 * h)
        err = np.abs(J - num) / np.maximum(1.0, np.abs(num))
        assert err.max() < 1e-6


def test_rank_analysis():
    ra = rank_analysis(np.eye(2))
    assert_equal(ra.rank, 2)
    assert_equal(ra.nullspace_basis.shape, (2, 0))
    assert_false(ra.redundant)

    ra = rank_analysis(np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert_equal(ra.rank, 1)
    assert_true(ra.redundant)
    np.testing.assert_allclose(np.abs(ra.nullspace_basis[:, 0]), [0, 1],
                               atol=1e-12)

    ra = rank_analysis(np.zeros((0, 3)))
    assert_equal(ra.rank, 0)
    assert_equal(ra.nullity, 3)
    assert_false(ra.redundant)


def test_classify_fixtures(f2, f3, f4):
    rep = solve(*f2)
    assert_equal(rep.status.category, UC)
    assert_equal(rep.rank_analysis.nullity, 1)
    assert_false(rep.status.per_entity_fc[1])
    assert_true(rep.status.per_entity_fc[0])
    assert_equal(rep.status.fc_point_fraction, 0.5)

    rep = solve(*f3)
    assert_equal(rep.status.category, FC)
    assert_equal(rep.rank_analysis.nullity, 0)
    np.testing.assert_allclose(rep.solved_sketch[1].params, (5.0, 0.0),
                               atol=1e-7)
    assert_equal(rep.status.fc_point_fraction, 1.0)
    assert_equal(rep.status.fc_curve_fraction, 1.0)

    rep = solve(*f4)
    assert_equal(rep.status.category, NS)
    assert_false(rep.solvable)
    assert_equal(rep.status.per_entity_fc, {})
    assert rep.solved_sketch is None

    sk, constraints = f3
    rep = solve(sk, constraints + seq(('horizontal', (0, 1))))
    assert_equal(rep.status.category, OC)
    assert_true(rep.solvable)
    assert_true(rep.status.oc_flag)


def test_rectangle(rectangle):
    rep = solve(*rectangle)
    assert_equal(rep.status.category, FC)
    assert_true(rep.status.stable)
    assert_false(rep.status.oc_flag)

    # perturbed corners are squared again
    sk, constraints = rectangle
    moved = sk.with_primitives([
        Primitive(p.id, p.kind,
                  tuple(v + 0.05 * (i % 3 - 1)
                        for i, v in enumerate(p.params)),
                  fixed=p.fixed) if not p.fixed else p
        for p in sk])
    rep = solve(moved, constraints)
    assert_equal(rep.status.category, FC)
    solved = rep.solved_sketch
    np.testing.assert_allclose(solved[2].params, (4.0, 2.0), atol=1e-7)
    np.testing.assert_allclose(solved[3].params, (0.0, 2.0), atol=1e-7)


@pytest.mark.parametrize('prims,constraints,nullity', [
    ([('point', (1, 2))], [], 2),
    ([('line', (0, 0, 1, 1))], [], 4),
    ([('circle', (0, 0, 1))], [], 3),
    ([('arc', (0, 0, 1, 0, 2))], [], 5),
    ([('point', (0, 0)), ('point', (0, 0))], [('coincident', (0, 1))], 2),
    ([('line', (0, 0, 2, 0))], [('horizontal', (0,))], 3),
    ([('line', (0, 0, 2, 0))],
     [('horizontal', (0,)), ('length_dim', (0,), 2.0)], 2),
    ([('circle', (0, 0, 1)), ('circle', (0, 0, 2))],
     [('concentric', (0, 1))], 4),
    ([('point', (0, 0)), ('line', (-1, 0, 1, 0))],
     [('midpoint', (0, 1))], 4),
    ([('line', (0, 0, 1, 0)), ('line', (0, 1, 1, 1))],
     [('parallel', (0, 1)), ('equal', (0, 1))], 6),
])
def test_nullity_matches_dof(prims, constraints, nullity):
    sk = Sketch(tuple(Primitive(i, k, p) for i, (k, p) in enumerate(prims)))
    rep = solve(sk, seq(*constraints))
    assert_equal(rep.rank_analysis.nullity, nullity)


def test_satisfied_system_is_untouched(f3):
    sk = Sketch((
        Primitive(0, 'point', (0, 0), fixed=True),
        Primitive(1, 'point', (5, 0)),
    ))
    rep = solve(sk, f3[1])
    assert_equal(rep.iterations, 0)
    assert_equal(rep.solved_sketch, sk)
    assert_true(rep.status.stable)


def test_permutation_invariant_category(rectangle):
    sk, constraints = rectangle
    rng = np.random.default_rng(1)
    expected = solve(sk, constraints).status
    for _ in range(5):
        order = rng.permutation(len(constraints))
        st = solve(sk, ConstraintSequence(
            tuple(constraints[int(i)] for i in order))).status
        assert_equal(st.category, expected.category)
        assert_equal(st.oc_flag, expected.oc_flag)


def test_stability_check():
    unit = Canvas(0.0, 0.0, 1.0, 1.0)

    def at(x):
        return Sketch((Primitive(0, 'point', (x, 0.5)),), canvas=unit)

    assert_true(stability_check(at(0.10), at(0.12), 4))
    assert_false(stability_check(at(0.24), at(0.26), 4))
    assert_true(stability_check(at(0.24), at(0.26), 1))
    sk = at(0.3)
    for bins in (1, 4, 64):
        assert_true(stability_check(sk, sk, bins))


def test_incremental_apply(f4, rectangle):
    sk, constraints = f4
    kept, problematic = incremental_apply(sk, constraints)
    assert_equal(problematic, {2})
    assert_equal(len(kept), 2)

    sk, constraints = rectangle
    kept, problematic = incremental_apply(sk, constraints)
    assert_equal(problematic, set())
    assert_equal(kept, constraints)

    kept, problematic = incremental_apply(
        sk, constraints + seq(('horizontal', (4,))))
    assert_equal(problematic, {len(constraints)})


def test_incremental_apply_kept_set_is_clean():
    rng = np.random.default_rng(3)
    sk = Sketch((
        Primitive(0, 'point', (0, 0), fixed=True),
        Primitive(1, 'point', (2, 1)),
        Primitive(2, 'line', (0, 0, 2, 1)),
        Primitive(3, 'line', (2, 1, 3, 3)),
    ))
    pool = [
        ('coincident', (0, 2)), ('coincident', (1, 2)),
        ('coincident', (1, 3)), ('horizontal', (2,)), ('vertical', (3,)),
        ('parallel', (2, 3)), ('perpendicular', (2, 3)),
        ('equal', (2, 3)), ('horizontal', (0, 1)),
        ('distance_dim', (0, 1), 2.0), ('length_dim', (3,), 2.0),
    ]
    for _ in range(20):
        items = [pool[int(i)] for i in rng.integers(len(pool), size=8)]
        kept, _ = incremental_apply(sk, seq(*items))
        rep = solve(sk, kept)
        assert_true(rep.solvable)
        assert_false(rep.rank_analysis.redundant)


def test_incremental_apply_on_generated_sequences():
    rng = np.random.default_rng(11)
    kinds = set()
    for template in sorted(TEMPLATES):
        for index in range(12):
            sketch, items = generate_sketch(template, rng)
            kinds.update(c.kind for c in items)
            record = degrade_constraints(
                make_record(template, index, sketch, items), 0.2, rng,
                duplicate_prob=0.3)
            sk, degraded = load_sketch(record)
            # any order, so that prefixes may be unsolvable
            shuffled = ConstraintSequence(tuple(
                degraded[int(i)] for i in rng.permutation(len(degraded))))
            kept, problematic = incremental_apply(sk, shuffled)
            assert_equal(len(kept) + len(problematic), len(shuffled))
            rep = solve(sk, kept)
            assert_true(rep.solvable)
            assert_false(rep.rank_analysis.redundant)
    assert_equal(kinds, set(ConstraintKind))


def test_constraints_on_fixed_geometry_are_redundant():
    sk = Sketch((
        Primitive(0, 'point', (0.0, 0.0), fixed=True),
        Primitive(1, 'point', (3.0, 4.0), fixed=True),
    ))
    rep = solve(sk, seq(('distance_dim', (0, 1), 5.0)))
    assert_equal(rep.status.category, SketchCategory.OVER_CONSTRAINED)
    assert_true(rep.status.oc_flag)
    assert_equal(rep.rank_analysis.n, 0)
    # nothing to solve for, so it is not unsolvable
    assert_true(rep.solvable)
    assert_equal(solve(sk, seq()).status.category,
                 SketchCategory.FULLY_CONSTRAINED)


def test_invalid_items_are_problematic():
    sk = two_points()
    kept, problematic = incremental_apply(
        sk, seq(('parallel', (0, 1)), ('horizontal', (0, 1))))
    assert_equal(problematic, {0})
    assert_equal(len(kept), 1)


def test_solve_command(tmp_path, f3):
    sk, constraints = f3
    skpath = tmp_path / 'sketch.json'
    dump_json(dict(sk.to_json(), constraints=constraints.to_json()), skpath)
    report = tmp_path / 'report.json'
    res = SketchalignSolve.__call__(
        sketch=str(skpath), report=str(report), result_renderer='disabled')
    assert_result_count(res, 1, action='sketchalign-solve', status='ok')
    obj = load_json(report)
    assert_equal(obj['category'], 'FC')
    for key in ('oc_flag', 'stable', 'fc_curve_fraction',
                'fc_point_fraction', 'per_entity_fc', 'iterations',
                'final_residual_norm'):
        assert_in(key, obj)
    # a second run writes the same report
    again = tmp_path / 'again.json'
    SketchalignSolve.__call__(
        sketch=str(skpath), report=str(again), result_renderer='disabled')
    assert_equal(again.read_bytes(), report.read_bytes())
    assert_equal(solve(sk, constraints).to_json(),
                 solve(sk, constraints).to_json())

    # a separate constraint file replaces the sketch's constraints
    cpath = tmp_path / 'constraints.json'
    dump_json(seq(('distance_dim', (0, 1), 5.0)).to_json(), cpath)
    res = SketchalignSolve.__call__(
        sketch=str(skpath), constraints=str(cpath),
        result_renderer='disabled')
    assert_result_count(res, 1, status='ok')
    assert_equal(res[0]['report']['category'], 'UC')


def test_solve_command_error(tmp_path):
    skpath = tmp_path / 'sketch.json'
    dump_json(dict(two_points().to_json(),
                   constraints=[dict(kind='parallel', refs=[0, 1])]),
              skpath)
    res = SketchalignSolve.__call__(
        sketch=str(skpath), on_failure='ignore', result_renderer='disabled')
    assert_result_count(res, 1, status='error')


def test_solve_options():
    opts = SolveOptions.from_config({'solver.max-iterations': 5})
    assert_equal(opts.max_iterations, 5)
    with pytest.raises(ValueError):
        SolveOptions(residual_tol=0)
