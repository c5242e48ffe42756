from datalad.conftest import setup_package

import pytest

from .policy import (
    ConstraintPolicy,
    PolicyConfig,
)
from .sketch import (
    ConstraintInstance,
    ConstraintSequence,
    Primitive,
    Sketch,
)

# small enough for finite-difference gradient checks
TINY_POLICY = PolicyConfig(
    embed_dim=2,
    encoder_layers=1,
    decoder_layers=1,
    heads=1,
    feedforward_dim=4,
    max_seq_len=16,
    seed=0,
)


def two_points(p=(3.0, 4.0)) -> Sketch:
    """Fixed origin O (id 0) and a free point P (id 1)"""
    return Sketch((
        Primitive(0, 'point', (0.0, 0.0), fixed=True),
        Primitive(1, 'point', p),
    ))


def seq(*items) -> ConstraintSequence:
    return ConstraintSequence(tuple(
        ConstraintInstance(*item) for item in items))


@pytest.fixture
def f2():
    """Distance only: P can still rotate about O"""
    return two_points(), seq(('distance_dim', (0, 1), 5.0))


@pytest.fixture
def f3():
    """Distance and horizontal: P starts at (4, 1) and solves to (5, 0)"""
    return two_points((4.0, 1.0)), seq(
        ('distance_dim', (0, 1), 5.0),
        ('horizontal', (0, 1)),
    )


@pytest.fixture
def f4():
    """Horizontal and vertical force P onto O, contradicting the distance"""
    return two_points(), seq(
        ('distance_dim', (0, 1), 5.0),
        ('horizontal', (0, 1)),
        ('vertical', (0, 1)),
    )


@pytest.fixture
def rectangle():
    """Axis-aligned 4 x 2 rectangle anchored at its lower left corner"""
    corners = [(0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (0.0, 2.0)]
    prims = [Primitive(i, 'point', c, fixed=i == 0)
             for i, c in enumerate(corners)]
    items = []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        prims.append(Primitive(4 + k, 'line', a + b))
        items.append(('coincident', (k, 4 + k)))
        items.append(('coincident', ((k + 1) % 4, 4 + k)))
    items += [
        ('horizontal', (4,)),
        ('vertical', (5,)),
        ('horizontal', (6,)),
        ('vertical', (7,)),
        ('length_dim', (4,), 4.0),
        ('length_dim', (5,), 2.0),
    ]
    return Sketch(tuple(prims)), seq(*items)


@pytest.fixture
def tiny_policy():
    return ConstraintPolicy(TINY_POLICY)
