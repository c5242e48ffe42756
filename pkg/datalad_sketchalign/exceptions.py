"""Sketch alignment exceptions"""

__docformat__ = 'restructuredtext'

from typing import Optional


class SketchalignError(ValueError):
    """Base class of all domain errors of this package

    Errors raised while interpreting a constraint sequence carry the
    index of the offending item (``None`` if not applicable).
    """
    def __init__(self, msg: str = '', index: Optional[int] = None):
        super().__init__(msg)
        self.index = index


class BadArity(SketchalignError):
    pass


class RefOutOfRange(SketchalignError):
    pass


class IllegalOperandKinds(SketchalignError):
    pass


class MissingValue(SketchalignError):
    pass


class DegeneratePrimitive(SketchalignError):
    pass


class InvalidPrimitive(SketchalignError):
    pass


class TooManyPrimitives(SketchalignError):
    pass


class SequenceTooLong(SketchalignError):
    pass


class Truncated(SketchalignError):
    pass


class StructurallyInvalid(SketchalignError):
    pass


class NonFinite(SketchalignError):
    """NaN or Inf in a loss or gradient"""
    pass


class DegenerateGroup(SketchalignError):
    """Group-based advantage needs at least two samples"""
    pass


class NoPairs(SketchalignError):
    pass


class DegenerateK(SketchalignError):
    pass
