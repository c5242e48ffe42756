from pathlib import Path

from datalad.support.constraints import (
    Constraint,
    EnsureFloat,
)

from .utils import read_config_file


class EnsureExistingFile(Constraint):
    def __call__(self, value):
        if not Path(value).is_file():
            raise ValueError(
                f"{value} is not an existing file")
        return value

    def short_description(self):
        return 'existing file'


class EnsureConfigFile(EnsureExistingFile):
    """key=value training configuration file

    Validation reads the file, so unknown keys and malformed values are
    reported as usage errors. A dict of already parsed settings passes.
    """
    def __call__(self, value):
        if isinstance(value, dict):
            return value
        return read_config_file(super().__call__(value))

    def short_description(self):
        return 'training config file'


class EnsureUnitInterval(EnsureFloat):
    """Float in [0, 1], e.g. a probability"""
    def __call__(self, value):
        value = super().__call__(value)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{value} is not within [0, 1]")
        return value

    def long_description(self):
        return 'value must be a number in [0, 1]'

    def short_description(self):
        return 'float in [0, 1]'


class EnsureSplitRatios(Constraint):
    """Comma-separated train/val/test fractions summing to one"""
    def __call__(self, value):
        if isinstance(value, str):
            value = [v for v in value.split(',') if v.strip()]
        try:
            ratios = tuple(float(v) for v in value)
        except (TypeError, ValueError) as e:
            raise ValueError(f"{value!r} are not split ratios") from e
        if len(ratios) != 3 or any(r < 0 for r in ratios) \
                or abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(
                f"split ratios must be three nonnegative numbers summing "
                f"to 1, got {value!r}")
        return ratios

    def long_description(self):
        return ('value must be three comma-separated nonnegative '
                'train,val,test fractions that sum to 1')

    def short_description(self):
        return 'TRAIN,VAL,TEST'
