"""Exception types shared across the package.

Every domain error derives from :class:`RigSpectraError` so the CLI can
separate usage mistakes (exit 2) from domain failures (exit 1). Errors
specific to one stage live in that stage's module; only ones raised from
several places are defined here.
"""


class RigSpectraError(Exception):
    """Base class for all domain errors raised by this package."""


class DimensionMismatchError(RigSpectraError, ValueError):
    """Operands whose shapes cannot be combined."""


def check_shape(name, array, expected):
    """Raise DimensionMismatchError unless ``array.shape == expected``.

    ``expected`` entries set to None are ignored.
    """
    shape = tuple(array.shape)
    if len(shape) != len(expected) or any(
        e is not None and s != e for s, e in zip(shape, expected)
    ):
        raise DimensionMismatchError(
            f"{name}: expected shape {expected}, got {shape}"
        )
