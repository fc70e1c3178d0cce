"""Exception types shared across the toolkit."""


class SimanError(Exception):
    """Base class for every error raised by this package."""


class AllZero(SimanError, ValueError):
    pass


class EmptyCode(SimanError, ValueError):
    pass


class TooLarge(SimanError, ValueError):
    pass


class ZeroDirection(SimanError, ValueError):
    pass


class InvalidArgs(SimanError, ValueError):
    pass


class OutOfRange(SimanError, IndexError):
    pass


class InvalidScale(SimanError, ValueError):
    pass


class Degenerate(SimanError, ValueError):
    pass


# bit kernels
class Empty(SimanError, ValueError):
    pass


class LengthMismatch(SimanError, ValueError):
    pass


class ShapeMismatch(SimanError, ValueError):
    pass


class BadGeometry(SimanError, ValueError):
    pass


# training
class NonFiniteGradient(SimanError, FloatingPointError):
    pass


class DatasetEmpty(SimanError, ValueError):
    pass


# data io
class BadMagnitude(SimanError, ValueError):
    """File size is not a whole number of CIFAR-10 records."""


class BadLabel(SimanError, ValueError):
    pass


class BadMagic(SimanError, ValueError):
    pass


class BadVersion(SimanError, ValueError):
    pass


class Corrupt(SimanError, ValueError):
    pass
