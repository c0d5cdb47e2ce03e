"""Exception hierarchy shared by every module."""

from __future__ import annotations


class FkpzError(Exception):
    """Base class for all package errors."""


class UnsupportedShape(FkpzError, ValueError):
    pass


class SpacingTooCoarse(FkpzError, ValueError):
    pass


class NonFiniteSample(FkpzError, ValueError):
    pass


class GridMismatch(FkpzError, ValueError):
    pass


class QuadratureFailure(FkpzError, ArithmeticError):
    pass


class MatrixTooLarge(FkpzError, MemoryError):
    pass


class EigFailure(FkpzError, ArithmeticError):
    pass


class NonPositiveTime(FkpzError, ValueError):
    pass


class InsufficientSamples(FkpzError, ValueError):
    pass


class SingularOperator(FkpzError, ArithmeticError):
    pass


class DimensionTooSmall(FkpzError, ValueError):
    pass


class TimeGridTooCoarse(FkpzError, ValueError):
    pass


class LinearSolveFailure(FkpzError, ArithmeticError):
    pass


class WindowTooNarrow(FkpzError, ValueError):
    pass


class NonPositiveK(FkpzError, ValueError):
    pass


class WeightOutOfRange(FkpzError, ValueError):
    pass


class NonConvexPhi(FkpzError, ValueError):
    pass


class ExponentOutOfRange(FkpzError, ValueError):
    pass


class EmptyBand(FkpzError, ValueError):
    pass


class DegenerateDenominator(FkpzError, ArithmeticError):
    pass


class CflViolation(FkpzError, ValueError):
    pass


class MonotonicityViolation(FkpzError, ArithmeticError):
    pass


class ConfigInvalid(FkpzError, ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class _IterationFailure(FkpzError, ArithmeticError):
    """Carries the fixed-point state so callers can inspect the residual trajectory."""

    def __init__(self, message: str, state):
        super().__init__(message)
        self.state = state


class Diverged(_IterationFailure):
    pass


class MaxIterExceeded(_IterationFailure):
    pass
