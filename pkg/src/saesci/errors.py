"""Exception hierarchy.

Validation problems subclass ``ValueError`` and numerical failures subclass
``ArithmeticError`` so callers can catch either family without importing
this module.
"""

from __future__ import annotations


class SaeError(Exception):
    """Base class for every error raised by saesci."""


# -- input validation -------------------------------------------------------


class ValidationError(SaeError, ValueError):
    pass


class MissingColumn(ValidationError):
    pass


class NonIntegerCount(ValidationError):
    pass


class NonPositivePopulation(ValidationError):
    pass


class DuplicateAreaId(ValidationError):
    pass


class UnknownClass(ValidationError):
    pass


class InconsistentClassCount(ValidationError):
    pass


class EmptyArea(ValidationError):
    pass


class MissingClassSizes(ValidationError):
    """Class-based prediction requested on data without class sizes."""


class DomainError(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class OddLength(ValidationError):
    pass


class MissingSecondStage(ValidationError):
    pass


# -- numerical failures -----------------------------------------------------


class NumericalError(SaeError, ArithmeticError):
    pass


class NonFiniteResult(NumericalError):
    pass


class SingularMatrix(NumericalError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateDispersion(NumericalError):
    pass


class ModeSearchFailure(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class ZeroSigma(NumericalError):
    pass


class BootstrapFailure(NumericalError):
    """Too many bootstrap replicates failed to fit."""


class DegenerateDispersionWarning(UserWarning):
    pass
