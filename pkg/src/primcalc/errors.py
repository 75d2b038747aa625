"""Exception types shared across the package."""

from __future__ import annotations


class PrimcalcError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(PrimcalcError):
    """Raised on malformed input text; carries offset and expected tokens."""

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = expected
        detail = f" at offset {offset}"
        if expected:
            detail += " (expected " + " | ".join(expected) + ")"
        super().__init__(message + detail)


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name: str, offset: int):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", offset)


class EmptyDomainError(PrimcalcError):
    """A domain computation produced no interval of positive length."""


class ResolutionFailureError(PrimcalcError):
    """Zero isolation could not separate two candidate points at the scan resolution."""


class UndefinedNearError(PrimcalcError):
    """A numeric probe point fell outside the expression's domain."""


class DomainViolationError(PrimcalcError):
    """Quadrature hit an undefined point inside the integration range."""


class ToleranceNotMetError(PrimcalcError):
    """Quadrature ran out of subdivisions; .estimate carries the best value."""

    def __init__(self, estimate: float, err: float):
        self.estimate = estimate
        self.err = err
        super().__init__(f"tolerance not met (estimate={estimate!r}, err={err:.3e})")


class NonDifferentiableError(PrimcalcError):
    """Symbolic differentiation hit a node kind with no rule."""


class NotAPrimitiveError(PrimcalcError):
    """family_from_base was given a base that fails the primitive check."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"base is not a primitive of the target: {report.reason}")


class ArityMismatchError(PrimcalcError):
    """Constant vector length does not match the component count."""


class ZeroScaleError(PrimcalcError):
    """Scaling a primitive family by zero is rejected."""


class HypothesisUnverifiedError(PrimcalcError):
    """A rule's hypothesis failed; .clause names it, .report carries evidence."""

    def __init__(self, clause: str, report=None):
        self.clause = clause
        self.report = report
        super().__init__(f"hypothesis not verified: {clause}")


class InverseUnverifiedError(PrimcalcError):
    """The supplied inverse does not satisfy g(g_inverse(x)) = x."""


class RuleNotFoundError(PrimcalcError):
    """No rule chain produced a primitive; .trace carries the attempts."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class CatalogBrokenError(PrimcalcError):
    """A built-in counterexample no longer produces its expected verdict."""
