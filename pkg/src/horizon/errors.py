"""Exception hierarchy shared by every horizon module."""

from __future__ import annotations


class HorizonError(Exception):
    """Base class for all errors raised by this package."""

    code = "HORIZON_ERROR"


# -- pricing documents -------------------------------------------------------


class PricingError(HorizonError):
    code = "PRICING_INVALID"


class PricingSyntaxError(PricingError):
    """Malformed YAML. ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(PricingError):
    """Missing, unknown or mistyped key in a pricing document."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SemanticError(PricingError):
    """A well-formed document that violates a model invariant."""

    def __init__(self, message: str, entity: str | None = None):
        self.entity = entity
        super().__init__(message)


class InvalidSubscription(PricingError):
    code = "INVALID_SUBSCRIPTION"


class UnknownPlan(InvalidSubscription):
    pass


class UnknownAddOn(InvalidSubscription):
    pass


class AddOnUnavailable(InvalidSubscription):
    pass


# -- expressions -------------------------------------------------------------


class ExpressionError(HorizonError):
    code = "EXPRESSION_ERROR"


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, line: int, column: int, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        hint = f"; expected {expected}" if expected else ""
        super().__init__(f"{message} at line {line}, column {column}{hint}")


class ExpressionTypeError(ExpressionError):
    def __init__(self, node: str, expected: str, actual: str, message: str | None = None):
        self.node = node
        self.expected = expected
        self.actual = actual
        super().__init__(message or f"type mismatch in {node!r}: {expected} vs {actual}")


class UnknownAttribute(ExpressionError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"unknown attribute {path!r}")


class SchemaDefinitionError(ExpressionError):
    """Malformed context schema (bad path, bad type, prefix clash)."""


class EvaluationError(ExpressionError):
    """Runtime failure of a well-typed expression; routed to default values."""


class MissingAttribute(EvaluationError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"missing attribute {path!r}")


class ContextTypeError(EvaluationError):
    def __init__(self, path: str, expected: str, value: object):
        self.path = path
        self.expected = expected
        super().__init__(f"context value for {path!r} is not {expected}: {value!r}")


class RegexError(EvaluationError):
    def __init__(self, pattern: str, reason: str):
        self.pattern = pattern
        super().__init__(f"invalid regular expression {pattern!r}: {reason}")


# -- toggle store ------------------------------------------------------------


class StoreError(HorizonError):
    code = "STORE_ERROR"


class NotFound(StoreError):
    code = "NOT_FOUND"


class DanglingReference(StoreError):
    code = "DANGLING_REFERENCE"


class CycleError(StoreError):
    code = "CYCLE"


class DependencyViolation(StoreError):
    code = "DEPENDENCY_VIOLATION"

    def __init__(self, message: str, dependents: tuple[str, ...] = ()):
        self.dependents = dependents
        super().__init__(message)


class ConsistencyError(StoreError):
    code = "CONSISTENCY_ERROR"


class OperationDisabled(StoreError):
    code = "OPERATION_DISABLED"


# -- evaluation --------------------------------------------------------------


class UnknownFeature(HorizonError):
    code = "UNKNOWN_FEATURE"

    def __init__(self, feature_id: str):
        self.feature_id = feature_id
        super().__init__(f"unknown feature {feature_id!r}")


class RevisionMismatch(HorizonError):
    code = "REVISION_MISMATCH"


# -- pricing compiler --------------------------------------------------------


class SchemaConflict(HorizonError):
    code = "SCHEMA_CONFLICT"


class ConflictError(HorizonError):
    code = "CONFLICT"


class WatchError(HorizonError):
    code = "WATCH_ERROR"


# -- tokens / service --------------------------------------------------------


class TokenError(HorizonError):
    code = "TOKEN_INVALID"


class SignatureInvalid(TokenError):
    code = "SIGNATURE_INVALID"


class TokenExpired(TokenError):
    code = "TOKEN_EXPIRED"


class ConfigError(HorizonError):
    code = "CONFIG_ERROR"


# -- scorecard ---------------------------------------------------------------


class IncompleteAssessment(HorizonError):
    code = "INCOMPLETE_ASSESSMENT"


class ProbeFailure(HorizonError):
    code = "PROBE_FAILURE"

    def __init__(self, capability: str, reason: str):
        self.capability = capability
        super().__init__(f"probe for {capability!r} failed: {reason}")
