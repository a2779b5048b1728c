"""Exception hierarchy shared across the package.

Two families matter for the CLI exit-code contract: validation errors
(bad user input or configuration, exit 1) and numeric/integrity errors
(broken artifacts or non-finite math, exit 2).
"""


class ValidationError(ValueError):
    """Input or configuration rejected before any computation ran."""


class ConfigurationError(ValidationError):
    """Structurally impossible configuration (e.g. head count not dividing d)."""


class ShapeError(ValidationError):
    """Operands whose shapes cannot be combined."""


class EmptyPoolError(ValidationError):
    """An attention pool with zero entries."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required."""


class IntegrityError(RuntimeError):
    """A stored artifact that fails structural validation."""


class LoadError(IntegrityError):
    """A stored artifact missing a tensor or field required by its role."""
