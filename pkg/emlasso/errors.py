"""
Exception hierarchy shared by every engine in the package.

Validation problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so callers can catch either family without importing this
module.
"""


class EmLassoError(Exception):
    """Base class for all package errors."""


class ValidationError(EmLassoError, ValueError):
    """Inputs violate a documented precondition."""


class MissingColumnError(ValidationError):
    def __init__(self, column, where="data"):
        self.column = column
        super().__init__(f"Missing required column '{column}' in {where}")


class DataFormatError(ValidationError):
    """A cell could not be parsed, or a value is missing."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class TreatmentValueError(DataFormatError):
    def __init__(self, row, value, column="A"):
        super().__init__(
            f"Treatment column '{column}' must be 0 or 1; found {value!r} in row {row}",
            row=row, column=column,
        )


class FormulaError(ValidationError):
    """Formula text cannot be parsed into a model specification."""


class NumericalError(EmLassoError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class RankDeficientError(NumericalError):
    def __init__(self, column, name=None):
        self.column = column
        label = f"{column} ({name})" if name is not None else f"{column}"
        super().__init__(f"Design matrix is rank deficient: column {label} is linearly dependent on earlier columns")


class SeparationError(NumericalError):
    """Logistic coefficients diverge (complete or quasi-complete separation)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, kkt_violation=float("nan")):
        self.kkt_violation = kkt_violation
        super().__init__(f"{message} (KKT violation {kkt_violation:.3e})")


class InfeasibleSelectionError(NumericalError):
    """The observed response does not satisfy its own selection polyhedron."""


class DegenerateTruncationError(NumericalError):
    """Truncation interval collapsed (lower bound not below upper bound)."""


class BracketingError(NumericalError):
    """Root of the selective pivot could not be bracketed."""


class PipelineError(EmLassoError):
    """Wraps a failure with the pipeline stage in which it happened."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")

    @property
    def is_validation(self):
        return isinstance(self.cause, ValidationError)


def run_stage(stage, func, *args, **kwargs):
    """Call ``func``; package errors it raises come back tagged with ``stage``."""
    try:
        return func(*args, **kwargs)
    except PipelineError:
        raise
    except EmLassoError as exc:
        raise PipelineError(stage, exc) from exc
