"""Exception hierarchy for the solver.

Every failure mode raised by the library derives from WeylmapError so
callers (and the CLI) can distinguish validation problems, solver
breakdowns and inverse-pipeline failures from programming errors.
"""


class WeylmapError(Exception):
    """Base class for all solver errors."""


class ValidationError(WeylmapError):
    """Problem data rejected before any computation."""


class InvalidInterval(ValidationError):
    pass


class ZeroParameter(ValidationError):
    pass


class RegularityViolation(ValidationError):
    pass


class AngleOrderViolation(ValidationError):
    pass


class OnInterface(ValidationError):
    """Evaluation requested exactly at the jump point; use one-sided limits."""


class SolverError(WeylmapError):
    """Forward-solver failure."""


class ToleranceNotMet(SolverError):
    pass


class NonFinite(SolverError):
    pass


class NearEigenvalue(SolverError):
    pass


class MultipleZeroDetected(SolverError):
    pass


class CountMismatch(SolverError):
    pass


class SeedDivergence(SolverError):
    pass


class UndefinedConstants(SolverError):
    pass


class RecoveryError(WeylmapError):
    """Failure of the limit-formula parameter recovery."""


class InsufficientSamples(RecoveryError):
    pass


class NoConvergence(RecoveryError):
    pass


class NonRealGeometry(RecoveryError):
    pass


class DegenerateRatio(RecoveryError):
    pass


class InverseError(WeylmapError):
    """Failure inside the inverse (main-equation) pipeline."""


class MisalignedData(InverseError):
    pass


class MissingTrace(InverseError):
    pass


class DroppedAll(InverseError):
    """Data and model coincide at every retained index."""


class SingularSystem(InverseError):
    pass


class TailTooLarge(InverseError):
    pass


class NoUsableIndex(InverseError):
    pass


class InconsistentEstimates(InverseError):
    pass


class PipelineError(InverseError):
    """Wraps any error with the inverse-pipeline stage where it occurred."""

    def __init__(self, stage, original):
        super().__init__(f"{stage}: {original}")
        self.stage = stage
        self.original = original


class FileFormatError(WeylmapError):
    """Malformed or unsupported input file."""
