"""Exception hierarchy.

Validation errors signal ill-formed inputs (bad specs, shape mismatches,
forbidden interventions); numerical errors signal data- or solver-dependent
failures (singular Gram matrices, LP stalls, degenerate instruments). The CLI
maps these to distinct exit codes.
"""


class CausalDantzigError(Exception):
    """Base class for all package errors."""


class ValidationError(CausalDantzigError, ValueError):
    """Ill-formed input: violated invariant, bad shape, unknown name."""


class SpecFormatError(ValidationError):
    """Malformed serialized model spec (unknown keys, wrong types)."""


class SingularStructureError(ValidationError):
    """The structural system matrix is singular or too ill-conditioned."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class NotPsdError(ValidationError):
    """A covariance matrix is not symmetric positive semi-definite."""


class ResponseInterventionError(ValidationError):
    """An intervention acts on the response coordinate (exclusion restriction)."""


class NumericalError(CausalDantzigError, RuntimeError):
    """Data- or solver-dependent numerical failure."""


class IllConditionedGramError(NumericalError):
    """Gram-difference matrix is singular or beyond the condition limit.

    Signals non-identifiability of the target from these environments;
    callers should inspect identifiability diagnostics or regularize.
    """

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class LpSolverError(NumericalError):
    """The simplex solver stalled or failed certificate verification."""


class DegenerateInstrumentError(NumericalError):
    """Mean shift between environments vanishes; ratio estimator undefined."""


class DegenerateMomentError(NumericalError):
    """A column has zero or negative second moment (constant column)."""


class NonconvergenceError(NumericalError):
    """Iterative solver hit its iteration cap without converging."""
