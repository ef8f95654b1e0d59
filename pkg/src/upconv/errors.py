"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and parameter
problems exit 2, numerical failures exit 3, I/O failures exit 4.
"""


class UpconvError(Exception):
    """Base class for all package errors."""


class ParameterError(UpconvError):
    """An argument violates a documented precondition."""


class GridMismatchError(ParameterError):
    """Two sampled objects do not share a time grid."""


class ConfigError(UpconvError):
    """A configuration document fails schema validation."""


class PlanningError(UpconvError):
    """No feasible frequency plan exists for the requested target."""


class AnalysisError(UpconvError):
    """A measurement or analysis step failed numerically."""


class FitError(AnalysisError):
    """A model fit did not converge or collapsed degenerately.

    `diagnostics` carries whatever the fitter knew when it gave up
    (per-restart likelihoods, iteration counts, parameter snapshots).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
