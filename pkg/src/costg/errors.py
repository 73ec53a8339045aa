"""Exception taxonomy.

The CLI maps these onto exit codes: input problems exit 2, model-fitting
and simulation problems exit 3, inference problems exit 4, study-level
problems exit 5.
"""


class CostgError(Exception):
    """Base class for all package errors."""


class InputError(CostgError):
    """Bad user input: CSV, config file, or malformed data."""


class CensoredSubjectError(InputError):
    """An operation that requires complete cost data met a censored subject."""


class ModelError(CostgError):
    """Model fitting or model-based simulation failed."""


class SingularDesignError(ModelError):
    """Design matrix is rank deficient."""


class NonConvergenceError(ModelError):
    """IRLS did not converge (includes logistic separation).

    The last iterate, when available, is attached as ``last_coefficients``.
    """

    def __init__(self, message, last_coefficients=None, iterations=None):
        super().__init__(message)
        self.last_coefficients = last_coefficients
        self.iterations = iterations


class ResponseDomainError(ModelError):
    """Response or requested mean is outside the family's domain."""


class InsufficientDataError(ModelError):
    """A model's risk set is empty or too small to fit."""


class SimulationDomainError(ModelError):
    """Too many Monte-Carlo paths hit a model-domain violation."""


class PositivityError(ModelError):
    """A weight denominator (censoring survival or propensity) hit zero."""


class InferenceError(CostgError):
    """Bootstrap inference failed."""


class DegenerateInferenceError(InferenceError):
    """Standard error is zero; Wald inference undefined."""


class StudyError(CostgError):
    """A simulation study had too many failed repetitions."""
