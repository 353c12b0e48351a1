"""Exception types raised across the package."""

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class SingularityError(np.linalg.LinAlgError):
    """A symmetric matrix is too close to singular to invert."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace if trace is not None else []


class DegenerateModelError(ValueError):
    """A generative model cannot be calibrated as requested."""


class ConstructionError(ValueError):
    """Knockoff construction is impossible for the supplied design."""


class FoldError(ValueError):
    """Cross-validation folds cannot be formed."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
