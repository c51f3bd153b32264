"""
Exception hierarchy. Library code raises; only the CLI maps these to exit codes.
"""

# =============================================================================
# ROOT
# =============================================================================


class HeisenbergError(Exception):
    """Base class for every failure raised by the toolkit."""


class InvalidArgumentError(HeisenbergError, ValueError):
    """Argument outside its documented range or dimension mismatch."""


class ConfigError(HeisenbergError):
    """Run configuration failed validation."""


class HypothesisError(HeisenbergError):
    """Requested lambda violates 0 < lambda < lambda_1."""


# =============================================================================
# QUADRATURE
# =============================================================================


class EstimationError(HeisenbergError):
    """Integrand evaluated non-finite at a sampled pair."""

    def __init__(self, message: str, pair=None):
        super().__init__(message)
        self.pair = pair


class DegenerateDenominatorError(HeisenbergError):
    """Quotient denominator not significantly above zero."""


class DivergenceError(HeisenbergError):
    """Adaptive radial integration did not settle."""


# =============================================================================
# DISCRETE SOLVER
# =============================================================================


class UnderResolvedError(HeisenbergError):
    """Point cloud too coarse for the requested domain."""


class AssemblyError(HeisenbergError):
    """Non-finite kernel entry during assembly."""

    def __init__(self, message: str, i: int = -1, j: int = -1):
        super().__init__(message)
        self.i = i
        self.j = j


class ConvergenceError(HeisenbergError):
    """Iteration cap reached before tolerance; best iterate attached."""

    def __init__(self, message: str, best=None, residual: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class StagnationError(ConvergenceError):
    """Descent stopped making progress before tolerance."""


# =============================================================================
# SWEEPS
# =============================================================================


class InsufficientSignalError(HeisenbergError):
    """Excess over baseline is within noise; refusing to fit."""
