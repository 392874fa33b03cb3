"""Exception hierarchy for lattice-om.

Every error derives from ``LatticeOMError`` and from the closest built-in
exception, so callers can catch either. The CLI maps the ``ValueError``
family to exit status 2 (bad input) and the ``RuntimeError`` family to exit
status 3 (numerical failure).
"""


class LatticeOMError(Exception):
    """Base class for all lattice-om errors."""


# ──────────────────────────────────────────────────────────────
# Input / validation problems
# ──────────────────────────────────────────────────────────────
class DimensionError(LatticeOMError, ValueError):
    """Site sets of two objects do not match."""


class ResolutionError(LatticeOMError, ValueError):
    """A grid or mode count is too coarse for the requested computation."""


class DegenerateMeasureError(LatticeOMError, ValueError):
    """A change of measure was requested for a zero-noise system."""


class UnsupportedModelError(LatticeOMError, ValueError):
    """The operation is only defined for a narrower class of models."""


class FactorizationError(LatticeOMError, ValueError):
    """A Gaussian Markov covariance factorization (G, H) is not admissible."""


class OutOfClassError(LatticeOMError, ValueError):
    """A divisor index pair (k, l) lies outside the admissible class."""


class ConfigurationError(LatticeOMError, ValueError):
    """A run or scan is configured in a way that cannot produce results."""


class ConfigValidationError(ConfigurationError):
    """Strict parsing of a run configuration failed.

    Attributes:
        problems: one ``"dotted.key: message"`` string per offending key
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


# ──────────────────────────────────────────────────────────────
# Numerical failures
# ──────────────────────────────────────────────────────────────
class ModelError(LatticeOMError, RuntimeError):
    """A Hamiltonian model produced a non-finite value or is unknown."""


class IntegrationError(LatticeOMError, RuntimeError):
    """A trajectory left the finite state region during integration."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class OptimizationError(LatticeOMError, RuntimeError):
    """Action minimization terminated without decreasing the action."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class InsufficientDataError(LatticeOMError, RuntimeError):
    """Too few Monte Carlo levels had hits to fit a scaling law."""

    def __init__(self, message, usable=()):
        self.usable = tuple(usable)
        super().__init__(message)
