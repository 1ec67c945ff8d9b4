"""
Exception hierarchy for the quantization, pricing and calibration modules
"""

from src.config import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PROVENANCE


class PMQError(Exception):
    """Base class for every error raised by this package"""
    exit_code = EXIT_NUMERICAL


# Quantization core

class InvalidGridError(PMQError, ValueError):
    """Codewords not strictly increasing, empty, or outside the support"""
    exit_code = EXIT_CONFIG


class InvalidInitError(InvalidGridError):
    """Initial grid lies outside the support of the target distribution"""


class EmptyRegionError(PMQError):
    """A region carries (numerically) zero probability"""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"Empty quantization regions at indices {self.indices}")


class SingularHessianError(PMQError):
    """Hessian reciprocal condition number below threshold"""

    def __init__(self, rcond):
        self.rcond = rcond
        super().__init__(f"Ill-conditioned Hessian (reciprocal condition {rcond:.3e})")


class StepRejectedError(PMQError):
    """Newton step produced an unordered or out-of-support grid"""


# Distributions and models

class UnsupportedCoefficientError(PMQError, ValueError):
    """WO2 scale coefficient is not strictly positive"""
    exit_code = EXIT_CONFIG


class DegenerateDiffusionError(PMQError, ValueError):
    """Euler update with zero diffusion (point mass)"""


class Wo2UnsupportedError(PMQError, ValueError):
    """WO2 update requested where b * db/dx vanishes"""


class ParameterDomainError(PMQError, ValueError):
    """Model parameter outside its admissible domain"""
    exit_code = EXIT_CONFIG


# Grid construction

class ConfigurationError(PMQError, ValueError):
    """Inconsistent build request, e.g. WO2 on a non-autonomous dimension"""
    exit_code = EXIT_CONFIG


class UnsupportedLawError(PMQError, ValueError):
    """Joint law that cannot be evaluated (correlated dimensions beyond two)"""
    exit_code = EXIT_CONFIG


# Oracles

class NoSolutionError(PMQError, ValueError):
    """Option price outside the no-arbitrage bounds of the Black formula"""


class QuadratureAccuracyError(PMQError):
    """Characteristic-function integral did not reach the requested accuracy"""

    def __init__(self, achieved, target):
        self.achieved = achieved
        self.target = target
        super().__init__(
            f"Quadrature error estimate {achieved:.3e} exceeds target {target:.3e}"
        )


# Data and command line

class QuoteFormatError(PMQError, ValueError):
    """Malformed row in a quote file"""
    exit_code = EXIT_CONFIG


class ConfigError(PMQError, ValueError):
    """Run configuration failed validation"""
    exit_code = EXIT_CONFIG


class ProvenanceError(PMQError):
    """Grid file was built for a different model or schedule"""
    exit_code = EXIT_PROVENANCE
