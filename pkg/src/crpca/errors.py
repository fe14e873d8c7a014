"""Exception hierarchy shared by the numerical modules and the CLI."""


class CrpcaError(Exception):
    """Base class for all package errors."""


class ConfigError(CrpcaError, ValueError):
    """Invalid parameters or configuration."""


class NumericalError(CrpcaError, ArithmeticError):
    """A numerical routine could not produce a meaningful result."""


class DegenerateSpectrumError(NumericalError):
    """Tied singular values make a pairwise divergence term singular."""


class DegenerateExtrinsicError(NumericalError):
    """The extrinsic combination post - a*in vanished."""


class NoUniqueFixedPointError(NumericalError):
    """A fixed-point map is not a contraction at the requested alpha."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""


class DegenerateSpectrumWarning(RuntimeWarning):
    """Near-tied singular values were perturbed before a divergence evaluation."""
