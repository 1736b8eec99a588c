"""Exception hierarchy.

Every error raised on purpose by the package derives from ``FermiWeylError``.
Configuration problems additionally derive from ``ConfigError`` and numeric
failures from ``NumericError``; the CLI maps the two families to distinct
exit codes.
"""


class FermiWeylError(Exception):
    pass


class ConfigError(FermiWeylError, ValueError):
    pass


class NumericError(FermiWeylError, RuntimeError):
    pass


# geometry
class EmptyInterior(ConfigError):
    pass


class DisconnectedMask(ConfigError):
    pass


class EmptyErosion(ConfigError):
    pass


# spectral
class KTooLarge(ConfigError):
    pass


class NoConvergence(NumericError):
    def __init__(self, k, message=""):
        self.k = k
        super().__init__(message or f"eigenpair {k} did not converge")


class IndexOutOfRange(ConfigError, IndexError):
    pass


# weyl / fermi
class LambdaBeyondComputed(ConfigError):
    pass


class InsufficientSpectrum(ConfigError):
    pass


class NTooLarge(ConfigError):
    pass


class DimensionUnsupported(ConfigError):
    pass


class TailBoundExceeded(NumericError):
    pass


# quantization / correlation
class NyquistViolation(ConfigError):
    pass


class GridMismatch(ConfigError):
    pass


class LatticeMismatch(ConfigError):
    pass


class KindMismatch(ConfigError, TypeError):
    pass


# special
class OrderUnsupported(ConfigError):
    pass


class ArgumentUnsupported(ConfigError):
    pass
