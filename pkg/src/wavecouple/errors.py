"""Exception hierarchy shared by all wavecouple modules."""


class WaveCoupleError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(WaveCoupleError, ValueError):
    pass


class MeshIntegrityError(WaveCoupleError):
    pass


class AssemblyError(WaveCoupleError):
    pass


class FactorizationError(WaveCoupleError):
    pass


class ConvergenceError(WaveCoupleError):
    """Iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SingularityError(WaveCoupleError):
    pass


class ProximityError(WaveCoupleError):
    pass


class ContourError(WaveCoupleError):
    pass


class ConfigError(WaveCoupleError):
    pass


class InstabilityError(WaveCoupleError):
    def __init__(self, message, step=None, energy=None):
        super().__init__(message)
        self.step = step
        self.energy = energy
