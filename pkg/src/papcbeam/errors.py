"""Exceptions raised by the beamforming solvers."""


class BeamformingError(Exception):
    """Base class for all solver errors."""


class SingularSystem(BeamformingError):
    """The power-loading linear system is rank deficient."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


class DegenerateChannel(BeamformingError):
    """A user channel has zero norm."""


class DegenerateDirection(BeamformingError):
    """A beam direction collapsed to (numerically) zero before normalisation."""


class RankDeficient(BeamformingError):
    """The normalised channel matrix is not of full column rank."""


class ZeroDiagonal(BeamformingError):
    """A diagonal weighting entry is zero where an inverse is required."""


class ZeroChannelEntry(BeamformingError):
    """An antenna carries no channel energy for any user."""


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration.

    ``key`` holds the dotted path of the offending field when known.
    """

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
