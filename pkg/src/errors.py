"""Exception hierarchy for the MF massive MIMO simulator."""


class MassimError(Exception):
    """Base class for all simulator errors."""


class InvalidConfigError(MassimError, ValueError):
    """A parameter or parameter combination is not admissible."""


class UnsupportedConfigError(InvalidConfigError):
    """The combination is valid in principle but not supported by the model."""


class ModelError(MassimError):
    """A numerical model could not be evaluated for the given inputs."""


class DegenerateChannelError(ModelError):
    """The channel estimate carries no energy."""
