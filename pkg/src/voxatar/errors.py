"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class GuidanceUnavailableError(RuntimeError):
    """The guidance oracle could not produce a usable noise prediction.

    The optimizer treats this as a skippable failure: the iteration is
    dropped and counted, not propagated.
    """


class ProtocolError(GuidanceUnavailableError):
    """The external oracle wire protocol was violated (bad payload, wrong
    version, shape mismatch)."""
