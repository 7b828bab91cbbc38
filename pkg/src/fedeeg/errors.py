"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration field is missing, malformed, or inconsistent."""


class ProtocolError(RuntimeError):
    """A federation message violates the wire contract or round discipline."""


class ZeroVarianceError(RuntimeError):
    """The federation-wide signal is constant; standardization is undefined."""


class SingleClassError(ValueError):
    """A ranking metric was requested for labels containing only one class."""
