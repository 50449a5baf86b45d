"""Exception types shared by the simulator and the command line."""


class QtLinkError(Exception):
    """Base class for errors raised by qtlink."""

    exit_code = 3
    kind = "runtime"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": str(self)}


class ConfigError(QtLinkError, ValueError):
    """A scenario file is malformed; ``path`` names the offending key."""

    exit_code = 2
    kind = "config"

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": self.message, "path": self.path}


class ParameterError(ValueError):
    """A record was built with an out-of-range field."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field} {message}")


class InstabilityError(QtLinkError, RuntimeError):
    """A tracking loop diverged."""

    kind = "instability"


class StatisticsError(QtLinkError, RuntimeError):
    """Not enough (or degenerate) data for an estimate."""

    kind = "statistics"


class OutputError(QtLinkError):
    """A report or table could not be written."""

    kind = "output"


class SubSpotWarning(UserWarning):
    """The receiver aperture captures the whole far-field spot."""
