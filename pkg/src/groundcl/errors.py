"""Exception types shared across the package."""


class GroundCLError(Exception):
    pass


class GenerationFailed(GroundCLError):
    pass


class FormatError(GroundCLError):
    """Malformed task, manifest, config or CSV file.

    ``line`` is 1-based when known.
    """

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DimensionMismatch(GroundCLError, ValueError):
    pass


class NonFiniteGradient(GroundCLError, FloatingPointError):
    pass


class NonFiniteLoss(GroundCLError, FloatingPointError):
    pass


class NonFiniteInput(GroundCLError, ValueError):
    pass


class InvalidTask(GroundCLError, ValueError):
    pass


class EpisodeFinished(GroundCLError, RuntimeError):
    pass


class ConfigError(GroundCLError, ValueError):
    pass


class VersionMismatch(GroundCLError):
    pass


class ChecksumMismatch(GroundCLError):
    pass
