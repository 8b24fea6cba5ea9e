"""Exception hierarchy shared by every module."""


class PolarGraphError(Exception):
    """Base class for all errors raised by this package."""


class EmptyConcept(PolarGraphError, ValueError):
    pass


class OutOfRange(PolarGraphError, ValueError):
    pass


class ScorerUnavailable(PolarGraphError):
    """A template call kept failing after its retry budget; the spectrum is aborted."""


class BackendError(PolarGraphError):
    """A model backend failed after exhausting its retries."""


class DuplicateEpisode(PolarGraphError):
    pass


class CorruptFile(PolarGraphError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NormalizationError(PolarGraphError, ValueError):
    pass


class DimensionMismatch(PolarGraphError, ValueError):
    pass


class EmptyIndex(PolarGraphError):
    pass


class EmptyGraph(PolarGraphError):
    pass


class MissingEmbedding(PolarGraphError, KeyError):
    pass


class ParserMalformedOutput(PolarGraphError):
    pass


class ConfigError(PolarGraphError):
    pass
