"""Exception hierarchy shared by all tempora modules."""


class TemporaError(Exception):
    """Base class for every error raised by this package."""


class InvalidFactorError(TemporaError, ValueError):
    pass


class InsufficientLengthError(TemporaError, ValueError):
    pass


class InsufficientAudioError(TemporaError, ValueError):
    pass


class MissingAudioError(TemporaError, ValueError):
    pass


class InvalidBandError(TemporaError, ValueError):
    pass


class ProfileError(TemporaError, ValueError):
    pass


class ShapeError(TemporaError, ValueError):
    pass


class LabelError(TemporaError, ValueError):
    pass


class DomainError(TemporaError, ValueError):
    pass


class DegenerateDataError(TemporaError, ValueError):
    pass


class EmptySetError(TemporaError, ValueError):
    pass


class UndefinedCorrelationError(TemporaError, ValueError):
    pass


class FormatError(TemporaError, ValueError):
    """A file could not be parsed. ``field`` names the offending header field."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class UnsupportedChannelsError(FormatError):
    def __init__(self, channels: int):
        super().__init__(f"unsupported channel count {channels} (expected 1 or 3)", field="channels")
        self.channels = channels
