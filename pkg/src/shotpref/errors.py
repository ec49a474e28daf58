"""Exception types shared across the package."""

from __future__ import annotations


class ShotprefError(Exception):
    """Base class for every error raised by shotpref."""


class DomainError(ShotprefError, ValueError):
    """An argument lies outside the domain of a function."""


class LengthMismatch(ShotprefError):
    pass


class FrameMismatch(ShotprefError):
    pass


class DegenerateLookAt(ShotprefError):
    pass


class ParseError(ShotprefError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InfeasibleTags(ShotprefError):
    pass


class AmbiguousPrompt(ShotprefError):
    pass


class UnclassifiableFraming(ShotprefError):
    pass


class MotionAmbiguous(ShotprefError):
    pass


class EmptyTags(ShotprefError):
    pass


class DataTooSmall(ShotprefError):
    pass


class TooFewSamples(ShotprefError):
    pass


class BadTokenRole(ShotprefError):
    pass


class LengthError(ShotprefError):
    pass


class NoPairs(ShotprefError):
    pass


class RemoteScorerError(ShotprefError):
    pass


class Timeout(RemoteScorerError):
    pass


class BadResponse(RemoteScorerError):
    pass


class Unreachable(RemoteScorerError):
    pass


class MissingArtifact(ShotprefError):
    def __init__(self, path: str, stage: str):
        self.path = path
        self.stage = stage
        super().__init__(f"missing artifact {path!r}; run stage {stage!r} first")


class ConfigError(ShotprefError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        prefix = f"{field}: " if field else ""
        super().__init__(prefix + message)


class ClampWarning(UserWarning):
    """Trajectory values fell outside the tokenizer ranges and were clamped."""
