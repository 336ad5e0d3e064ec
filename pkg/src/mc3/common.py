from enum import Enum


class ModalityId(Enum):
    """The three modalities. Declaration order is the canonical order used for pair
    enumeration, tie-breaking and file layouts."""

    AUDIO = 0
    VIDEO = 1
    LANGUAGE = 2

    @property
    def key(self) -> str:
        """Lowercase name used in manifests and config files."""
        return self.name.lower()

    @property
    def short(self) -> str:
        return self.name[0]

    @classmethod
    def parse(cls, value: "str | ModalityId") -> "ModalityId":
        """Parses a modality from its name ("audio"), short name ("A") or code."""
        if isinstance(value, ModalityId):
            return value
        text = str(value).strip()
        for modality in cls:
            if text.lower() in (modality.key, modality.short.lower(), str(modality.value)):
                return modality
        raise ValueError(f"Unknown modality: {value!r}")

    def __lt__(self, other: "ModalityId") -> bool:
        return self.value < other.value


MODALITIES: tuple[ModalityId, ...] = tuple(ModalityId)


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


# Every error raised by the package belongs to exactly one family. The CLI maps
# families to exit codes.


class MC3Error(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MC3Error):
    """Invalid configuration."""


class FormatError(MC3Error):
    """A file could not be read or does not match its documented format."""


class NumericError(MC3Error):
    """A numerical failure: collapse, NaN or Inf."""


class ValidationError(MC3Error):
    """Inputs violate a precondition of an operation."""


class InvalidConfig(ConfigError):
    pass


class InvalidDims(ConfigError):
    pass


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class TrailingData(FormatError):
    """Raised when a file holds bytes past the end its header declares."""


class CorruptCheckpoint(FormatError):
    pass


class ParseError(FormatError):
    """Raised when a manifest line cannot be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DanglingReference(FormatError):
    pass


class DegenerateNorm(NumericError):
    """Raised when a vector is too short to normalize, i.e. an embedding collapsed."""


class NonFiniteGradient(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


class TrainingAborted(NumericError):
    """Raised when a numeric failure happens during training."""

    def __init__(self, step: int, cause: Exception) -> None:
        super().__init__(f"Training aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause


class ShapeMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class MissingLabel(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class EmptyPools(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class GradCheckFailed(ValidationError):
    pass


class PoolMismatch(ValidationError):
    """Query and retrieval pools are inconsistent."""
