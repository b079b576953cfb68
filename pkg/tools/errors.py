"""Exception hierarchy for uniedit."""

from typing import Optional, Sequence


class UniEditError(Exception):
    """Base exception for uniedit errors."""

    pass


class ConfigurationError(UniEditError):
    """Raised when configuration or a parameter range is invalid."""

    pass


class AudioFormatError(UniEditError):
    """Raised when a WAV file header is malformed."""

    pass


class UnsupportedFormatError(AudioFormatError):
    """Raised for well-formed audio the pipeline does not accept (stereo, non-PCM16, wrong rate)."""

    pass


class AudioIOError(UniEditError):
    """Raised when reading or writing an audio file fails."""

    pass


class ManifestError(UniEditError):
    """Raised when a JSON-lines manifest cannot be parsed or validated."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DuplicateIdError(ManifestError):
    """Raised when two manifest entries share an id."""

    def __init__(self, entry_id: str, line_number: Optional[int] = None):
        super().__init__(f"duplicate id '{entry_id}'", line_number)
        self.entry_id = entry_id


class ShapeError(UniEditError):
    """Raised when array shapes are inconsistent."""

    pass


class PreconditionError(UniEditError):
    """Raised when an operation's input violates its precondition."""

    pass


class NumericError(UniEditError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class DegenerateWindowError(UniEditError):
    """Raised when overlap-add normalization has a zero denominator."""

    pass


class UndefinedSNRError(UniEditError):
    """Raised when a signal-to-noise ratio cannot be defined (silent input)."""

    pass


class TokenIndexError(UniEditError, IndexError):
    """Raised when a target token id falls outside the vocabulary."""

    pass


class InstructionError(UniEditError):
    """Base class for instruction parsing and resolution errors."""

    pass


class InstructionParseError(InstructionError):
    """Raised when an instruction matches no known template."""

    def __init__(self, text: str):
        super().__init__(f"Unrecognized instruction: {text!r}")
        self.text = text


class EditResolutionError(InstructionError):
    """Raised when an instruction cannot be applied to a transcript."""

    pass


class AnchorNotFoundError(EditResolutionError):
    """Raised when a content anchor does not occur in the transcript."""

    def __init__(self, anchor: str):
        super().__init__(f"Anchor not found: {anchor!r}")
        self.anchor = anchor


class AmbiguousAnchorError(EditResolutionError):
    """Raised when a content anchor occurs more than once."""

    def __init__(self, anchor: str, positions: Sequence[int]):
        positions = list(positions)
        super().__init__(f"Anchor {anchor!r} is ambiguous, matches at token positions {positions}")
        self.anchor = anchor
        self.positions = positions


class IndexOutOfBoundsError(EditResolutionError):
    """Raised when an index-based locator exceeds the transcript length."""

    pass


class MetricError(UniEditError):
    """Base class for evaluation metric errors."""

    pass


class UndefinedMetricError(MetricError):
    """Raised when a metric is undefined for its inputs (e.g. empty reference)."""

    pass


class LockError(UniEditError):
    """Raised when an output directory lock cannot be acquired."""

    pass
