"""Exception taxonomy shared across the toolkit.

Three broad families matter for callers: data problems (bad manifests,
invalid indices, mismatched eval files), backend problems (unreachable or
misbehaving remote scorers/annotators), and parse problems (model output
that does not match the relevance grammar). The CLI maps these families to
distinct exit codes.
"""


class FramepickError(Exception):
    """Base class for all toolkit errors."""


class DataError(FramepickError):
    """Invalid or inconsistent input data."""


class BackendError(FramepickError):
    """A scorer or annotator backend failed."""


# -- frame pipeline ----------------------------------------------------------

class EmptyManifest(DataError):
    pass


class NonMonotonicTimestamps(DataError):
    pass


class RateExceedsSource(DataError):
    pass


class EmptyPool(DataError):
    pass


class WindowOverflow(DataError):
    """More members than the window capacity allows."""


class DuplicateGlobalIndex(DataError):
    pass


class LocalIndexOutOfRange(DataError):
    pass


# -- prompt rendering and output parsing -------------------------------------

class UnknownTaskPrompt(DataError):
    pass


class OptionOverflow(DataError):
    """More candidate options than the A-Z letter alphabet."""


class ParseError(FramepickError):
    """Scorer output that does not match the relevance grammar.

    ``raw_text`` always preserves the offending generation so failures can
    be replayed.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class MalformedOutput(ParseError):
    pass


class ScoreOutOfRange(ParseError):
    pass


class InvertedSpan(ParseError):
    pass


class SpanOutOfWindow(DataError):
    pass


# -- sampling engine ---------------------------------------------------------

class BackendUnavailable(BackendError):
    """Transport-level failure; retryable within the engine's budget."""


class WindowTooLarge(DataError):
    pass


class DuplicateFrame(DataError):
    """The same global frame arrived from two windows without a dedup policy."""


class PrefilterExceedsWindow(DataError):
    pass


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# -- evaluation --------------------------------------------------------------

class LengthMismatch(DataError):
    pass


class EmptyPlan(DataError):
    pass


class EmptyAnnotation(DataError):
    pass


# -- dataset forge -----------------------------------------------------------

class AnnotatorUnavailable(BackendError):
    pass


class SchemaViolation(FramepickError):
    """Annotator output that does not match the expected stage schema."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class EmptyCaption(FramepickError):
    pass
