"""Exception hierarchy shared by all pipeline stages.

The CLI maps each class to a distinct exit code; library callers can catch
``SpeQrngError`` to handle any pipeline failure.
"""


class SpeQrngError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpeQrngError):
    """Configuration file missing, malformed, or schema-incompatible."""


class SurvivalTraceZero(SpeQrngError):
    """All photons are lost: the renormalizing trace is below threshold.

    Callers performing optimization must treat the point as infeasible
    rather than propagating NaNs.
    """


class InsufficientData(SpeQrngError):
    """Not enough events to estimate probabilities at the requested precision."""


class UnsortedInput(SpeQrngError):
    """Event timestamps are not nondecreasing."""


class ChannelOutOfRange(SpeQrngError):
    """Detector channel outside {1, 2, 3, 4}."""


class EmptySubinterval(SpeQrngError):
    """A sub-interval slice contains no accepted symbols."""


class DegenerateData(SpeQrngError):
    """A detector channel never fires; the MLE is pinned to the simplex boundary."""


class OptimizerDiverged(SpeQrngError):
    """A local search exhausted its iteration cap without a feasible point."""


class OutputLengthNonpositive(SpeQrngError):
    """The extractor's entropy budget is exhausted (no output bits available)."""
