"""Exception hierarchy shared by every module of the package."""


class TTSError(Exception):
    """Base class for all package errors."""


class NonFinite(TTSError):
    """An update produced NaN or Inf."""


class KernelFailure(TTSError):
    """The Markov sampler raised while drawing the next sample."""


class Aborted(TTSError):
    """A stability monitor tripped at iteration ``k``.

    ``records`` holds everything logged before the failure; ``last_record``
    is the last good row (``None`` when the very first iterate was unstable).
    """

    def __init__(self, k, records=None):
        self.k = k
        self.records = list(records or [])
        self.last_record = self.records[-1] if self.records else None
        super().__init__(f"run aborted at iteration {k}: stability lost")


class MissingHorizon(TTSError):
    pass


class DimensionMismatch(TTSError, ValueError):
    pass


class NoConvergence(TTSError):
    pass


class Unsupported(TTSError):
    pass


class ConstructionFailure(TTSError):
    pass


class NotStabilizable(TTSError):
    pass


class Unstable(TTSError):
    """The closed loop ``A - B K`` is not a contraction."""


class NotSymmetric(TTSError, ValueError):
    pass


class SingularSystem(TTSError):
    pass


class InsufficientData(TTSError):
    pass


class PreconditionFailed(TTSError):
    """A lemma hypothesis does not hold; ``condition`` names the one violated."""

    def __init__(self, condition, index=None):
        self.condition = condition
        self.index = index
        where = "" if index is None else f" at k={index}"
        super().__init__(f"precondition violated{where}: {condition}")


class UnsupportedExponent(TTSError, ValueError):
    pass


class ConfigError(TTSError, ValueError):
    pass
