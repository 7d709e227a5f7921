"""Typed errors raised by the engine.

Every engine failure derives from :class:`EngineError` so the CLI can map it to a
single exit code while still naming the concrete type in its message.
"""


class EngineError(Exception):
    """Base class for all engine failures."""


class ModelError(EngineError, ValueError):
    """Invalid continuous-market parameters."""


class NonPositiveSpot(ModelError):
    pass


class SingularVol(ModelError):
    pass


class JumpBelowMinusOne(ModelError):
    pass


class BadProbabilities(ModelError):
    pass


class TailNotResolvable(EngineError):
    """The jump tail estimate never dropped below the truncation threshold."""


class NegativeDiffusionFactor(EngineError):
    """A diffusion growth factor is negative; the step count is too small for sigma."""


class InconsistentCounts(EngineError, ValueError):
    pass


class StateBudgetExceeded(EngineError):
    pass


class TooLarge(EngineError):
    """Brute-force oracle asked to enumerate more than it is built for."""


class RegressionSingular(EngineError):
    """Least-squares normal equations are singular (normally handled by ridge fallback)."""


class InsufficientLadder(EngineError, ValueError):
    pass


class DegenerateFit(EngineError):
    """All errors are numerically zero, so no power law can be fitted."""
