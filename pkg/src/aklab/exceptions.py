"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class AKLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AKLabError, ValueError):
    """Inadmissible configuration or stage parameters."""


class NoAdmissibleM(ConfigError):
    """The mixing-time search found no admissible value."""


class BoundViolated(AKLabError, ArithmeticError):
    """An asserted exact inequality failed."""


class TargetExhausted(AKLabError):
    """No stored approximant satisfies the selection conditions."""


class MoserDiverged(AKLabError, RuntimeError):
    """The volume correction flow failed or missed its tolerance."""


class NotInjective(AKLabError, RuntimeError):
    """A smooth block failed its injectivity certificate."""


class NewtonDiverged(AKLabError, RuntimeError):
    """A Newton polish did not converge."""


class PrecisionLoss(AKLabError, ArithmeticError):
    """A local coordinate cannot be represented in double precision."""


class IndexOutOfRange(AKLabError, IndexError):
    """A partition index lies outside its admissible range."""


class EmptyPartition(AKLabError):
    """A partition family has no elements for the requested stage."""


class UnsupportedTag(AKLabError, KeyError):
    """Unknown predicted-image tag."""


class InsufficientSamples(AKLabError):
    """Monte-Carlo standard error is too large for a verdict."""


class GridTooCoarse(AKLabError):
    """A sampled sup-norm grid is too coarse to resolve the map."""
