"""Exception hierarchy shared by all ctxens modules."""


class CtxensError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(CtxensError):
    """Inputs whose shapes must agree do not."""


class ConflictingFeature(CtxensError):
    """Two side-info columns share a name but disagree in value."""


class IndexOutOfRange(CtxensError):
    """A split point falls outside the usable range of the series."""


class NormalizationDegenerate(CtxensError):
    """Affine normalization attempted with |sum(p)| below threshold."""


class SingularStatistics(CtxensError):
    """Conditional correlation matrix is not usable (not SPD)."""


class NoConvergence(CtxensError):
    """Iterative solver exceeded its iteration cap."""


class OrderingViolated(CtxensError):
    """Computed losses violate the unconstrained <= affine <= convex chain."""


class EmptyData(CtxensError):
    """Training invoked with no rows."""


class NonFiniteLoss(CtxensError):
    """Training loss became NaN or infinite."""


class NonFiniteGradient(CtxensError):
    """A gradient update produced NaN or infinite values."""


class SeriesTooShort(CtxensError):
    """Series shorter than the largest requested lag."""


class SingularDesign(CtxensError):
    """Unregularized normal equations are singular."""


class LengthMismatch(CtxensError):
    """Paired sequences differ in length."""


class ConfigInvalid(CtxensError):
    """Experiment configuration fails validation."""
