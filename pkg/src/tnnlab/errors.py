"""Exception types shared across the library."""


class TnnLabError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(TnnLabError, ValueError):
    """Operand shapes are incompatible."""


class TransformChannelMismatch(DimensionMismatch):
    """Tensor channel count does not match the transform size."""


class NonOrthogonal(TnnLabError, ValueError):
    """A custom transform matrix failed the orthogonality check."""


class NumericalFailure(TnnLabError, RuntimeError):
    """A per-slice SVD (or similar factorization) did not converge."""


class RankOutOfRange(TnnLabError, ValueError):
    """Requested truncation rank outside [1, min(m, n)]."""


class ZeroTensor(TnnLabError, ValueError):
    """Operation undefined on the zero tensor."""


class NonPositiveScale(TnnLabError, ValueError):
    """Weight scaling factor must be strictly positive."""


class EmptyDataset(TnnLabError, ValueError):
    """Risk evaluation over an empty dataset."""


class NotSeparated(TnnLabError, RuntimeError):
    """Smoothed margin undefined: adversarial risk still above the
    separability threshold, so the loss inverse is off its domain."""


class DivergenceDetected(TnnLabError, RuntimeError):
    """Training risk or weights became non-finite."""


class BadMagic(TnnLabError, ValueError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedFile(TnnLabError, ValueError):
    """Binary file ended before the declared payload."""


class InvalidInputs(TnnLabError, ValueError):
    """Bound-evaluator inputs violate a precondition."""
