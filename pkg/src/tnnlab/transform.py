"""Orthogonal mode-3 transforms that define the t-product.

A transform is a c x c orthogonal matrix applied along the third (channel)
axis of a 3-way tensor.  Applying it moves a tensor into the "transformed
domain" where the t-product becomes a frontal-slice-wise matrix product.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonOrthogonal

# Relative orthogonality tolerance, scaled by sqrt(c) in the check below.
ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class OrthogonalTransform:
    """A validated orthogonal channel transform.

    The inverse is stored (it is exactly the transpose), never recomputed.
    Instances are immutable and safe to share across threads.
    """

    c: int
    matrix: np.ndarray
    inverse: np.ndarray = field(init=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if m.shape != (self.c, self.c):
            raise DimensionMismatch(
                f"transform matrix must be {self.c}x{self.c}, got {m.shape}"
            )
        err = np.linalg.norm(m.T @ m - np.eye(self.c))
        if err > ORTHO_TOL * np.sqrt(self.c):
            raise NonOrthogonal(
                f"matrix is not orthogonal: ||M^T M - I||_F = {err:.3e}"
            )
        m.flags.writeable = False
        inv = m.T
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", inv)

    def apply(self, tensor: np.ndarray) -> np.ndarray:
        """Multiply every mode-3 tube by M (tensor x_3 M)."""
        t = _check_channels(tensor, self.c)
        return _mode3(t, self.matrix)

    def inverse_apply(self, tensor: np.ndarray) -> np.ndarray:
        """Multiply every mode-3 tube by the stored inverse M^T."""
        t = _check_channels(tensor, self.c)
        return _mode3(t, self.inverse)


def _mode3(t: np.ndarray, m: np.ndarray) -> np.ndarray:
    # One flat GEMM over all tubes beats broadcasting matmul slice-wise.
    shape = t.shape
    flat = np.ascontiguousarray(t).reshape(-1, shape[2])
    return (flat @ m.T).reshape(shape)


def _check_channels(tensor: np.ndarray, c: int) -> np.ndarray:
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 3:
        raise DimensionMismatch(f"expected a 3-way tensor, got ndim={t.ndim}")
    if t.shape[2] != c:
        raise DimensionMismatch(
            f"tensor has {t.shape[2]} channels, transform expects {c}"
        )
    return t


def dct_matrix(c: int) -> np.ndarray:
    """Orthonormal type-II cosine basis of size c x c."""
    k = np.arange(c)[:, None]
    n = np.arange(c)[None, :]
    m = np.cos(np.pi * (2 * n + 1) * k / (2 * c))
    m *= np.sqrt(2.0 / c)
    m[0, :] *= np.sqrt(0.5)
    return m


def build_transform(kind: str, c: int, matrix: np.ndarray | None = None) -> OrthogonalTransform:
    """Build a validated transform.

    kind is one of "identity", "dct" (orthonormal DCT-II, the default basis
    used by the experiment harness) or "custom" with an explicit matrix.
    """
    if c < 1:
        raise DimensionMismatch(f"channel count must be >= 1, got {c}")
    if kind == "identity":
        return OrthogonalTransform(c, np.eye(c))
    if kind == "dct":
        return OrthogonalTransform(c, dct_matrix(c))
    if kind == "custom":
        if matrix is None:
            raise ValueError("custom transform requires a matrix")
        return OrthogonalTransform(c, np.asarray(matrix, dtype=np.float64))
    raise ValueError(f"unknown transform kind: {kind!r}")
