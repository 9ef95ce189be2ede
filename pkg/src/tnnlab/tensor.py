"""Dense 3-way tensor algebra under an orthogonal channel transform.

Tensors are plain float64 numpy arrays of shape (m, n, c): m x n frontal
slices stacked along the last axis.  A t-vector is the n = 1 special case.
The serialized layout (see save_tensor) is slice-major: frontal slice index
outermost, row-major within each slice.
"""

import struct

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    TransformChannelMismatch,
    TruncatedFile,
)
from .transform import OrthogonalTransform

TENSOR_MAGIC = b"TNS3"


def as_tensor3(a, name: str = "tensor") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise DimensionMismatch(f"{name} must be 3-way, got ndim={a.ndim}")
    return a


def vec(a: np.ndarray) -> np.ndarray:
    """Slice-major vectorization (frontal slice outermost, rows within)."""
    return as_tensor3(a).transpose(2, 0, 1).reshape(-1)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(vec(a), vec(b)))


def _match_transform(a: np.ndarray, t: OrthogonalTransform, name: str) -> np.ndarray:
    a = as_tensor3(a, name)
    if a.shape[2] != t.c:
        raise TransformChannelMismatch(
            f"{name} has {a.shape[2]} channels, transform expects {t.c}"
        )
    return a


def slicewise_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frontal-slice-wise matrix product (A . B)_{:,:,k} = A_k B_k."""
    a = as_tensor3(a, "a")
    b = as_tensor3(b, "b")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise DimensionMismatch(
            f"slicewise product needs (m,n,c)x(n,k,c), got {a.shape} and {b.shape}"
        )
    out = np.matmul(a.transpose(2, 0, 1), b.transpose(2, 0, 1))
    return out.transpose(1, 2, 0)


def t_product(a: np.ndarray, b: np.ndarray, t: OrthogonalTransform) -> np.ndarray:
    """t-product: transform, multiply slices, transform back."""
    a = _match_transform(a, t, "a")
    b = _match_transform(b, t, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(
            f"inner dimensions differ: {a.shape} vs {b.shape}"
        )
    return t.inverse_apply(slicewise_product(t.apply(a), t.apply(b)))


def t_transpose(a: np.ndarray, t: OrthogonalTransform) -> np.ndarray:
    """Slice-wise transpose.

    For an orthogonal (real) transform, transposing the frontal slices in the
    original domain transposes them in the transformed domain too, so no
    round-trip through the transform is needed.
    """
    return _match_transform(a, t, "a").transpose(1, 0, 2)


def t_identity(m: int, c: int, t: OrthogonalTransform) -> np.ndarray:
    """The tensor whose every transformed frontal slice is the m x m identity."""
    if c != t.c:
        raise TransformChannelMismatch(f"c={c} but transform expects {t.c}")
    slices = np.repeat(np.eye(m)[:, :, None], c, axis=2)
    return t.inverse_apply(slices)


def m_block_diag(a: np.ndarray, t: OrthogonalTransform) -> np.ndarray:
    """Dense (mc x nc) block-diagonal matrix of the transformed slices."""
    ah = t.apply(a)
    m, n, c = ah.shape
    out = np.zeros((m * c, n * c))
    for k in range(c):
        out[k * m:(k + 1) * m, k * n:(k + 1) * n] = ah[:, :, k]
    return out


def fro_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def lp_norm(a: np.ndarray, p: float) -> float:
    if p < 1:
        raise ValueError(f"lp norm needs p >= 1, got {p}")
    return float(np.linalg.norm(vec(a), ord=p))


def t_spectral_norm(a: np.ndarray, t: OrthogonalTransform) -> float:
    """Largest singular value over the transformed frontal slices."""
    ah = t.apply(a)
    return float(max(np.linalg.norm(ah[:, :, k], 2) for k in range(ah.shape[2])))


def tubal_nuclear_norm(a: np.ndarray, t: OrthogonalTransform) -> float:
    """Sum of nuclear norms of the transformed frontal slices (no 1/c factor)."""
    ah = t.apply(a)
    return float(sum(np.linalg.norm(ah[:, :, k], "nuc") for k in range(ah.shape[2])))


def norms(a: np.ndarray, t: OrthogonalTransform, p: float = 1.0) -> dict:
    return {
        "fro": fro_norm(a),
        "spectral": t_spectral_norm(a, t),
        "tubal_nuclear": tubal_nuclear_norm(a, t),
        f"l{p:g}": lp_norm(a, p),
    }


def save_tensor(path, a: np.ndarray) -> None:
    """Write magic "TNS3", m, n, c as little-endian u64, then float64
    little-endian entries in slice-major order."""
    a = as_tensor3(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("refusing to serialize non-finite tensor entries")
    m, n, c = a.shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<QQQ", m, n, c))
        fh.write(a.transpose(2, 0, 1).astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise BadMagic(f"expected {TENSOR_MAGIC!r}, got {magic!r}")
    header = fh.read(24)
    if len(header) != 24:
        raise TruncatedFile("tensor header cut short")
    m, n, c = struct.unpack("<QQQ", header)
    payload = fh.read(8 * m * n * c)
    if len(payload) != 8 * m * n * c:
        raise TruncatedFile(
            f"expected {m * n * c} float64 entries, file ended early"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(c, m, n)
    return np.ascontiguousarray(data.transpose(1, 2, 0))
