"""Tensor SVD: factorization, tubal rank, optimal truncation, stable rank.

Everything is computed slice-by-slice in the transformed domain, then mapped
back.  Singular values are never affected by the (orthogonal) transform of
the outer factors, so tube energies can be read off the transformed slices.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure, RankOutOfRange, ZeroTensor
from .tensor import as_tensor3, fro_norm, _match_transform
from .transform import OrthogonalTransform

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TSVDFactors:
    """T = U * S * V^T with t-orthogonal U, V and f-diagonal S."""

    u: np.ndarray  # (m, m, c)
    s: np.ndarray  # (m, n, c), f-diagonal
    v: np.ndarray  # (n, n, c)


def _slice_svds(a: np.ndarray, t: OrthogonalTransform, full: bool):
    ah = t.apply(_match_transform(a, t, "tensor"))
    try:
        return ah, np.linalg.svd(ah.transpose(2, 0, 1), full_matrices=full)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"per-slice SVD failed: {exc}") from exc


def slice_singular_values(a: np.ndarray, t: OrthogonalTransform) -> np.ndarray:
    """Singular values of every transformed frontal slice, shape (c, min(m, n))."""
    _, (_, sig, _) = _slice_svds(a, t, full=False)
    return sig


def tsvd(a: np.ndarray, t: OrthogonalTransform) -> TSVDFactors:
    a = as_tensor3(a)
    m, n, _ = a.shape
    _, (u, sig, vh) = _slice_svds(a, t, full=True)
    s = np.zeros((t.c, m, n))
    idx = np.arange(min(m, n))
    s[:, idx, idx] = sig
    return TSVDFactors(
        u=t.inverse_apply(u.transpose(1, 2, 0)),
        s=t.inverse_apply(s.transpose(1, 2, 0)),
        v=t.inverse_apply(vh.transpose(2, 1, 0)),
    )


def tube_energies(a: np.ndarray, t: OrthogonalTransform) -> np.ndarray:
    """||S(i,i,:)||_F for every diagonal tube of the t-SVD.

    The transform is orthogonal, so the energy of tube i equals the l2 norm
    of the i-th singular values collected across transformed slices.
    """
    return np.linalg.norm(slice_singular_values(a, t), axis=0)


def tubal_rank(a: np.ndarray, t: OrthogonalTransform, tol: float = DEFAULT_RANK_TOL) -> int:
    if tol < 0:
        raise ValueError("tol must be >= 0")
    e = tube_energies(a, t)
    total = np.linalg.norm(e)
    if total == 0.0:
        return 0
    return int(np.count_nonzero(e > tol * total))


def multi_rank(a: np.ndarray, t: OrthogonalTransform, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Rank of each transformed frontal slice at the same relative tolerance."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    sig = slice_singular_values(a, t)
    total = np.linalg.norm(sig)
    if total == 0.0:
        return np.zeros(sig.shape[0], dtype=int)
    return np.count_nonzero(sig > tol * total, axis=1)


def truncate(a: np.ndarray, t: OrthogonalTransform, r: int) -> np.ndarray:
    """Optimal tubal-rank-r approximation: keep the top-r singular triplets
    of every transformed slice."""
    a = as_tensor3(a)
    m, n, _ = a.shape
    if not 1 <= r <= min(m, n):
        raise RankOutOfRange(f"rank {r} outside [1, {min(m, n)}]")
    if r == min(m, n):
        return a.copy()
    _, (u, sig, vh) = _slice_svds(a, t, full=False)
    kept = (u[:, :, :r] * sig[:, None, :r]) @ vh[:, :r, :]
    return t.inverse_apply(kept.transpose(1, 2, 0))


def truncation_error(a: np.ndarray, t: OrthogonalTransform, r: int) -> float:
    """Exact F-norm error of truncate(a, t, r): the root of the summed
    squares of the discarded transformed-domain singular values."""
    a = as_tensor3(a)
    if not 1 <= r <= min(a.shape[0], a.shape[1]):
        raise RankOutOfRange(f"rank {r} outside [1, {min(a.shape[0], a.shape[1])}]")
    sig = slice_singular_values(a, t)
    return float(np.sqrt(np.sum(sig[:, r:] ** 2)))


def stable_rank(a: np.ndarray, t: OrthogonalTransform) -> float:
    """Squared F-to-spectral norm ratio of the block-diagonalized tensor."""
    f = fro_norm(a)
    if f == 0.0:
        raise ZeroTensor("stable rank undefined for the zero tensor")
    sig = slice_singular_values(a, t)
    top = float(sig.max())
    return float((f / top) ** 2)
