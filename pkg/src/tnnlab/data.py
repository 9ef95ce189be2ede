"""Datasets: IDX binary ingestion, the 3-vs-7 binary task, synthetic data.

A dataset stores its samples as the columns of a single (d, n, c) tensor so
that forward/backward passes and attacks run batched.  Images map to
t-vectors with rows as features and columns as channels.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionMismatch, TruncatedFile
from .network import TNNModel, forward, init_model, replace_layers
from .transform import build_transform
from .tsvd import truncate

_IDX_UBYTE = 0x08
_IDX_FLOAT64 = 0x0E
_IDX_DTYPES = {_IDX_UBYTE: np.dtype(">u1"), _IDX_FLOAT64: np.dtype(">f8")}


@dataclass(frozen=True)
class Dataset:
    """Labeled multi-channel samples with labels in {-1, +1}.

    x has shape (d, n, c): sample i is the t-vector x[:, i:i+1, :].
    b_x is the largest per-sample F-norm.
    """

    x: np.ndarray
    y: np.ndarray
    b_x: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if x.ndim != 3 or x.shape[1] != y.size:
            raise DimensionMismatch(
                f"samples {x.shape} do not match {y.size} labels"
            )
        if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        norms = np.sqrt(np.einsum("ibk,ibk->b", x, x)) if y.size else np.zeros(0)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "b_x", float(norms.max()) if y.size else 0.0)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def c(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[:, idx, :], self.y[idx])


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (big-endian; ubyte or float64 payload)."""
    with open(path, "rb") as fh:
        header = fh.read(4)
        if len(header) != 4:
            raise TruncatedFile("IDX magic cut short")
        zero1, zero2, code, ndim = struct.unpack(">BBBB", header)
        if zero1 != 0 or zero2 != 0 or code not in _IDX_DTYPES:
            raise BadMagic(f"unsupported IDX magic {header!r}")
        raw = fh.read(4 * ndim)
        if len(raw) != 4 * ndim:
            raise TruncatedFile("IDX dimension table cut short")
        dims = struct.unpack(f">{ndim}I", raw)
        dtype = _IDX_DTYPES[code]
        count = int(np.prod(dims)) if dims else 0
        payload = fh.read(dtype.itemsize * count)
        if len(payload) != dtype.itemsize * count:
            raise TruncatedFile(
                f"IDX payload cut short: wanted {count} x {dtype.itemsize} bytes"
            )
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.dtype == np.uint8:
        code, dtype = _IDX_UBYTE, np.dtype(">u1")
    else:
        code, dtype = _IDX_FLOAT64, np.dtype(">f8")
        a = a.astype(np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, a.ndim))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


def load_mnist(images_path, labels_path, classes=(3, 7), limit=None) -> Dataset:
    """Binary task from an IDX image/label pair.

    classes[0] maps to +1, classes[1] to -1; everything else is skipped and
    the first `limit` matches are kept in file order.  ubyte pixels are
    scaled to [0, 1]; float64 payloads are taken as-is (the synthetic
    export path).  Each h x w image becomes an h x 1 x w t-vector: rows are
    features, columns are channels.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise BadMagic(f"image file must be 3-dimensional IDX, got ndim={images.ndim}")
    if labels.ndim != 1:
        raise BadMagic(f"label file must be 1-dimensional IDX, got ndim={labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatch(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    pos, neg = classes
    keep = (labels == pos) | (labels == neg)
    images = images[keep]
    labels = labels[keep]
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    if images.dtype == np.dtype(">u1"):
        x = images.astype(np.float64) / 255.0
    else:
        x = images.astype(np.float64)
    y = np.where(labels == pos, 1.0, -1.0)
    ds = Dataset(x.transpose(1, 0, 2), y)
    if ds.b_x > 1.0:
        warnings.warn(
            f"max sample F-norm is {ds.b_x:.3g} > 1; the margin-dynamics "
            "analysis assumes at least one sample with norm <= 1",
            stacklevel=2,
        )
    return ds


def save_idx_dataset(dataset: Dataset, images_path, labels_path, classes=(3, 7)) -> None:
    """Export to the IDX layout: float64 images (n, d, c), ubyte labels with
    +1 -> classes[0] and -1 -> classes[1].  Round-trips bit-exactly through
    load_mnist with the same classes."""
    write_idx(images_path, dataset.x.transpose(1, 0, 2))
    labels = np.where(dataset.y > 0, classes[0], classes[1]).astype(np.uint8)
    write_idx(labels_path, labels)


def make_teacher(seed: int, d: int, c: int, teacher_rank: int) -> TNNModel:
    """The fixed low-tubal-rank labeling network used by synth_dataset."""
    if teacher_rank < 1:
        raise ValueError("teacher_rank must be >= 1")
    hidden = max(2 * teacher_rank, 4)
    if teacher_rank > min(d, hidden):
        raise ValueError(f"teacher_rank {teacher_rank} > min dims {min(d, hidden)}")
    t = build_transform("dct", c)
    model = init_model((d, hidden, hidden), c, t, seed=np.random.SeedSequence((seed, 1)))
    layers = [truncate(w, t, teacher_rank) for w in model.layers]
    return replace_layers(model, layers)


def synth_dataset(
    seed: int,
    n: int,
    d: int,
    c: int,
    teacher_rank: int,
    teacher_seed: int | None = None,
    margin_percentile: float = 75.0,
) -> Dataset:
    """Seeded synthetic task: unit-norm Gaussian t-vectors labeled by the
    sign of a fixed low-tubal-rank teacher.

    Zero-margin draws are resampled; draws are rejection-balanced so each
    class fills half of n (random teachers are often heavily biased toward
    one sign); and each class keeps only draws whose teacher margin clears
    that class's margin_percentile, so the task carries a margin gap and is
    genuinely learnable at desk scale.  Deterministic given the seed.  Pass
    teacher_seed to draw fresh samples (seed) from an existing task
    (teacher_seed), e.g. for a test split sharing the training teacher.
    """
    teacher = make_teacher(seed if teacher_seed is None else teacher_seed, d, c, teacher_rank)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    want = {1.0: (n + 1) // 2, -1.0: n // 2}
    got = {1.0: 0, -1.0: 0}
    cols, labels = [], []
    draws, max_draws = 0, max(500 * n, 50_000)
    batch = max(4 * n, 1024)
    gap = None
    while len(cols) < n:
        x = rng.standard_normal((d, batch, c))
        x /= np.sqrt(np.einsum("ibk,ibk->b", x, x))[None, :, None]
        out = forward(teacher, x)
        if gap is None:
            # Per-class rejection thresholds, fixed from the first batch so
            # the accepted distribution is stationary and seed-reproducible.
            pos, neg = out[out > 0], out[out < 0]
            gap = {
                1.0: float(np.percentile(pos, margin_percentile)) if pos.size else 0.0,
                -1.0: float(np.percentile(-neg, margin_percentile)) if neg.size else 0.0,
            }
        draws += batch
        for i in range(batch):
            if len(cols) == n:
                break
            if out[i] == 0.0:
                continue
            y = 1.0 if out[i] > 0 else -1.0
            if draws <= max_draws and (abs(out[i]) <= gap[y] or got[y] >= want[y]):
                continue
            cols.append(x[:, i, :])
            labels.append(y)
            got[y] += 1
    return Dataset(np.stack(cols, axis=1), np.asarray(labels))
