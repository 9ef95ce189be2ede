"""t-product neural networks: forward pass and exact reverse-mode gradients.

A model is a chain of t-product layers with entrywise ReLU (acting in the
original domain) topped by a linear head on the vectorized last feature.
All forward/backward code is column-batched: an input of shape (d, b, c)
carries b samples at once, and the t-product handles the batch natively.

ReLU derivative at zero is taken to be 0.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionMismatch, NonPositiveScale, TruncatedFile
from .tensor import TENSOR_MAGIC, as_tensor3, read_tensor
from .transform import OrthogonalTransform

MODEL_MAGIC = b"TNNW"


@dataclass(frozen=True)
class TNNModel:
    """L t-product weight tensors plus a linear classifier vector.

    layers[l] has shape (d_{l+1}, d_l, c); head has length c * d_L and acts
    on the slice-major vectorization of the last layer output.
    """

    layers: tuple
    head: np.ndarray
    transform: OrthogonalTransform

    def __post_init__(self):
        layers = tuple(as_tensor3(w, f"layer {i}") for i, w in enumerate(self.layers))
        if not layers:
            raise DimensionMismatch("model needs at least one t-product layer")
        c = self.transform.c
        for i, w in enumerate(layers):
            if w.shape[2] != c:
                raise DimensionMismatch(f"layer {i} has {w.shape[2]} channels, expected {c}")
            if i > 0 and w.shape[1] != layers[i - 1].shape[0]:
                raise DimensionMismatch(
                    f"layer {i} input width {w.shape[1]} != layer {i - 1} output "
                    f"width {layers[i - 1].shape[0]}"
                )
        head = np.asarray(self.head, dtype=np.float64).reshape(-1)
        if head.size != c * layers[-1].shape[0]:
            raise DimensionMismatch(
                f"head length {head.size} != c*d_L = {c * layers[-1].shape[0]}"
            )
        if not all(np.all(np.isfinite(w)) for w in layers) or not np.all(np.isfinite(head)):
            raise ValueError("model weights must be finite")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "head", head)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].shape[1]

    @property
    def c(self) -> int:
        return self.transform.c

    def widths(self) -> tuple:
        return (self.in_features,) + tuple(w.shape[0] for w in self.layers)


def init_model(widths, c: int, transform: OrthogonalTransform, seed) -> TNNModel:
    """Seeded Gaussian init with per-entry std sqrt(2 / d_out).

    A t-product layer maps E||z||^2 = d_out * var * ||h||^2 regardless of c
    (the transform is orthogonal), and ReLU halves the energy, so this std
    keeps layer-output norms at the input norm on average.  The head gets
    std 1/sqrt(c * d_L), making the initial predictor output O(||x||_F).
    seed is anything default_rng accepts.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for d_out, d_in in zip(widths[1:], widths[:-1]):
        layers.append(rng.standard_normal((d_out, d_in, c)) * np.sqrt(2.0 / d_out))
    head = rng.standard_normal(c * widths[-1]) / np.sqrt(c * widths[-1])
    return TNNModel(tuple(layers), head, transform)


def _check_input(model: TNNModel, x: np.ndarray) -> np.ndarray:
    x = as_tensor3(x, "input")
    if x.shape[0] != model.in_features or x.shape[2] != model.c:
        raise DimensionMismatch(
            f"input shape {x.shape} incompatible with model "
            f"(d={model.in_features}, c={model.c})"
        )
    return x


def _to_cdb(a: np.ndarray) -> np.ndarray:
    """(d, b, c) -> contiguous (c, d, b), the layout all hot loops use."""
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def _to_dbc(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(1, 2, 0))


def _channel_mix(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Apply a c x c matrix along axis 0 of (c, d, b) as one flat GEMM."""
    c, d, b = a.shape
    return (m @ a.reshape(c, d * b)).reshape(c, d, b)


def _transformed_weights(model: TNNModel) -> list:
    m = model.transform.matrix
    return [_channel_mix(m, _to_cdb(w)) for w in model.layers]


def _forward_pass(model: TNNModel, x: np.ndarray, keep: bool):
    """Forward in (c, d, b) layout.

    Returns (tw, hats, masks, last) where hats are the transformed layer
    inputs, masks the strict ReLU gates, and last is the final feature in
    the original domain; tw/hats/masks are empty unless keep is set.
    """
    t = model.transform
    m, mt = t.matrix, t.inverse
    tw = _transformed_weights(model)
    hh = _channel_mix(m, _to_cdb(_check_input(model, x)))
    hats, masks = [], []
    h = None
    for wh in tw:
        z = _channel_mix(mt, np.matmul(wh, hh))
        mask = z > 0.0
        h = z * mask
        if keep:
            hats.append(hh)
            masks.append(mask)
        hh = _channel_mix(m, h)
    return tw, hats, masks, h


def forward_features(model: TNNModel, x: np.ndarray) -> list:
    """All layer outputs [f^(0)=x, f^(1), ..., f^(L)] (post-activation)."""
    x = _check_input(model, x)
    t = model.transform
    m, mt = t.matrix, t.inverse
    feats = [x]
    hh = _channel_mix(m, _to_cdb(x))
    for wh in _transformed_weights(model):
        h = np.maximum(_channel_mix(mt, np.matmul(wh, hh)), 0.0)
        feats.append(_to_dbc(h))
        hh = _channel_mix(m, h)
    return feats


def forward(model: TNNModel, x: np.ndarray) -> np.ndarray:
    """Predictor outputs, one per input column; shape (b,)."""
    _, _, _, h = _forward_pass(model, x, keep=False)
    return model.head @ h.reshape(-1, h.shape[2])


def backward(model: TNNModel, x: np.ndarray, upstream=1.0):
    """Gradients of sum_b upstream[b] * f(x[:, b], W).

    Returns (layer_grads, head_grad, input_grad) where layer_grads sums over
    the batch and input_grad keeps one column per sample.
    """
    x = _check_input(model, x)
    t = model.transform
    m, mt = t.matrix, t.inverse
    b = x.shape[1]
    u = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (b,))

    tw, hats, masks, h = _forward_pass(model, x, keep=True)
    head_grad = h.reshape(-1, b) @ u

    # Head cotangent g[k, i, b] = head[k*d_L + i] * u[b], original domain.
    g = model.head.reshape(model.c, -1)[:, :, None] * u[None, None, :]

    layer_grads = [None] * model.depth
    for l in range(model.depth - 1, -1, -1):
        gh = _channel_mix(m, g * masks[l])                    # (c, d_out, b)
        gwh = np.matmul(gh, hats[l].transpose(0, 2, 1))       # (c, d_out, d_in)
        layer_grads[l] = _to_dbc(_channel_mix(mt, gwh))
        g = _channel_mix(mt, np.matmul(tw[l].transpose(0, 2, 1), gh))

    return layer_grads, head_grad, _to_dbc(g)


def input_gradient(model: TNNModel, x: np.ndarray) -> np.ndarray:
    """d f / d x for every column, shape (d, b, c)."""
    return backward(model, x, 1.0)[2]


def scale_weights(model: TNNModel, a: float) -> TNNModel:
    if not a > 0:
        raise NonPositiveScale(f"scale must be positive, got {a}")
    return TNNModel(
        tuple(a * w for w in model.layers), a * model.head, model.transform
    )


def weight_norms(model: TNNModel) -> dict:
    """Per-layer F-norms, head norm, aggregate rho and the norm product."""
    per_layer = [float(np.linalg.norm(w)) for w in model.layers]
    head = float(np.linalg.norm(model.head))
    rho = float(np.sqrt(sum(f * f for f in per_layer) + head * head))
    product = head * float(np.prod(per_layer))
    return {"layers": per_layer, "head": head, "rho": rho, "product": product}


def replace_layers(model: TNNModel, layers, head=None) -> TNNModel:
    return TNNModel(
        tuple(layers),
        model.head if head is None else head,
        model.transform,
    )


def save_model(path, model: TNNModel) -> None:
    """Checkpoint: magic "TNNW", layer count, widths d_0..d_L and c as
    little-endian u64, then each layer in the tensor format, then the head."""
    widths = model.widths()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", model.depth))
        fh.write(struct.pack(f"<{len(widths)}Q", *widths))
        fh.write(struct.pack("<Q", model.c))
        for w in model.layers:
            m, n, c = w.shape
            fh.write(TENSOR_MAGIC)
            fh.write(struct.pack("<QQQ", m, n, c))
            fh.write(w.transpose(2, 0, 1).astype("<f8").tobytes())
        fh.write(model.head.astype("<f8").tobytes())


def load_model(path, transform: OrthogonalTransform) -> TNNModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise BadMagic(f"expected {MODEL_MAGIC!r}, got {magic!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise TruncatedFile("model header cut short")
        depth = struct.unpack("<Q", raw)[0]
        raw = fh.read(8 * (depth + 2))
        if len(raw) != 8 * (depth + 2):
            raise TruncatedFile("model dimension table cut short")
        *widths, c = struct.unpack(f"<{depth + 2}Q", raw)
        layers = [read_tensor(fh) for _ in range(depth)]
        raw = fh.read(8 * c * widths[-1])
        if len(raw) != 8 * c * widths[-1]:
            raise TruncatedFile("model head cut short")
        head = np.frombuffer(raw, dtype="<f8").copy()
    return TNNModel(tuple(layers), head, transform)
