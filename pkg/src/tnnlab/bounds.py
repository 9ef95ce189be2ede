"""Closed-form generalization-bound evaluators and the compression certificate.

Every evaluator reports the bound's main terms with all unnamed absolute
constants defaulting to 1 (configurable); the numbers are formula shapes,
not certified gap predictions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .adversarial import AttackConfig, LossSpec, attack
from .errors import InvalidInputs
from .network import TNNModel, forward, replace_layers, weight_norms
from .tensor import t_spectral_norm
from .training import project_ranks


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound formulas consume.

    widths is (d_0, ..., d_L); layer_caps are the per-layer F-norm caps and
    head_cap the classifier-norm cap.  decay_scale/decay_rate describe the
    per-slice singular value envelope scale * j^(-rate) when set.
    """

    n_samples: int
    channels: int
    widths: tuple
    layer_caps: tuple
    head_cap: float
    input_cap: float
    radius: float = 0.0
    compat: float = 1.0
    loss_lipschitz: float = 1.0
    loss_range: float = 1.0
    confidence: float = 1.0
    ranks: tuple | None = None
    decay_scale: float | None = None
    decay_rate: float | None = None
    constant: float = 1.0

    def __post_init__(self):
        widths = tuple(int(d) for d in self.widths)
        caps = tuple(float(b) for b in self.layer_caps)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "layer_caps", caps)
        if self.n_samples < 1:
            raise InvalidInputs("n_samples must be >= 1")
        if self.channels < 1:
            raise InvalidInputs("channels must be >= 1")
        if len(widths) < 2:
            raise InvalidInputs("need at least d_0 and d_1")
        if len(caps) != len(widths) - 1:
            raise InvalidInputs("one norm cap per t-product layer required")
        if any(b <= 0 for b in caps) or self.head_cap <= 0:
            raise InvalidInputs("norm caps must be positive")
        if self.input_cap <= 0:
            raise InvalidInputs("input_cap must be positive")
        if self.radius < 0 or self.compat <= 0:
            raise InvalidInputs("radius must be >= 0 and compat > 0")
        if self.loss_lipschitz <= 0 or self.loss_range < 0:
            raise InvalidInputs("loss constants must be positive")
        if self.confidence <= 0:
            raise InvalidInputs("confidence parameter must be > 0")
        if self.ranks is not None:
            ranks = tuple(int(r) for r in self.ranks)
            object.__setattr__(self, "ranks", ranks)
            if len(ranks) != self.depth:
                raise InvalidInputs("one rank per t-product layer required")
            for r, lo, hi in zip(ranks, widths[:-1], widths[1:]):
                if not 1 <= r <= min(lo, hi):
                    raise InvalidInputs(f"rank {r} outside [1, {min(lo, hi)}]")
        if (self.decay_scale is None) != (self.decay_rate is None):
            raise InvalidInputs("decay_scale and decay_rate go together")
        if self.decay_rate is not None:
            if self.decay_scale <= 0:
                raise InvalidInputs("decay_scale must be positive")
            if self.decay_rate <= 0.5:
                raise InvalidInputs("decay_rate must exceed 1/2")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def norm_product(self) -> float:
        return self.head_cap * float(np.prod(self.layer_caps))

    @property
    def output_cap(self) -> float:
        """Bound on any adversarial output: (B_x + xi * C_R) * norm product."""
        return (self.input_cap + self.radius * self.compat) * self.norm_product


def _tail(bi: BoundInputs) -> float:
    return 3.0 * bi.loss_range * math.sqrt(bi.confidence / (2.0 * bi.n_samples))


def standard_gap_bound(bi: BoundInputs) -> float:
    """Clean-risk gap: depth enters only through sqrt(2 log(2(L+1))) + 1."""
    main = (
        bi.loss_lipschitz
        * bi.input_cap
        * bi.norm_product
        / math.sqrt(bi.n_samples)
        * (math.sqrt(2.0 * math.log(2.0 * (bi.depth + 1))) + 1.0)
    )
    return main + _tail(bi)


def adv_gap_bound_full(bi: BoundInputs) -> float:
    """Adversarial gap for unconstrained weights: the complexity radical
    counts all c * d_{l-1} * d_l parameters."""
    params = sum(
        d_in * d_out for d_in, d_out in zip(bi.widths[:-1], bi.widths[1:])
    )
    radical = math.sqrt(bi.channels * params * math.log(3.0 * (bi.depth + 1)))
    main = (
        bi.constant
        * bi.loss_lipschitz
        * bi.output_cap
        / math.sqrt(bi.n_samples)
        * radical
    )
    return main + _tail(bi)


def adv_gap_bound_lowrank(bi: BoundInputs) -> float:
    """Adversarial gap under tubal-rank caps: the radical counts only
    c * r_l * (d_{l-1} + d_l) degrees of freedom."""
    if bi.ranks is None:
        raise InvalidInputs("low-rank bound requires ranks")
    dof = sum(
        r * (d_in + d_out)
        for r, d_in, d_out in zip(bi.ranks, bi.widths[:-1], bi.widths[1:])
    )
    radical = math.sqrt(bi.channels * dof * math.log(9.0 * (bi.depth + 1)))
    main = (
        bi.constant
        * bi.loss_lipschitz
        * bi.output_cap
        / math.sqrt(bi.n_samples)
        * radical
    )
    return main + _tail(bi)


@dataclass(frozen=True)
class DecayBound:
    ranks: tuple            # ranks the bound was evaluated at
    optimal_ranks: tuple    # balanced-tradeoff ranks
    rhat: float             # empirical adversarial L2 distance cap
    e1: float
    e2: float
    bound: float            # general decay bound at `ranks`
    optimal_bound: float    # bound at the balanced ranks


def optimal_decay_ranks(bi: BoundInputs) -> tuple:
    """Rank choice balancing approximation error against covering size:
    r_l = min(ceil((L * V0 * B_out / B_l)^(1/rate)), d_l, d_{l-1})."""
    if bi.decay_rate is None:
        raise InvalidInputs("decay ranks require (decay_scale, decay_rate)")
    out = []
    for b_l, d_in, d_out in zip(bi.layer_caps, bi.widths[:-1], bi.widths[1:]):
        raw = (bi.depth * bi.decay_scale * bi.output_cap / b_l) ** (1.0 / bi.decay_rate)
        out.append(max(1, min(math.ceil(raw), d_in, d_out)))
    return tuple(out)


def _decay_pieces(bi: BoundInputs, ranks: tuple):
    a = bi.decay_rate
    v0 = bi.decay_scale
    bf = bi.output_cap
    log_term = math.log(9.0 * bi.n_samples * bi.depth * bf / math.sqrt(bi.channels))
    rhat = v0 * bf * sum(
        (r + 1.0) ** (-a) / b for r, b in zip(ranks, bi.layer_caps)
    )
    e1 = (
        bi.channels
        * sum(r * (d_in + d_out) for r, d_in, d_out in zip(ranks, bi.widths[:-1], bi.widths[1:]))
        * log_term
        / bi.n_samples
    )
    e2 = (
        bi.channels
        * sum(
            (bi.depth * v0 * bf / b) ** (1.0 / a) * (d_in + d_out)
            for b, d_in, d_out in zip(bi.layer_caps, bi.widths[:-1], bi.widths[1:])
        )
        * log_term
        / bi.n_samples
    )
    return rhat, e1, e2, log_term


def adv_gap_bound_decay(bi: BoundInputs) -> DecayBound:
    """Decay-envelope bound: all pieces (rhat, E1, E2, main sum) evaluated
    at bi.ranks when given, else at the balanced optimal ranks."""
    if bi.decay_rate is None:
        raise InvalidInputs("decay bound requires (decay_scale, decay_rate)")
    a = bi.decay_rate
    bf = bi.output_cap
    opt = optimal_decay_ranks(bi)
    ranks = bi.ranks if bi.ranks is not None else opt
    rhat, e1, e2, log_term = _decay_pieces(bi, ranks)
    frac = 2.0 * a / (2.0 * a + 1.0)
    t_over_n = bi.confidence / bi.n_samples
    main = (
        bf * e1
        + rhat * math.sqrt(e1)
        + e2**frac * (bf ** ((2.0 * a - 1.0) / (2.0 * a + 1.0)) + 1.0)
        + rhat**frac * math.sqrt(e2)
        + (rhat + bi.loss_range / bi.loss_lipschitz) * math.sqrt(t_over_n)
        + (1.0 + bi.confidence * bf) / bi.n_samples
    )
    bound = bi.constant * bi.loss_lipschitz * main

    _, _, e2_opt, _ = _decay_pieces(bi, opt)
    first = bf ** (1.0 - 1.0 / (2.0 * a)) * math.sqrt(
        bi.channels
        * sum(
            (bi.depth * bi.decay_scale / b) ** (1.0 / a) * (d_in + d_out)
            for b, d_in, d_out in zip(bi.layer_caps, bi.widths[:-1], bi.widths[1:])
        )
        * log_term
        / bi.n_samples
    )
    optimal = bi.constant * bi.loss_lipschitz * (
        first
        + e2_opt**frac * (bf ** ((2.0 * a - 1.0) / (2.0 * a + 1.0)) + 1.0)
        + math.sqrt(e2_opt)
        + bi.loss_range / bi.loss_lipschitz * math.sqrt(t_over_n)
        + (1.0 + bi.confidence * bf) / bi.n_samples
    )
    return DecayBound(
        ranks=tuple(ranks),
        optimal_ranks=opt,
        rhat=rhat,
        e1=e1,
        e2=e2,
        bound=bound,
        optimal_bound=optimal,
    )


@dataclass(frozen=True)
class CompressionCertificate:
    compressed: TNNModel
    deltas_fro: tuple        # per-layer ||W - W_r||_F
    deltas_spectral: tuple   # per-layer t-spectral distances
    delta: float             # max F-norm distance
    certificate: float       # delta * B_out * sum(1/B_l)
    spectral_certificate: float
    observed: float          # max |f~ - g~| over the evaluation set


def compress_and_certify(
    model: TNNModel,
    ranks,
    dataset,
    loss: LossSpec,
    cfg: AttackConfig,
) -> CompressionCertificate:
    """Truncate every layer, certify the adversarial output distance, and
    measure the worst observed distance with the shared attack procedure.

    The certificate uses the actual layer norms as the caps and the
    dataset's own input bound; the spectral variant swaps the per-layer
    F-distances for t-spectral distances, which can only tighten it.
    """
    compressed = project_ranks(model, ranks)
    t = model.transform
    deltas_fro = tuple(
        float(np.linalg.norm(w - wr))
        for w, wr in zip(model.layers, compressed.layers)
    )
    deltas_spec = tuple(
        t_spectral_norm(w - wr, t)
        for w, wr in zip(model.layers, compressed.layers)
    )
    norms = weight_norms(model)
    caps = norms["layers"]
    out_cap = (dataset.b_x + cfg.xi * cfg.compat) * norms["product"]
    delta = max(deltas_fro)
    certificate = delta * out_cap * sum(1.0 / b for b in caps)
    spectral_certificate = out_cap * sum(
        ds / b for ds, b in zip(deltas_spec, caps)
    )

    def adv_outputs(m):
        d = attack(m, dataset.x, dataset.y, loss, cfg)
        return dataset.y * forward(m, dataset.x + d)

    observed = float(np.max(np.abs(adv_outputs(model) - adv_outputs(compressed))))
    return CompressionCertificate(
        compressed=compressed,
        deltas_fro=deltas_fro,
        deltas_spectral=deltas_spec,
        delta=delta,
        certificate=certificate,
        spectral_certificate=spectral_certificate,
        observed=observed,
    )
