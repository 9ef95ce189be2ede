"""Adversarial training loop with optional low-rank constraints.

Gradient flow is discretized as explicit-Euler GD/SGD.  Each step attacks
the current weights, treats the perturbations as constants, and descends
the batch-mean adversarial loss.  Two constraints are available: tubal-rank
projection (applied between epochs) and the tubal-nuclear-norm proximal map
(applied after every gradient step with threshold lr * lambda).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .adversarial import AttackConfig, LossSpec, attack, clean_risk, margins
from .errors import DivergenceDetected, RankOutOfRange, ZeroTensor
from .network import TNNModel, backward, forward, replace_layers, weight_norms
from .tsvd import stable_rank, truncate


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int
    seed: int
    attack: AttackConfig
    loss: LossSpec
    optimizer: str = "sgd"          # "gd" or "sgd"
    batch_size: int = 80
    ranks: tuple | None = None      # per-layer tubal-rank caps
    reg_lambda: float = 0.0         # tubal nuclear norm weight
    log_every: int = 1
    project_every: int = 1          # epochs between rank projections

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("gd", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "sgd" and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.log_every < 1 or self.project_every < 1:
            raise ValueError("log_every and project_every must be >= 1")


@dataclass(frozen=True)
class TrainLogRecord:
    epoch: int
    adv_risk_train: float
    clean_risk_train: float
    adv_risk_test: float
    clean_risk_test: float
    robust_acc: float
    clean_acc: float
    rho: float
    qhat_m: float
    gamma_tilde: float | None
    fro_layers: tuple
    stable_layers: tuple


LOG_BASE_COLUMNS = (
    "epoch",
    "adv_risk_train",
    "clean_risk_train",
    "adv_risk_test",
    "clean_risk_test",
    "robust_acc",
    "clean_acc",
    "rho",
    "qhat_m",
    "gamma_tilde",
)


def log_columns(num_layers: int) -> list:
    cols = list(LOG_BASE_COLUMNS)
    cols += [f"fro_l{i}" for i in range(1, num_layers + 1)]
    cols += [f"stable_l{i}" for i in range(1, num_layers + 1)]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # shortest round-trip decimal, full 64-bit precision
    return str(v)


def record_row(rec: TrainLogRecord) -> list:
    row = [
        rec.epoch,
        rec.adv_risk_train,
        rec.clean_risk_train,
        rec.adv_risk_test,
        rec.clean_risk_test,
        rec.robust_acc,
        rec.clean_acc,
        rec.rho,
        rec.qhat_m,
        rec.gamma_tilde,
    ]
    row += list(rec.fro_layers)
    row += list(rec.stable_layers)
    return [_fmt(v) for v in row]


def write_log_csv(path, records, num_layers: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(log_columns(num_layers))
        for rec in records:
            writer.writerow(record_row(rec))


def project_ranks(model: TNNModel, ranks) -> TNNModel:
    """Truncate every layer to its tubal-rank cap."""
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != model.depth:
        raise RankOutOfRange(
            f"{len(ranks)} rank caps for {model.depth} layers"
        )
    t = model.transform
    layers = []
    for w, r in zip(model.layers, ranks):
        if not 1 <= r <= min(w.shape[0], w.shape[1]):
            raise RankOutOfRange(
                f"rank {r} outside [1, {min(w.shape[0], w.shape[1])}]"
            )
        layers.append(w if r == min(w.shape[0], w.shape[1]) else truncate(w, t, r))
    return replace_layers(model, layers)


def prox_nuclear(model: TNNModel, tau: float) -> TNNModel:
    """Proximal map of tau * (tubal nuclear norm): soft-threshold the
    transformed-domain singular values of every layer.  tau = 0 is an exact
    identity (no factorization round-trip)."""
    if tau < 0:
        raise ValueError("threshold must be >= 0")
    if tau == 0.0:
        return model
    t = model.transform
    layers = []
    for w in model.layers:
        wh = t.apply(w).transpose(2, 0, 1)
        u, sig, vh = np.linalg.svd(wh, full_matrices=False)
        sig = np.maximum(sig - tau, 0.0)
        out = (u * sig[:, None, :]) @ vh
        layers.append(t.inverse_apply(out.transpose(1, 2, 0)))
    return replace_layers(model, layers)


def _gradient_step(model: TNNModel, xb, yb, cfg: TrainConfig) -> TNNModel:
    delta = attack(model, xb, yb, cfg.loss, cfg.attack)
    x_adv = xb + delta
    q = yb * forward(model, x_adv)
    upstream = cfg.loss.loss_prime(q) * yb / yb.size
    layer_grads, head_grad, _ = backward(model, x_adv, upstream)
    layers = [w - cfg.lr * g for w, g in zip(model.layers, layer_grads)]
    head = model.head - cfg.lr * head_grad
    model = replace_layers(model, layers, head)
    if cfg.reg_lambda > 0.0:
        model = prox_nuclear(model, cfg.lr * cfg.reg_lambda)
    return model


def evaluate(model: TNNModel, train_set, test_set, cfg: TrainConfig, epoch: int) -> TrainLogRecord:
    loss, atk = cfg.loss, cfg.attack
    q_test = margins(model, test_set, loss, atk)
    clean_out = test_set.y * forward(model, test_set.x)
    norms = weight_norms(model)
    power = model.depth + 1
    q_train = margins(model, train_set, loss, atk)
    adv_train = float(np.mean(loss.loss(q_train)))
    qhat_m = float(q_train.min()) / norms["rho"] ** power
    total = train_set.n * adv_train
    if 0.0 < total < float(loss.loss(loss.b_f)):
        gamma = loss.g(math.log(1.0 / total)) / norms["rho"] ** power
    else:
        gamma = None
    try:
        stable = tuple(stable_rank(w, model.transform) for w in model.layers)
    except ZeroTensor as exc:
        # A layer collapsed to zero (e.g. a proximal threshold larger than
        # every singular value): the run is degenerate, not recoverable.
        raise DivergenceDetected(f"epoch {epoch}: layer weights collapsed to zero") from exc
    return TrainLogRecord(
        epoch=epoch,
        adv_risk_train=adv_train,
        clean_risk_train=clean_risk(model, train_set, loss),
        adv_risk_test=float(np.mean(loss.loss(q_test))),
        clean_risk_test=clean_risk(model, test_set, loss),
        robust_acc=float(np.mean(q_test > 0)),
        clean_acc=float(np.mean(clean_out > 0)),
        rho=norms["rho"],
        qhat_m=qhat_m,
        gamma_tilde=gamma,
        fro_layers=tuple(norms["layers"]),
        stable_layers=stable,
    )


def train(model: TNNModel, train_set, test_set, cfg: TrainConfig):
    """Run the training loop; returns (final model, list of log records).

    A record is always written for the initial weights (epoch 0), then every
    log_every epochs and at the last epoch.
    """
    if train_set.d != model.in_features or train_set.c != model.c:
        raise ValueError("training data does not match model dimensions")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 17)))
    records = [evaluate(model, train_set, test_set, cfg, epoch=0)]
    n = train_set.n
    for epoch in range(1, cfg.epochs + 1):
        if cfg.optimizer == "gd":
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [
                order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)
            ]
        try:
            for idx in batches:
                model = _gradient_step(
                    model, train_set.x[:, idx, :], train_set.y[idx], cfg
                )
            if cfg.ranks is not None and epoch % cfg.project_every == 0:
                model = project_ranks(model, cfg.ranks)
        except ValueError as exc:
            # TNNModel construction rejects non-finite weights.
            raise DivergenceDetected(f"epoch {epoch}: {exc}") from exc
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            rec = evaluate(model, train_set, test_set, cfg, epoch)
            if not np.isfinite(rec.adv_risk_train):
                raise DivergenceDetected(
                    f"adversarial risk diverged at epoch {epoch}"
                )
            records.append(rec)
    return model, records
