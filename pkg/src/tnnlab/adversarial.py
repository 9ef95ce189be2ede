"""Margin losses, gradient-based attacks, adversarial risks and margins.

Losses are written in the factored form loss(q) = exp(-f(q)) on the margin
q = y * model(x), with f strictly increasing past b_f and g its inverse
there.  Both built-in losses (exponential, logistic) are nonincreasing in q
with strictly negative derivative, which is what lets every attack below
drop the loss-derivative factor and follow the raw margin gradient.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, NotSeparated
from .network import TNNModel, backward, forward, weight_norms

LOSS_KINDS = ("exponential", "logistic")
ATTACK_KINDS = ("l2_fgm", "fgsm", "l2_pgd", "linf_pgd")

_G_BISECT_HI = 1e6
_G_BISECT_TOL = 1e-10


@dataclass(frozen=True)
class LossSpec:
    """A margin loss with the accessories used by the margin machinery.

    b_g and k are recorded constants (they parameterize the analysis, not
    any computation here).
    """

    kind: str
    b_f: float = 0.0
    b_g: float = 0.0
    k: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind: {self.kind!r}")

    def loss(self, q):
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "exponential":
            return np.exp(-q)
        return np.logaddexp(0.0, -q)

    def loss_prime(self, q):
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "exponential":
            return -np.exp(-q)
        return -1.0 / (1.0 + np.exp(q))

    def f(self, q):
        """-log loss(q)."""
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "exponential":
            return q
        ell = np.logaddexp(0.0, -q)
        # Past ~745 the loss underflows; -log loss(q) ~ q there.
        return np.where(ell > 0.0, -np.log(np.where(ell > 0.0, ell, 1.0)), q)

    def f_prime(self, q):
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "exponential":
            return np.ones_like(q)
        return -self.loss_prime(q) / self.loss(q)

    def g(self, v: float) -> float:
        """Inverse of f on [f(b_f), inf), by monotone bisection for the
        logistic loss (no closed form)."""
        if self.kind == "exponential":
            return float(v)
        lo, hi = self.b_f, _G_BISECT_HI
        if v < float(self.f(lo)):
            raise ValueError(f"g({v}) outside domain [f(b_f), inf)")
        while hi - lo > _G_BISECT_TOL:
            mid = 0.5 * (lo + hi)
            if float(self.f(mid)) < v:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def lipschitz(self, output_bound: float) -> float:
        """Lipschitz constant of the loss given |q| <= output_bound:
        sup f'(q) exp(-f(q)) = |loss'(-output_bound)| for both kinds."""
        return float(-self.loss_prime(-output_bound))

    def range_bound(self, output_bound: float) -> float:
        """Largest loss value attainable with |q| <= output_bound."""
        return float(self.loss(-output_bound))


def exponential_loss() -> LossSpec:
    return LossSpec("exponential", b_f=0.0, b_g=0.0, k=1.0)


def logistic_loss() -> LossSpec:
    return LossSpec("logistic", b_f=0.0, b_g=2.0 * math.log(math.log(2.0) ** -1), k=2.0)


@dataclass(frozen=True)
class AttackConfig:
    """Attack kind, radius, PGD step/iterations, and the compatibility
    constant of the attack norm relative to the F-norm."""

    kind: str
    xi: float
    rho: float = 0.25
    steps: int = 10
    compat: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind: {self.kind!r}")
        if self.xi < 0:
            raise ValueError("attack radius xi must be >= 0")
        if self.kind.endswith("pgd") and (self.steps < 1 or self.rho <= 0):
            raise ValueError("PGD needs steps >= 1 and rho > 0")


def _column_norms(z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ibk,ibk->b", z, z))


def _normalized_margin_step(z: np.ndarray, y: np.ndarray, xi: float) -> np.ndarray:
    """-xi * y * z / ||z||_F column-wise, with zero columns left at zero."""
    norms = _column_norms(z)
    scale = np.where(norms > 0.0, -xi * y / np.where(norms > 0.0, norms, 1.0), 0.0)
    return z * scale[None, :, None]


def _project_l2(delta: np.ndarray, xi: float) -> np.ndarray:
    norms = _column_norms(delta)
    factor = np.where(norms > xi, xi / np.where(norms > 0.0, norms, 1.0), 1.0)
    return delta * factor[None, :, None]


def attack(model: TNNModel, x: np.ndarray, y, loss: LossSpec, cfg: AttackConfig) -> np.ndarray:
    """Perturbations for every input column, inside the configured ball.

    The loss enters the definitions only through the sign of its derivative,
    which is negative for every admissible loss, so the update directions
    reduce to the margin gradient z = df/dx.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (x.shape[1],))
    if cfg.xi == 0.0:
        return np.zeros_like(x)

    if cfg.kind == "l2_fgm":
        z = backward(model, x, 1.0)[2]
        return _normalized_margin_step(z, y, cfg.xi)

    if cfg.kind == "fgsm":
        z = backward(model, x, 1.0)[2]
        return cfg.xi * np.sign(-y[None, :, None] * z)

    delta = np.zeros_like(x)
    for _ in range(cfg.steps):
        z = backward(model, x + delta, 1.0)[2]
        delta = delta + cfg.rho * _normalized_margin_step(z, y, cfg.xi)
        if cfg.kind == "l2_pgd":
            delta = _project_l2(delta, cfg.xi)
        else:
            delta = np.clip(delta, -cfg.xi, cfg.xi)
    return delta


def margins(model: TNNModel, dataset, loss: LossSpec, cfg: AttackConfig) -> np.ndarray:
    """Robust margins y_i * f(x_i + delta_i) for the whole dataset."""
    delta = attack(model, dataset.x, dataset.y, loss, cfg)
    return dataset.y * forward(model, dataset.x + delta)


def adversarial_risk(model: TNNModel, dataset, loss: LossSpec, cfg: AttackConfig) -> float:
    if dataset.n == 0:
        raise EmptyDataset("risk over an empty dataset")
    return float(np.mean(loss.loss(margins(model, dataset, loss, cfg))))


def clean_risk(model: TNNModel, dataset, loss: LossSpec) -> float:
    if dataset.n == 0:
        raise EmptyDataset("risk over an empty dataset")
    return float(np.mean(loss.loss(dataset.y * forward(model, dataset.x))))


@dataclass(frozen=True)
class MarginMetrics:
    margins: np.ndarray      # robust margin per sample
    worst: float             # min robust margin
    normalized_worst: float  # min margin / rho^(L+1)
    smoothed: float          # smoothed normalized robust margin
    rho: float               # aggregate weight norm


def margin_metrics(model: TNNModel, dataset, loss: LossSpec, cfg: AttackConfig) -> MarginMetrics:
    """Per-sample robust margins plus the normalized and smoothed margins.

    Raises NotSeparated while N * adversarial risk >= loss(b_f): the inverse
    g is then evaluated off its domain, meaning the model does not yet fit
    the perturbed training set.
    """
    if dataset.n == 0:
        raise EmptyDataset("margins over an empty dataset")
    q = margins(model, dataset, loss, cfg)
    risk = float(np.mean(loss.loss(q)))
    rho = weight_norms(model)["rho"]
    power = model.depth + 1
    q_min = float(q.min())
    total = dataset.n * risk
    if not total < float(loss.loss(loss.b_f)):
        raise NotSeparated(
            f"N * adv risk = {total:.4g} >= loss(b_f) = "
            f"{float(loss.loss(loss.b_f)):.4g}"
        )
    smoothed = loss.g(math.log(1.0 / total)) / rho**power
    return MarginMetrics(
        margins=q,
        worst=q_min,
        normalized_worst=q_min / rho**power,
        smoothed=smoothed,
        rho=rho,
    )
