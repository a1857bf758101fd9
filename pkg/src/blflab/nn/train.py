"""SGD training with momentum, weight decay, epoch-indexed lr divisors,
and optional inner maximization (PGD-perturbed batches or a KL-driven
perturbation for the trades loss family).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..attacks import AttackConfig, pgd, project
from ..losses import LossSpec, batch_loss_and_gradient, batch_trades_terms
from .model import Model


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 5
    batch_size: int = 64
    lr_schedule: tuple[tuple[int, float], ...] = ()   # divisor applies after that epoch
    adversarial: AttackConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.loss.family == "trades" and self.adversarial is None:
            raise ValueError("trades training needs an attack config for its inner step")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for boundary, divisor in self.lr_schedule:
            if epoch > boundary:
                lr /= divisor
        return lr


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    train_accuracy: float
    lr: float
    gamma: float | None = None


@dataclass
class TrainResult:
    epochs: list[EpochMetrics]
    aborted: bool = False
    abort_reason: str | None = None

    def gamma_trace(self) -> list[float]:
        return [e.gamma for e in self.epochs if e.gamma is not None]


def _trades_perturb(model: Model, x, y, attack: AttackConfig, rng) -> np.ndarray:
    """Inner maximization of KL(softmax(clean) || softmax(adv)) over the ball."""
    probs_clean = model.forward(x).probs
    x_adv = project(x + 0.001 * rng.standard_normal(x.shape), x, attack.epsilon)
    for _ in range(attack.iterations):
        state = model.forward(x_adv)
        grad = model.backward(state, state.probs - probs_clean).input_grad
        x_adv = project(x_adv + attack.step_size * np.sign(grad), x, attack.epsilon)
    return x_adv


def train(model: Model, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Train in place; returns per-epoch metrics.

    A non-finite loss aborts immediately with a diagnostic result instead
    of raising, so a sweep can record the failure and continue.
    """
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training set")

    shuffle_rng, dropout_rng, attack_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)
    )
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    gamma_velocity = 0.0
    result = TrainResult(epochs=[])

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            x, y = images[idx], labels[idx]

            try:
                if cfg.loss.family == "trades":
                    x_adv = _trades_perturb(model, x, y, cfg.adversarial, attack_rng)
                    state_clean = model.forward(x, train=True, rng=dropout_rng)
                    state_adv = model.forward(x_adv, train=True, rng=dropout_rng)
                    loss, d_clean, d_adv = batch_trades_terms(
                        state_clean.logits, state_adv.logits, y, cfg.loss.beta
                    )
                    grads_clean = model.backward(state_clean, d_clean)
                    grads_adv = model.backward(state_adv, d_adv)
                    layer_grads = [
                        [gc + ga for gc, ga in zip(lc, la)]
                        for lc, la in zip(grads_clean.layer_grads, grads_adv.layer_grads)
                    ]
                    gamma_grad = grads_clean.gamma_tilde_grad + grads_adv.gamma_tilde_grad
                else:
                    if cfg.adversarial is not None:
                        x = pgd(model, x, y, cfg.adversarial, rng=attack_rng)
                    loss, grads, _ = model.loss_and_gradients(
                        x, y, cfg.loss, train=True, rng=dropout_rng
                    )
                    layer_grads = grads.layer_grads
                    gamma_grad = grads.gamma_tilde_grad
            except (ValueError, FloatingPointError):
                # Overflowed activations trip the finite-input check; fold
                # that into the same diagnostic abort as a NaN loss.
                result.aborted = True
                result.abort_reason = f"non-finite forward pass at epoch {epoch}"
                return result

            if not np.isfinite(loss):
                result.aborted = True
                result.abort_reason = f"non-finite loss at epoch {epoch}"
                return result
            batch_losses.append(loss)

            flat_grads = [g for per_layer in layer_grads for g in per_layer]
            for i, (p, g) in enumerate(zip(params, flat_grads)):
                velocity[i] = cfg.momentum * velocity[i] + (g + cfg.weight_decay * p)
                p -= lr * velocity[i]
            if model.learnable_gamma:
                gamma_velocity = (
                    cfg.momentum * gamma_velocity
                    + (gamma_grad + cfg.weight_decay * model.gamma_tilde)
                )
                model.gamma_tilde -= lr * gamma_velocity

        result.epochs.append(
            EpochMetrics(
                epoch=epoch,
                mean_loss=float(np.mean(batch_losses)),
                train_accuracy=model.accuracy(images, labels),
                lr=lr,
                gamma=model.gamma if model.learnable_gamma else None,
            )
        )
    return result
