"""Loss families over logit vectors with exact gradients.

Families: plain cross-entropy on one-hot targets, label smoothing,
logit squeezing (CE plus an L2 penalty on the logits), and a TRADES-style
composite of clean-data CE and a KL term between clean and adversarial
softmax outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import softmax

FAMILIES = ("ce", "label_smoothing", "logit_squeezing", "trades")

# Floor inside logarithms of the KL term; saturated softmax outputs would
# otherwise produce -inf.
_KL_FLOOR = 1e-12


@dataclass(frozen=True)
class TargetVector:
    """Probability vector over classes plus the index of the true class."""

    probs: np.ndarray
    target_index: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or not (0 <= self.target_index < p.size):
            raise ValueError("target index out of range")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("target probabilities must be nonnegative and sum to 1")


def one_hot(num_classes: int, target: int) -> TargetVector:
    p = np.zeros(num_classes)
    p[target] = 1.0
    return TargetVector(p, target)


def smoothed(num_classes: int, target: int, alpha: float) -> TargetVector:
    """Smoothed target: 1 - alpha on the true class, alpha/(M-1) elsewhere."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = np.full(num_classes, alpha / (num_classes - 1))
    p[target] = 1.0 - alpha
    return TargetVector(p, target)


@dataclass(frozen=True)
class LossSpec:
    """Selects a loss family and its hyperparameter.

    alpha: smoothing mass in (0, 1); lam: squeezing strength > 0;
    beta: KL weight >= 0 (zero reduces TRADES to plain CE).
    """

    family: str = "ce"
    alpha: float | None = None
    lam: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}; choose from {FAMILIES}")
        if self.family == "label_smoothing" and not (self.alpha is not None and 0 < self.alpha < 1):
            raise ValueError("label smoothing requires alpha in (0, 1)")
        if self.family == "logit_squeezing" and not (self.lam is not None and self.lam > 0):
            raise ValueError("logit squeezing requires lam > 0")
        if self.family == "trades" and not (self.beta is not None and self.beta >= 0):
            raise ValueError("trades requires beta >= 0")

    def target_vector(self, num_classes: int, target: int) -> TargetVector:
        """Training target for this family: smoothed for label smoothing, one-hot otherwise."""
        if self.family == "label_smoothing":
            return smoothed(num_classes, target, self.alpha)
        return one_hot(num_classes, target)


def _check_dims(z: np.ndarray, p: TargetVector) -> None:
    if z.shape[-1] != p.probs.size:
        raise ValueError(f"logit dimension {z.shape[-1]} != target dimension {p.probs.size}")


def cross_entropy(z, p: TargetVector) -> float:
    """-sum_k p_k log softmax(z)_k via log-sum-exp; no exp overflow."""
    z = np.asarray(z, dtype=np.float64)
    _check_dims(z, p)
    zmax = z.max()
    lse = zmax + np.log(np.sum(np.exp(z - zmax)))
    return float(lse - np.dot(p.probs, z))


def loss_value(spec: LossSpec, z, p: TargetVector) -> float:
    """Per-sample loss; logit squeezing adds (lam/2) * ||z||_2^2."""
    z = np.asarray(z, dtype=np.float64)
    value = cross_entropy(z, p)
    if spec.family == "logit_squeezing":
        value += 0.5 * spec.lam * float(np.dot(z, z))
    return value


def loss_gradient(spec: LossSpec, z, p: TargetVector) -> np.ndarray:
    """Gradient in logit space: softmax(z) - p, plus lam * z for squeezing."""
    z = np.asarray(z, dtype=np.float64)
    _check_dims(z, p)
    grad = softmax(z) - p.probs
    if spec.family == "logit_squeezing":
        grad = grad + spec.lam * z
    return grad


def kl_divergence(p_probs, q_probs) -> float:
    """KL(p || q) over probability vectors, with floored logarithms."""
    p = np.asarray(p_probs, dtype=np.float64)
    q = np.asarray(q_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distribution shapes differ")
    return float(np.sum(p * (np.log(p + _KL_FLOOR) - np.log(q + _KL_FLOOR))))


def trades_loss(z_clean, z_adv, p: TargetVector, beta: float) -> float:
    """CE on clean logits plus beta * KL(softmax(clean) || softmax(adv))."""
    z_clean = np.asarray(z_clean, dtype=np.float64)
    z_adv = np.asarray(z_adv, dtype=np.float64)
    if z_clean.shape != z_adv.shape:
        raise ValueError("clean and adversarial logit shapes differ")
    return cross_entropy(z_clean, p) + beta * kl_divergence(softmax(z_clean), softmax(z_adv))


def batch_target_matrix(spec: LossSpec, num_classes: int, labels) -> np.ndarray:
    """Row-wise target vectors for a label batch."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if spec.family == "label_smoothing":
        target = np.full((n, num_classes), spec.alpha / (num_classes - 1))
        target[np.arange(n), labels] = 1.0 - spec.alpha
    else:
        target = np.zeros((n, num_classes))
        target[np.arange(n), labels] = 1.0
    return target


def batch_loss_and_gradient(spec: LossSpec, z: np.ndarray, labels):
    """Mean loss over a logit batch and its gradient w.r.t. the logits.

    Matches the scalar loss_value/loss_gradient pair row by row, divided
    by the batch size.
    """
    z = np.asarray(z, dtype=np.float64)
    n, m = z.shape
    target = batch_target_matrix(spec, m, labels)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    per_sample = lse - np.sum(target * z, axis=1)
    grad = (softmax(z, axis=1) - target) / n
    if spec.family == "logit_squeezing":
        per_sample = per_sample + 0.5 * spec.lam * np.sum(z * z, axis=1)
        grad = grad + spec.lam * z / n
    return float(per_sample.mean()), grad


def batch_trades_terms(z_clean: np.ndarray, z_adv: np.ndarray, labels, beta: float):
    """Mean TRADES loss over a batch plus gradients for both logit batches."""
    n, m = z_clean.shape
    target = batch_target_matrix(LossSpec("ce"), m, labels)
    pc = softmax(z_clean, axis=1)
    pa = softmax(z_adv, axis=1)
    log_ratio = np.log(pc + _KL_FLOOR) - np.log(pa + _KL_FLOOR)
    kl = np.sum(pc * log_ratio, axis=1)
    zmax = z_clean.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z_clean - zmax), axis=1))
    ce = lse - np.sum(target * z_clean, axis=1)
    loss = float((ce + beta * kl).mean())
    g_clean = ((pc - target) + beta * (pc * log_ratio - pc * kl[:, None])) / n
    g_adv = beta * (pa - pc) / n
    return loss, g_clean, g_adv


def trades_gradients(z_clean, z_adv, p: TargetVector, beta: float):
    """Gradients of trades_loss w.r.t. both logit vectors.

    With pc = softmax(z_clean), pa = softmax(z_adv):
      d/dz_clean = (pc - p) + beta * (pc * log(pc/pa) - pc * KL(pc||pa))
      d/dz_adv   = beta * (pa - pc)
    both obtained by pushing the KL derivative through the softmax Jacobian.
    """
    z_clean = np.asarray(z_clean, dtype=np.float64)
    z_adv = np.asarray(z_adv, dtype=np.float64)
    if z_clean.shape != z_adv.shape:
        raise ValueError("clean and adversarial logit shapes differ")
    _check_dims(z_clean, p)
    pc = softmax(z_clean)
    pa = softmax(z_adv)
    log_ratio = np.log(pc + _KL_FLOOR) - np.log(pa + _KL_FLOOR)
    kl = float(np.sum(pc * log_ratio))
    g_clean = (pc - p.probs) + beta * (pc * log_ratio - pc * kl)
    g_adv = beta * (pa - pc)
    return g_clean, g_adv
