"""Layer stack with a configurable bounded function between the last layer
and softmax.

The stack output is the pre-logit batch; the installed hook maps it
elementwise to logits, scaled by gamma.  Gamma is either fixed or derived
from a trainable scalar through softplus so it stays positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..activations import BoundedFn, derivative, evaluate, sigmoid, softmax, softplus
from ..losses import LossSpec, batch_loss_and_gradient
from .layers import Layer


@dataclass
class ForwardState:
    pre_logits: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    caches: list
    gamma: float


@dataclass
class Gradients:
    input_grad: np.ndarray
    layer_grads: list[list[np.ndarray]]
    gamma_tilde_grad: float


class Model:
    def __init__(
        self,
        layers: list[Layer],
        hook: BoundedFn | None = None,
        learnable_gamma: bool = False,
        gamma_tilde: float = -1.0,
    ):
        self.layers = layers
        self.hook = hook if hook is not None else BoundedFn("identity")
        self.learnable_gamma = learnable_gamma
        self.gamma_tilde = float(gamma_tilde)

    @property
    def gamma(self) -> float:
        if self.learnable_gamma:
            return float(softplus(self.gamma_tilde))
        return self.hook.gamma

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> ForwardState:
        h = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            h, cache = layer.forward(h, train=train, rng=rng)
            caches.append(cache)
        gamma = self.gamma
        logits = evaluate(BoundedFn(self.hook.kind, gamma), h)
        return ForwardState(h, logits, softmax(logits, axis=-1), caches, gamma)

    def backward(self, state: ForwardState, dlogits: np.ndarray) -> Gradients:
        unit = BoundedFn(self.hook.kind, 1.0)
        dpre = dlogits * state.gamma * derivative(unit, state.pre_logits)
        if self.learnable_gamma:
            g_unit = evaluate(unit, state.pre_logits)
            dgt = float(np.sum(dlogits * g_unit)) * float(sigmoid(self.gamma_tilde))
        else:
            dgt = 0.0
        dh = dpre
        layer_grads: list[list[np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dh, pgrads = self.layers[i].backward(dh, state.caches[i])
            layer_grads[i] = pgrads
        return Gradients(dh, layer_grads, dgt)

    def loss_and_gradients(self, x, labels, spec: LossSpec, train: bool = False, rng=None):
        """Mean loss over the batch plus gradients for every parameter and the input."""
        state = self.forward(x, train=train, rng=rng)
        loss, dlogits = batch_loss_and_gradient(spec, state.logits, labels)
        return loss, self.backward(state, dlogits), state

    def per_sample_ce(self, x, labels) -> np.ndarray:
        """Per-sample cross-entropy on one-hot targets, eval mode."""
        state = self.forward(x)
        z = state.logits
        labels = np.asarray(labels)
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
        return lse - z[np.arange(z.shape[0]), labels]

    def ce_input_gradient(self, x, labels):
        """Input gradient of the summed per-sample CE; rows stay independent."""
        state = self.forward(x)
        labels = np.asarray(labels)
        target = np.zeros_like(state.logits)
        target[np.arange(labels.shape[0]), labels] = 1.0
        dlogits = state.probs - target
        return self.backward(state, dlogits).input_grad

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward(x).logits, axis=-1)

    def accuracy(self, x, labels) -> float:
        return float(np.mean(self.predict(x) == np.asarray(labels)))

    def with_hook(self, kind: str) -> "Model":
        """Same layer objects (parameters shared), different pre-softmax hook.

        The effective gamma is frozen at its current value, so a model with
        a learnable scale can be mirrored for attack generation.
        """
        return Model(self.layers, hook=BoundedFn(kind, self.gamma))
