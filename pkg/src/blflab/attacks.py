"""L-inf attack generation: white-box PGD, gradient-free SPSA, and the
hook-swap transfer procedure for models whose bounded hook flattens
gradients outside its peak interval.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class AttackConfig:
    """Shared knobs for PGD and SPSA.

    spsa_directions is the number of +-1 probe vectors per iteration
    (one shared direction batch per iteration across the minibatch);
    spsa_data_batch optionally chunks the data instead, for the reading
    of "batch size" as a minibatch width.
    """

    kind: str = "pgd"
    epsilon: float = 0.1
    step_size: float = 0.01
    iterations: int = 40
    random_init: bool = True
    restarts: int = 1
    spsa_delta: float = 0.01
    spsa_lr: float = 0.01
    spsa_directions: int = 128
    spsa_data_batch: int | None = None

    def __post_init__(self):
        if self.kind not in ("pgd", "spsa"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.iterations > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive when iterating")
        if self.kind == "spsa" and self.spsa_delta <= 0:
            raise ValueError("spsa_delta must be positive")


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp to the L-inf ball around x, then to the [0,1] box.

    Both are coordinate-wise interval projections, so applying them in
    this order is idempotent.
    """
    x_adv = np.clip(x_adv, x - epsilon, x + epsilon)
    return np.clip(x_adv, 0.0, 1.0)


def _check_inputs(x: np.ndarray) -> None:
    if x.size == 0:
        raise ValueError("empty input batch")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("attack inputs must lie in [0, 1]")


def pgd(model, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterated sign-gradient ascent on CE with projection each step.

    Zero gradient components take no step (np.sign maps 0 to 0).  With
    multiple restarts the per-sample result with the highest final CE wins.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _check_inputs(x)
    if cfg.epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    rng = rng or np.random.default_rng(0)

    best = None
    best_loss = None
    for _ in range(max(1, cfg.restarts)):
        if cfg.random_init:
            x_adv = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon)
        else:
            x_adv = x.copy()
        for _ in range(cfg.iterations):
            grad = model.ce_input_gradient(x_adv, y)
            x_adv = project(x_adv + cfg.step_size * np.sign(grad), x, cfg.epsilon)
        loss = model.per_sample_ce(x_adv, y)
        if best is None:
            best, best_loss = x_adv, loss
        else:
            better = loss > best_loss
            best = np.where(better.reshape((-1,) + (1,) * (x.ndim - 1)), x_adv, best)
            best_loss = np.maximum(loss, best_loss)
    return best


def spsa_gradient_estimate(loss_fn, x, delta, directions, rng):
    """Two-point simultaneous-perturbation estimate of the loss gradient.

    Averages [L(x + delta*v) - L(x - delta*v)] / (2*delta) * v over
    +-1 probe vectors v drawn once per call and shared by every sample of
    the batch.  loss_fn maps a batch to per-sample losses.
    """
    x = np.asarray(x, dtype=np.float64)
    est = np.zeros_like(x)
    for _ in range(directions):
        v = rng.integers(0, 2, size=x.shape[1:]).astype(np.float64) * 2.0 - 1.0
        diff = (loss_fn(x + delta * v) - loss_fn(x - delta * v)) / (2.0 * delta)
        est += diff.reshape((-1,) + (1,) * (x.ndim - 1)) * v
    return est / directions


def spsa(model, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Gradient-free attack: SPSA estimates feed an Adam ascent on CE."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _check_inputs(x)
    if cfg.spsa_delta <= 0:
        raise ValueError("spsa_delta must be positive")
    rng = rng or np.random.default_rng(0)

    if cfg.spsa_data_batch is not None and cfg.spsa_data_batch < x.shape[0]:
        chunks = []
        for lo in range(0, x.shape[0], cfg.spsa_data_batch):
            hi = lo + cfg.spsa_data_batch
            chunks.append(spsa(model, x[lo:hi], y[lo:hi], replace(cfg, spsa_data_batch=None), rng))
        return np.concatenate(chunks, axis=0)

    x_adv = x.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, cfg.iterations + 1):
        # Probe points may leave the box; only the iterate is projected.
        grad = spsa_gradient_estimate(
            lambda batch: model.per_sample_ce(batch, y),
            x_adv,
            cfg.spsa_delta,
            cfg.spsa_directions,
            rng,
        )
        m = _ADAM_B1 * m + (1 - _ADAM_B1) * grad
        v = _ADAM_B2 * v + (1 - _ADAM_B2) * grad * grad
        m_hat = m / (1 - _ADAM_B1**t)
        v_hat = v / (1 - _ADAM_B2**t)
        x_adv = project(x_adv + cfg.spsa_lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS), x, cfg.epsilon)
    return x_adv


@dataclass
class SurrogateAttackResult:
    adv_native: np.ndarray
    adv_surrogate: np.ndarray
    accuracy_native: float
    accuracy_surrogate: float


def surrogate_pgd(
    model,
    x,
    y,
    cfg: AttackConfig,
    surrogate=None,
    surrogate_kind: str = "tanh",
    seed: int = 0,
) -> SurrogateAttackResult:
    """Generate PGD through a monotone-hook twin, evaluate on the true model.

    The twin shares every parameter with the attacked model and differs
    only in the pre-softmax hook, so its gradients never vanish in the
    flat regions past the peak of the true hook.  Both attack runs use the
    same seed, hence identical random starts.
    """
    if surrogate is None:
        surrogate = model.with_hook(surrogate_kind)
    own = model.parameters()
    theirs = surrogate.parameters()
    if len(own) != len(theirs) or any(a.shape != b.shape for a, b in zip(own, theirs)):
        raise ValueError("surrogate parameter shapes do not match the attacked model")

    adv_native = pgd(model, x, y, cfg, rng=np.random.default_rng(seed))
    adv_surrogate = pgd(surrogate, x, y, cfg, rng=np.random.default_rng(seed))
    return SurrogateAttackResult(
        adv_native=adv_native,
        adv_surrogate=adv_surrogate,
        accuracy_native=model.accuracy(adv_native, y),
        accuracy_surrogate=model.accuracy(adv_surrogate, y),
    )


def evaluate_robust_accuracy(
    model,
    x,
    y,
    epsilons,
    cfg: AttackConfig,
    seed: int = 0,
    chunk: int = 256,
) -> list[tuple[float, float]]:
    """Accuracy under attack for each budget; epsilon 0 is the clean pass."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    attack_fn = pgd if cfg.kind == "pgd" else spsa
    out = []
    streams = np.random.SeedSequence(seed).spawn(len(epsilons))
    for eps, stream in zip(epsilons, streams):
        if eps == 0.0:
            out.append((0.0, model.accuracy(x, y)))
            continue
        rng = np.random.default_rng(stream)
        correct = 0
        for lo in range(0, x.shape[0], chunk):
            hi = lo + chunk
            adv = attack_fn(model, x[lo:hi], y[lo:hi], replace(cfg, epsilon=eps), rng=rng)
            correct += int(np.sum(model.predict(adv) == y[lo:hi]))
        out.append((float(eps), correct / x.shape[0]))
    return out
