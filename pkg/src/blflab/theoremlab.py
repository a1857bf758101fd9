"""Free-logit optimization: numerical checks of the optimal-logit theory.

Each data point's logit (or pre-logit) vector is treated as a free
variable and driven by plain gradient descent from a zero start.  The
claims under test: plain cross-entropy optima run off to infinity, label
smoothing and logit squeezing optima satisfy closed fixed-point
equations, monotone bounded hooks (tanh, sigmoid) leave pre-logits
divergent, and the BLF hook pins pre-logits at its finite peak.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import BoundedFn, evaluate, derivative, softmax
from .losses import LossSpec, loss_value, loss_gradient

DEFAULT_GRAD_TOL = 1e-8


@dataclass
class Trajectory:
    """Per-step history of a free-logit descent, stored as flat arrays."""

    steps: np.ndarray         # (T,) step indices, 1-based
    pre_logits: np.ndarray    # (T, M)
    logits: np.ndarray        # (T, M)
    loss: np.ndarray          # (T,)

    def final_pre_logits(self) -> np.ndarray:
        return self.pre_logits[-1]

    def final_logits(self) -> np.ndarray:
        return self.logits[-1]

    def linf_norms(self, of: str = "logits") -> np.ndarray:
        vecs = self.logits if of == "logits" else self.pre_logits
        return np.abs(vecs).max(axis=1)


@dataclass
class FreeLogitRun:
    """One free-vector descent: loss family, optional hook, and budget."""

    spec: LossSpec
    activation: BoundedFn | None = None   # None means logits are optimized directly
    m: int = 10
    target_index: int = 0
    steps: int = 10_000
    lr: float | None = None               # None picks a stable default per family/hook
    grad_tol: float = DEFAULT_GRAD_TOL
    record_every: int = 1
    trajectory: Trajectory | None = None
    converged: bool = False
    final_grad_linf: float = field(default=float("nan"))

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        if self.spec.family == "logit_squeezing":
            # curvature is lam-dominated; keep lr * lam well under 1
            return 0.9 / (0.5 + self.spec.lam)
        if self.activation is not None:
            # hook scales curvature by gamma; undo it so small gamma still converges
            return 0.05 / self.activation.gamma
        return 0.5


def optimize_free_logits(run: FreeLogitRun) -> FreeLogitRun:
    """Gradient descent on a single free (pre-)logit vector from zero init.

    Stops early once the gradient L-inf norm falls below run.grad_tol.
    Fills run.trajectory with the recorded steps and returns the run.
    """
    if run.m < 2:
        raise ValueError("need at least two classes")
    if run.steps <= 0:
        raise ValueError("steps must be positive")
    lr = run.resolved_lr()
    if lr <= 0:
        raise ValueError("lr must be positive")

    p = run.spec.target_vector(run.m, run.target_index)
    u = np.zeros(run.m)
    rec_steps, rec_pre, rec_log, rec_loss = [], [], [], []
    grad_linf = float("inf")

    def record(step: int, vec: np.ndarray) -> None:
        z_now = vec if run.activation is None else evaluate(run.activation, vec)
        rec_steps.append(step)
        rec_pre.append(vec.copy())
        rec_log.append(np.asarray(z_now, dtype=np.float64).copy())
        rec_loss.append(loss_value(run.spec, z_now, p))

    record(0, u)
    last_step = 0
    for step in range(1, run.steps + 1):
        if run.activation is None:
            z = u
            grad = loss_gradient(run.spec, z, p)
        else:
            z = evaluate(run.activation, u)
            grad = loss_gradient(run.spec, z, p) * derivative(run.activation, u)
        grad_linf = float(np.abs(grad).max())
        if grad_linf < run.grad_tol:
            break
        u = u - lr * grad
        last_step = step
        if step % run.record_every == 0:
            record(step, u)
    if rec_steps[-1] != last_step:
        record(last_step, u)

    run.trajectory = Trajectory(
        steps=np.asarray(rec_steps, dtype=np.int64),
        pre_logits=np.asarray(rec_pre),
        logits=np.asarray(rec_log),
        loss=np.asarray(rec_loss),
    )
    run.final_grad_linf = grad_linf
    run.converged = grad_linf < run.grad_tol
    return run


@dataclass
class FixedPointReport:
    """Residuals of a closed-form optimality condition at the final iterate."""

    converged: bool
    grad_linf: float
    residuals: dict[str, float]
    bounds_ok: bool = True

    def max_residual(self) -> float:
        return max(self.residuals.values())


def check_label_smoothing_optimum(alpha: float, m: int, run: FreeLogitRun) -> FixedPointReport:
    """At the smoothing optimum the softmax must reproduce the smoothed target.

    Reports |softmax(z*)_t - (1 - alpha)|, the worst off-target deviation
    from alpha/(M-1), and the residual of the log fixed-point equations
      z_t = log((1-alpha)/alpha * sum_{m != t} exp(z_m))
      z_k = log(alpha/(M-1-alpha) * sum_{m != k} exp(z_m)).
    """
    z = run.trajectory.final_logits()
    t = run.target_index
    sm = softmax(z)
    off = np.delete(sm, t)
    ez = np.exp(z)
    total = ez.sum()
    log_rhs_t = np.log((1 - alpha) / alpha * (total - ez[t]))
    residuals = {
        "target_prob": float(abs(sm[t] - (1 - alpha))),
        "off_target_prob": float(np.abs(off - alpha / (m - 1)).max()),
        "log_fixed_point_t": float(abs(z[t] - log_rhs_t)),
    }
    worst_off = 0.0
    for k in range(m):
        if k == t:
            continue
        rhs = np.log(alpha / (m - 1 - alpha) * (total - ez[k]))
        worst_off = max(worst_off, abs(z[k] - rhs))
    residuals["log_fixed_point_off"] = float(worst_off)
    return FixedPointReport(run.converged, run.final_grad_linf, residuals)


def check_logit_squeezing_optimum(lam: float, run: FreeLogitRun) -> FixedPointReport:
    """Squeezing optimum: z_t = (1 - softmax_t)/lam, z_k = -softmax_k/lam.

    Also asserts the box bounds 0 <= z_t <= 1/lam and -1/lam <= z_k <= 0
    that follow from softmax outputs living in [0, 1].
    """
    z = run.trajectory.final_logits()
    t = run.target_index
    sm = softmax(z)
    res_t = abs(z[t] - (1.0 - sm[t]) / lam)
    others = np.delete(np.arange(z.size), t)
    res_off = np.abs(z[others] + sm[others] / lam).max() if others.size else 0.0
    bounds_ok = bool(
        0.0 <= z[t] <= 1.0 / lam and np.all(z[others] >= -1.0 / lam) and np.all(z[others] <= 0.0)
    )
    residuals = {"fixed_point_t": float(res_t), "fixed_point_off": float(res_off)}
    return FixedPointReport(run.converged, run.final_grad_linf, residuals, bounds_ok)


@dataclass
class DivergenceReport:
    """Evidence (not proof) that the optimum lies at infinity."""

    final_linf: float
    threshold: float
    monotone_tail: bool
    diverged: bool
    norms_at: dict[int, float]


def divergence_report(
    run: FreeLogitRun,
    threshold: float = 5.0,
    of: str = "pre_logits",
    probe_steps: tuple[int, ...] = (100, 1000, 10_000),
) -> DivergenceReport:
    """Divergence = final norm above threshold + monotone growth on the tail half."""
    traj = run.trajectory
    norms = traj.linf_norms(of=of)
    tail = norms[len(norms) // 2 :]
    monotone = bool(np.all(np.diff(tail) >= 0))
    final = float(norms[-1])
    at = {}
    for s in probe_steps:
        idx = np.searchsorted(traj.steps, s)
        if idx < len(norms) and traj.steps[idx] == s:
            at[s] = float(norms[idx])
    return DivergenceReport(
        final_linf=final,
        threshold=threshold,
        monotone_tail=monotone,
        diverged=final > threshold and monotone,
        norms_at=at,
    )


@dataclass
class GapReport:
    """L-inf gap between two descents that differ only in their target label."""

    checkpoints: list[int]
    gaps: list[float]
    strictly_increasing: bool


def lipschitz_evidence(
    m: int,
    target_a: int,
    target_b: int,
    checkpoints: tuple[int, ...] = (100, 1000, 10_000),
    lr: float = 0.1,
) -> GapReport:
    """Gap growth between same-loss runs with different labels.

    A bound ||z_A - z_B||_inf <= C * ||x_A - x_B||_inf with x's confined to
    [0,1]^d caps the gap at C; a gap growing without bound as the step
    budget grows is numerical evidence that no finite C exists.
    """
    spec = LossSpec("ce")
    steps = max(checkpoints)
    runs = []
    for t in (target_a, target_b):
        run = FreeLogitRun(spec=spec, m=m, target_index=t, steps=steps, lr=lr, grad_tol=0.0)
        runs.append(optimize_free_logits(run))
    gaps = []
    for s in checkpoints:
        ia = np.searchsorted(runs[0].trajectory.steps, s)
        ib = np.searchsorted(runs[1].trajectory.steps, s)
        za = runs[0].trajectory.logits[ia]
        zb = runs[1].trajectory.logits[ib]
        gaps.append(float(np.abs(za - zb).max()))
    increasing = all(b > a for a, b in zip(gaps, gaps[1:]))
    return GapReport(list(checkpoints), gaps, increasing)
