"""Measurement instruments: logit-norm statistics, L-inf operator norms of
linear layers, and loss grids over two random input directions.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .losses import LossSpec, batch_loss_and_gradient
from .nn.layers import Conv2D, Dense
from .nn.model import Model

# Appendix-style grid: offsets from -16/255 to 16/255 in 0.5/255 steps.
SURFACE_EPS_MAX = 16.0 / 255.0
SURFACE_EPS_STEP = 0.5 / 255.0


@dataclass
class LogitStats:
    """Averages of per-sample vector norms, logits and pre-logits alike."""

    mean_l2: float
    mean_linf: float
    mean_prelogit_l2: float
    mean_prelogit_linf: float
    sample_count: int


def logit_stats(model: Model, images: np.ndarray, chunk: int = 512) -> LogitStats:
    if images.shape[0] == 0:
        raise ValueError("empty dataset")
    l2s, linfs, pl2s, plinfs = [], [], [], []
    for lo in range(0, images.shape[0], chunk):
        state = model.forward(images[lo : lo + chunk])
        l2s.append(np.linalg.norm(state.logits, axis=1))
        linfs.append(np.abs(state.logits).max(axis=1))
        pl2s.append(np.linalg.norm(state.pre_logits, axis=1))
        plinfs.append(np.abs(state.pre_logits).max(axis=1))
    return LogitStats(
        mean_l2=float(np.concatenate(l2s).mean()),
        mean_linf=float(np.concatenate(linfs).mean()),
        mean_prelogit_l2=float(np.concatenate(pl2s).mean()),
        mean_prelogit_linf=float(np.concatenate(plinfs).mean()),
        sample_count=int(images.shape[0]),
    )


def linf_operator_norm(layer) -> float:
    """L-inf -> L-inf operator norm of the linear part; bias excluded.

    Dense: max absolute row sum.  Conv: max over output channels of the
    total kernel mass, which equals the max row sum of the lowered matrix
    for any output position whose taps all land in bounds.
    """
    if isinstance(layer, Dense):
        return float(np.abs(layer.weight).sum(axis=0).max())
    if isinstance(layer, Conv2D):
        return float(np.abs(layer.weight).sum(axis=(1, 2, 3)).max())
    raise ValueError(f"operator norm is defined for Dense/Conv2D, not {type(layer).__name__}")


@dataclass
class OperatorNormReport:
    per_layer: list[dict]
    product: float
    conv_average: float | None
    all_layer_average: float | None


def operator_norms(model: Model) -> OperatorNormReport:
    """Per-layer norms plus their product (an upper bound on the stack's
    constant, since pooling/ReLU/flatten are 1-Lipschitz in L-inf)."""
    rows = []
    product = 1.0
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Dense, Conv2D)):
            norm = linf_operator_norm(layer)
            rows.append({"index": i, "kind": type(layer).__name__, "linf_norm": norm})
            product *= norm
    conv = [r["linf_norm"] for r in rows if r["kind"] == "Conv2D"]
    return OperatorNormReport(
        per_layer=rows,
        product=product,
        conv_average=float(np.mean(conv)) if conv else None,
        all_layer_average=float(np.mean([r["linf_norm"] for r in rows])) if rows else None,
    )


@dataclass
class LossSurfaceGrid:
    datapoint_index: int
    direction_seed: int
    epsilon_axis: np.ndarray   # (65,)
    grid: np.ndarray           # (65, 65); [i, j] pairs eps1_i with eps2_j
    clean_loss: float
    max_min_diff: float


def surface_axis(eps_max: float = SURFACE_EPS_MAX, eps_step: float = SURFACE_EPS_STEP) -> np.ndarray:
    half = int(round(eps_max / eps_step))
    return np.arange(-half, half + 1) * eps_step


def loss_surface(
    model: Model,
    x: np.ndarray,
    label: int,
    direction_seed: int,
    datapoint_index: int = 0,
    eps_max: float = SURFACE_EPS_MAX,
    eps_step: float = SURFACE_EPS_STEP,
) -> LossSurfaceGrid:
    """CE over x + eps1*v1 + eps2*v2 for +-1 direction vectors v1, v2.

    Offsets are applied raw (no box clipping), and every cell is evaluated
    as a single-sample forward so the center cell is bit-identical to a
    standalone clean-loss evaluation.  Reusing direction_seed across models
    keeps their grids comparable.
    """
    axis = surface_axis(eps_max, eps_step)
    rng = np.random.default_rng(direction_seed)
    v1 = rng.integers(0, 2, size=x.shape).astype(np.float64) * 2.0 - 1.0
    v2 = rng.integers(0, 2, size=x.shape).astype(np.float64) * 2.0 - 1.0
    spec = LossSpec("ce")
    label_arr = np.array([label])
    grid = np.empty((axis.size, axis.size))
    for i, e1 in enumerate(axis):
        for j, e2 in enumerate(axis):
            point = x + e1 * v1 + e2 * v2
            state = model.forward(point[None, ...])
            grid[i, j], _ = batch_loss_and_gradient(spec, state.logits, label_arr)
    return LossSurfaceGrid(
        datapoint_index=datapoint_index,
        direction_seed=direction_seed,
        epsilon_axis=axis,
        grid=grid,
        clean_loss=float(grid[axis.size // 2, axis.size // 2]),
        max_min_diff=float(grid.max() - grid.min()),
    )


def surface_to_csv(surface: LossSurfaceGrid) -> str:
    """Header row of eps2 values, leading column of eps1 values."""
    out = io.StringIO()
    out.write("eps1_over_eps2," + ",".join(repr(float(e)) for e in surface.epsilon_axis) + "\n")
    for i, e1 in enumerate(surface.epsilon_axis):
        row = ",".join(repr(float(v)) for v in surface.grid[i])
        out.write(f"{float(e1)!r},{row}\n")
    return out.getvalue()


def empirical_linf_gain(fn, x_dim: int, samples: int, rng: np.random.Generator) -> float:
    """Max output L-inf norm of fn over random sign vectors (unit L-inf ball
    extreme points); a lower bound on the true operator norm."""
    best = 0.0
    for _ in range(samples):
        v = rng.integers(0, 2, size=x_dim).astype(np.float64) * 2.0 - 1.0
        best = max(best, float(np.abs(fn(v)).max()))
    return best
