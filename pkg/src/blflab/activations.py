"""Scalar bounded functions applied elementwise before softmax.

The star is the bounded logit function (BLF)

    g(z) = 2 * sigmoid(z) * (z + 1 - z * sigmoid(z)) - 1

which is bounded like tanh but, unlike tanh, attains its maximum and
minimum at finite inputs.  The peak location is the root of
f(z) = 2 + z - 2*z*sigmoid(z) inside (2, sqrt(5)+1), and the peak value
equals exactly half the peak location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("identity", "tanh", "sigmoid", "blf", "sine_wave", "single_wave")

# Sign-change bracket for f(z) = 2 + z - 2*z*sigmoid(z): f(2) > 0 > f(sqrt(5)+1).
_BRACKET_LO = 2.0
_BRACKET_HI = math.sqrt(5.0) + 1.0


@dataclass(frozen=True)
class BoundedFn:
    """An elementwise pre-softmax function scaled by gamma > 0."""

    kind: str
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}; choose from {KINDS}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class CriticalPoints:
    """Locations and values of the BLF maximum and minimum (gamma = 1)."""

    z_max: float
    z_min: float
    g_max: float
    g_min: float


def _check_finite(z: np.ndarray) -> None:
    if not np.all(np.isfinite(z)):
        raise ValueError("activation input must be finite")


def sigmoid(z):
    """Numerically stable logistic function 1 / (1 + exp(-z))."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    """log(1 + exp(z)), stable for large |z|; positive for all finite z."""
    z = np.asarray(z, dtype=np.float64)
    _check_finite(z)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(out) if out.ndim == 0 else out


def softmax(z, axis: int = -1):
    """Softmax with max-subtraction; rows sum to 1 without overflow."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax input must be non-empty")
    _check_finite(z)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _blf(z):
    # Algebraic regrouping of 2*(z*s + s - z*s^2) - 1 with a single sigmoid call.
    s = sigmoid(z)
    return 2.0 * s * (z + 1.0 - z * s) - 1.0


def _blf_deriv(z):
    s = sigmoid(z)
    return 2.0 * s * (1.0 - s) * (2.0 + z - 2.0 * z * s)


def _single_wave(z):
    # sin(z) / (exp(z) + exp(-z))^2, written with exp(-2|z|) to avoid overflow.
    q = np.exp(-2.0 * np.abs(z))
    return np.sin(z) * q / (1.0 + q) ** 2


def _single_wave_deriv(z):
    q = np.exp(-2.0 * np.abs(z))
    packet = q / (1.0 + q) ** 2
    return packet * (np.cos(z) - 2.0 * np.tanh(z) * np.sin(z))


_EVAL = {
    "identity": lambda z: z,
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "blf": _blf,
    "sine_wave": np.sin,
    "single_wave": _single_wave,
}

_DERIV = {
    "identity": np.ones_like,
    "tanh": lambda z: 1.0 - np.tanh(z) ** 2,
    "sigmoid": lambda z: sigmoid(z) * (1.0 - sigmoid(z)),
    "blf": _blf_deriv,
    "sine_wave": np.cos,
    "single_wave": _single_wave_deriv,
}


def evaluate(fn: BoundedFn, z):
    """gamma * g(z), elementwise.  Scalar in, scalar out."""
    arr = np.asarray(z, dtype=np.float64)
    _check_finite(arr)
    out = fn.gamma * _EVAL[fn.kind](arr)
    return float(out) if out.ndim == 0 else out


def derivative(fn: BoundedFn, z):
    """gamma * g'(z), elementwise; matches central finite differences of evaluate."""
    arr = np.asarray(z, dtype=np.float64)
    _check_finite(arr)
    out = fn.gamma * _DERIV[fn.kind](arr)
    return float(out) if out.ndim == 0 else out


def peak_equation(z):
    """f(z) = 2 + z - 2*z*sigmoid(z); its positive root locates the BLF maximum."""
    z = np.asarray(z, dtype=np.float64)
    out = 2.0 + z - 2.0 * z * sigmoid(z)
    return float(out) if out.ndim == 0 else out


def blf_critical_points(tol: float = 1e-10) -> CriticalPoints:
    """Locate the BLF maximum by bisection on (2, sqrt(5)+1).

    Bisection rather than Newton: the bracket is guaranteed to contain a
    sign change, and convergence is unconditional even in the flat region
    past the peak.  The peak value is z_max / 2 exactly (substituting
    f(z_max) = 0 into g collapses it to that identity), so it is computed
    from the root instead of re-evaluating g.  The function is odd, so the
    minimum is the mirror image.
    """
    lo, hi = _BRACKET_LO, _BRACKET_HI
    flo = peak_equation(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fmid = peak_equation(mid)
        if flo * fmid > 0:
            lo, flo = mid, fmid
        else:
            hi = mid
    z_max = 0.5 * (lo + hi)
    return CriticalPoints(z_max=z_max, z_min=-z_max, g_max=z_max / 2.0, g_min=-z_max / 2.0)
