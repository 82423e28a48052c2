"""Dense float64 numerics shared by every other module.

Arrays are plain numpy float64 ndarrays. Everything here is pure: functions
return new arrays and never mutate their inputs. 32-bit floats appear only in
the on-disk block format (see encoders), never in computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NonFiniteError",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "l2_normalize",
    "AdamState",
    "adam_step",
    "Rng",
    "finite_diff_grad",
]


class NonFiniteError(ValueError):
    """A computation received or produced NaN/inf values."""


def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite values")


def _as_float_array(x, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    _check_finite(arr, name)
    return arr, np.isscalar(x) or arr.ndim == 0


def sigmoid(x):
    """Numerically stable logistic function, elementwise.

    Stable over the full float64 range: large negative inputs go through
    exp(x)/(1+exp(x)) so nothing overflows.
    """
    arr, scalar = _as_float_array(x, "x")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if scalar else out


def softplus(x):
    """log(1 + e^x) without overflow: max(x, 0) + log1p(e^-|x|)."""
    arr, scalar = _as_float_array(x, "x")
    out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return float(out) if scalar else out


def log_sigmoid(x):
    """log sigmoid(x), computed as -softplus(-x). Exact for |x| up to ~700."""
    arr, scalar = _as_float_array(x, "x")
    out = -(np.maximum(-arr, 0.0) + np.log1p(np.exp(-np.abs(arr))))
    return float(out) if scalar else out


def l2_normalize(x: np.ndarray, axis: int = -1, eps: float = 0.0) -> np.ndarray:
    """Scale rows (along `axis`) to unit L2 norm.

    Zero rows raise unless a positive eps is supplied, in which case the norm
    is clamped below at eps.
    """
    arr = np.asarray(x, dtype=np.float64)
    _check_finite(arr, "x")
    norms = np.sqrt(np.sum(arr * arr, axis=axis, keepdims=True))
    if eps > 0:
        norms = np.maximum(norms, eps)
    elif np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return arr / norms


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters.

    step counts completed updates; m and v match the parameter vector shape.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Pure: returns new arrays and state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("params/grads shape mismatch")
    _check_finite(grads, "grads")
    if state.m.shape != params.shape:
        if state.step != 0:
            raise ValueError("optimizer state shape does not match params")
        state = AdamState(state.lr, state.beta1, state.beta2, state.eps, 0,
                          np.zeros_like(params), np.zeros_like(params))
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)


# ---------------------------------------------------------------------------
# Counter-based RNG
# ---------------------------------------------------------------------------


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class Rng:
    """Deterministic substream factory over a single 64-bit seed.

    Each (seed, stream label, index) triple keys an independent Philox
    counter-based generator, so mixtures/batches can be drawn out of order or
    in parallel without sharing state. Identical triples always reproduce the
    identical stream.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise ValueError("seed must be an integer")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, label, index: int = 0) -> np.random.Generator:
        mix = _fnv1a64(f"{label}\x1f{int(index)}".encode("utf-8"))
        key = np.array([self.seed, mix], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    The step h must sit in [1e-7, 1e-3]; evaluations must come back finite.
    This is the independent oracle every analytic gradient is checked against,
    so it deliberately shares no code with the model backward passes.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError("step size h must lie in [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "x")
    flat = x.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("objective returned a non-finite value during differencing")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
