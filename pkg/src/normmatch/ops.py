"""Dense numerical primitives shared by the differentiable blocks.

Every forward helper that participates in training returns a cache tuple
consumed by its matching ``*_backward`` function. Backward functions map the
gradient of the loss w.r.t. the output to gradients w.r.t. the inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "EPS_GUARD",
    "l2_normalize",
    "normalize_rows",
    "normalize_rows_backward",
    "silu",
    "silu_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "logsumexp",
]

# Guard for normalizing (near-)zero vectors: ||v|| below this is treated as
# degenerate and the vector is scaled by 1/EPS_GUARD instead of 1/||v||.
EPS_GUARD = 1e-12


def l2_normalize(v, eps_guard: float = EPS_GUARD) -> np.ndarray:
    """Return ``v / max(||v||_2, eps_guard)``.

    The guard keeps the map total: a zero vector comes back as a zero vector
    instead of NaN.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    return v / max(norm, eps_guard)


def normalize_rows(x, eps_guard: float = EPS_GUARD):
    """Unit-normalize each row of ``x``. Returns (y, cache)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    denom = np.maximum(norms, eps_guard)
    y = x / denom
    active = norms >= eps_guard
    return y, (y, denom, active)


def normalize_rows_backward(cache, gy):
    """Backward of :func:`normalize_rows`.

    Active rows use d(x/||x||) = (g - y (y.g)) / ||x||; guarded rows are the
    linear map x/eps_guard whose Jacobian is I/eps_guard.
    """
    y, denom, active = cache
    dot = np.sum(y * gy, axis=-1, keepdims=True)
    return (gy - np.where(active, dot, 0.0) * y) / denom


def silu(x):
    """x * sigmoid(x). Returns (y, cache)."""
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig, (x, sig)


def silu_backward(cache, gy):
    x, sig = cache
    return gy * sig * (1.0 + x * (1.0 - sig))


def softmax_rows(x):
    """Row-wise softmax along the last axis. Returns (p, cache)."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, p


def softmax_rows_backward(p, gp):
    dot = np.sum(p * gp, axis=-1, keepdims=True)
    return p * (gp - dot)


def logsumexp(x, axis=None, keepdims=False):
    mx = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - mx), axis=axis, keepdims=True)) + mx
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out
