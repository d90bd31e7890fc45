"""Minimal dense float64 kernels with analytic gradients.

The whole simulator runs in wide precision; narrowness only ever enters
through the format snappers. What lives here is the handful of kernels a
tiny transformer needs, each with a hand-written vector-Jacobian product,
plus a central-difference gradient oracle for checking them.

The one kernel with a reduction, ``gemm``, accumulates strictly in
k-ascending order per output element (compiled with numba, no fastmath),
so results are bit-identical to a naive triple loop and independent of
thread count. BLAS and einsum both reorder the accumulation, which is why
neither is used. Elementwise glue (adds, residuals, scaling, masking) is
plain numpy at full precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numba import njit
from scipy.special import erf

__all__ = [
    "gemm",
    "gemm_vjp",
    "relu",
    "relu_vjp",
    "gelu",
    "gelu_vjp",
    "softmax_rows",
    "softmax_rows_vjp",
    "layer_norm",
    "layer_norm_vjp",
    "cross_entropy",
    "cross_entropy_vjp",
    "finite_difference_grad",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@njit(cache=True)
def _gemm_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # c[t, i, j] = sum_k a[t, i, k] * b[t, k, j], k strictly ascending.
    stack, m, kk = a.shape
    n = b.shape[2]
    c = np.zeros((stack, m, n), dtype=np.float64)
    for t in range(stack):
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for k in range(kk):
                    acc += a[t, i, k] * b[t, k, j]
                c[t, i, j] = acc
    return c


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed k-ascending reduction order.

    Accepts [M, K] @ [K, N], or stacked operands with matching leading
    dimensions ([..., M, K] @ [..., K, N]). Inputs are coerced to
    contiguous float64; the output is always a fresh array.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ValueError(f"gemm needs matching stacked matrices, got {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"gemm shapes do not align: {a.shape} @ {b.shape}")
    lead = a.shape[:-2]
    stack = int(np.prod(lead)) if lead else 1
    out = _gemm_kernel(
        a.reshape(stack, a.shape[-2], a.shape[-1]),
        b.reshape(stack, b.shape[-2], b.shape[-1]),
    )
    return out.reshape(*lead, a.shape[-2], b.shape[-1])


def gemm_vjp(dout: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Gradients of ``gemm(a, b)``: da = dout @ b^T, db = a^T @ dout."""
    da = gemm(dout, np.swapaxes(b, -1, -2))
    db = gemm(np.swapaxes(a, -1, -2), dout)
    return da, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_vjp(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) > 0.0, dout, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) gaussian error linear unit."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_vjp(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dout * (cdf + x * pdf)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_vjp(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    inner = np.sum(dout * out, axis=-1, keepdims=True)
    return out * (dout - inner)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Normalize the last axis to zero mean and unit variance, then affine."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x - mean) * inv_std
    return normalized * gamma + beta


def layer_norm_vjp(dout: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = 1e-5):
    """Returns (dx, dgamma, dbeta); parameter grads sum over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x - mean) * inv_std
    d_norm = dout * gamma
    dx = inv_std * (
        d_norm
        - np.mean(d_norm, axis=-1, keepdims=True)
        - normalized * np.mean(d_norm * normalized, axis=-1, keepdims=True)
    )
    lead = tuple(range(dout.ndim - 1))
    dgamma = np.sum(dout * normalized, axis=lead)
    dbeta = np.sum(dout, axis=lead)
    return dx, dgamma, dbeta


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _check_targets(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(
            f"expected [N, V] logits with [N] targets, got {logits.shape} / {targets.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError("target index out of range")
    return targets


def cross_entropy(logits: np.ndarray, targets: np.ndarray, label_smoothing: float = 0.0) -> float:
    """Mean smoothed negative log-likelihood over rows.

    With smoothing eps, the target distribution is (1 - eps) on the true
    class plus eps/V everywhere, so one-hot-perfect logits give zero loss
    only at eps = 0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = _check_targets(logits, targets)
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError("label_smoothing must be in [0, 1)")
    n, v = logits.shape
    log_probs = _log_softmax(logits)
    picked = log_probs[np.arange(n), targets]
    loss = -(1.0 - label_smoothing) * picked - label_smoothing * np.mean(log_probs, axis=-1)
    return float(np.mean(loss))


def cross_entropy_vjp(logits: np.ndarray, targets: np.ndarray, label_smoothing: float = 0.0):
    """d(mean loss)/d(logits) for a unit upstream gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = _check_targets(logits, targets)
    n, v = logits.shape
    probs = np.exp(_log_softmax(logits))
    target_dist = np.full_like(probs, label_smoothing / v)
    target_dist[np.arange(n), targets] += 1.0 - label_smoothing
    return (probs - target_dist) / n


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5):
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        saved = flat_x[i]
        flat_x[i] = saved + eps
        hi = f(x)
        flat_x[i] = saved - eps
        lo = f(x)
        flat_x[i] = saved
        flat_g[i] = (hi - lo) / (2.0 * eps)
    return grad
