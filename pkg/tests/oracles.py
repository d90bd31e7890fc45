"""Brute-force snapping oracles shared across test modules.

Each oracle enumerates every representable value of a block's grid and
picks the nearest one (ties to the even code).  Only the scale convention
is shared with the library; rounding, clamping and reconstruction are
derived independently, so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np


def _scale_exp(max_abs: float) -> int:
    _, e = np.frexp(max_abs)
    return int(e)


def oracle_fixed(x, bits):
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(np.abs(x)))
    if m == 0.0:
        return np.zeros_like(x), 0
    e = _scale_exp(m)
    q_max = 2 ** (bits - 1) - 1
    codes = np.arange(-q_max, q_max + 1)
    grid = codes * 2.0 ** (e - (bits - 1))
    return _nearest(x, codes, grid), e


def oracle_bfp(x, bits, exponent_bits=8):
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(np.abs(x)))
    bias = 2 ** (exponent_bits - 1) - 1
    if m == 0.0:
        return np.zeros_like(x), -bias
    e = min(max(_scale_exp(m) - 1, -bias), bias + 1)
    q_max = 2 ** (bits - 1) - 1
    codes = np.arange(-q_max, q_max + 1)
    grid = codes * 2.0 ** (e - (bits - 2))
    return _nearest(x, codes, grid), e


def _nearest(x, codes, grid):
    out = np.empty_like(x)
    flat = out.ravel()
    for i, xi in enumerate(x.ravel()):
        dist = np.abs(grid - xi)
        best = dist.min()
        tied = codes[dist == best]
        if len(tied) > 1:
            tied = tied[tied % 2 == 0]
        flat[i] = grid[list(codes).index(tied[0])]
    return out


def oracle_quantize_tensor(t, kind, bits, box_size=16):
    """Whole-tensor snapping: per-tensor for fixed, boxed rows for bfp."""
    t = np.asarray(t, dtype=np.float64)
    if kind == "ref":
        return t.copy()
    if kind == "fixed":
        return oracle_fixed(t, bits)[0]
    flat = t.reshape(-1, t.shape[-1])
    out = np.empty_like(flat)
    for r in range(flat.shape[0]):
        row = flat[r]
        for start in range(0, row.size, box_size):
            box = row[start:start + box_size]
            out[r, start:start + box.size] = oracle_bfp(box, bits)[0]
    return out.reshape(t.shape)


def oracle_quantize_operand_b(w, kind, bits, box_size=16):
    """Weight-side operand [*, K, N] snapped with blocks along K."""
    if kind != "bfp":
        return oracle_quantize_tensor(w, kind, bits, box_size)
    wt = np.swapaxes(np.asarray(w, dtype=np.float64), -1, -2)
    return np.swapaxes(oracle_quantize_tensor(wt, kind, bits, box_size), -1, -2)
