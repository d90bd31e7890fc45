"""Value-snapping simulators for narrow storage formats.

Everything in this package computes in float64; "quantizing" a tensor means
snapping each value onto the grid a narrow format could actually represent,
then carrying on in wide arithmetic. No bits are ever packed. Three families:

* ``ref`` -- the identity. Values pass through untouched; storage is
  accounted at 32 bits per element.
* ``fixed:B`` -- fixed point with a per-tensor power-of-two scale. The scale
  is the smallest power of two strictly greater than max|x|, codes are
  signed integers with B-1 magnitude bits, ties round to even, and overflow
  saturates symmetrically at +-(2^(B-1)-1).
* ``bfp:B`` -- block floating point: boxes of ``box_size`` consecutive
  elements share one exponent (floor(log2 max|x|), saturated to the biased
  range of ``exponent_bits``), and each element keeps a signed mantissa with
  B-1 magnitude bits on the grid 2^(e-(B-2)).

Scales and shared exponents are derived with ``np.frexp`` so exact powers of
two land on the intended side of the boundary; no log2 round-off is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumberFormat",
    "QuantizedBlock",
    "parse_format",
    "snap_fixed",
    "snap_bfp",
    "quantize_tensor",
    "storage_bits",
    "max_abs_error_bound",
]

_KINDS = ("ref", "fixed", "bfp")


@dataclass(frozen=True)
class NumberFormat:
    """Descriptor for one storage format.

    ``element_bits`` includes the sign bit, so a B-bit element carries B-1
    magnitude bits. ``exponent_bits`` and ``box_size`` only matter for the
    bfp family. Reference keeps element_bits = 32 purely for storage
    accounting.
    """

    kind: str
    element_bits: int = 32
    exponent_bits: int = 8
    box_size: int = 16

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown format kind {self.kind!r}")
        if self.kind != "ref" and not 2 <= self.element_bits <= 32:
            raise ValueError(
                f"element_bits must be in [2, 32], got {self.element_bits}"
            )
        if self.kind == "bfp":
            if self.exponent_bits < 2:
                raise ValueError("bfp needs at least 2 exponent bits")
            if self.box_size < 1:
                raise ValueError("bfp box_size must be positive")

    @classmethod
    def reference(cls) -> "NumberFormat":
        return cls("ref")

    @classmethod
    def fixed(cls, bits: int) -> "NumberFormat":
        return cls("fixed", bits)

    @classmethod
    def bfp(cls, bits: int, exponent_bits: int = 8, box_size: int = 16) -> "NumberFormat":
        return cls("bfp", bits, exponent_bits, box_size)

    @property
    def is_reference(self) -> bool:
        return self.kind == "ref"

    @property
    def token(self) -> str:
        """Config-file token: ``ref``, ``fixed:16``, ``bfp:4``."""
        if self.kind == "ref":
            return "ref"
        return f"{self.kind}:{self.element_bits}"


def parse_format(token: str) -> NumberFormat:
    """Parse a format token (``ref`` / ``fixed:16`` / ``bfp:4``)."""
    text = token.strip().lower()
    if text == "ref":
        return NumberFormat.reference()
    if ":" not in text:
        raise ValueError(f"malformed format token {token!r}")
    kind, _, bits_text = text.partition(":")
    if kind not in ("fixed", "bfp"):
        raise ValueError(f"unknown format kind in token {token!r}")
    try:
        bits = int(bits_text)
    except ValueError:
        raise ValueError(f"malformed bit width in token {token!r}") from None
    return NumberFormat(kind, bits)


@dataclass(frozen=True)
class QuantizedBlock:
    """Snapped values plus the scale/shared exponent that produced them.

    For fixed, ``exponent`` is the scale exponent (scale = 2**exponent);
    for bfp it is the shared block exponent.
    """

    values: np.ndarray
    exponent: int
    fmt: NumberFormat


def _as_finite_f64(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _scale_exponent(max_abs: float) -> int:
    # frexp: m = f * 2**e with f in [0.5, 1), so 2**e is the smallest power
    # of two strictly above m. Exact for powers of two, unlike log2.
    _, e = np.frexp(max_abs)
    return int(e)


def snap_fixed(x, bits: int, scale_exponent: int | None = None) -> QuantizedBlock:
    """Snap a block of values onto a fixed-point grid.

    The grid is q * 2**(e - bits + 1) for integer codes q in
    [-(2^(bits-1)-1), 2^(bits-1)-1], where 2**e is the smallest power of two
    strictly greater than max|x| (so the largest magnitude is representable
    whenever it is itself a power of two). Rounding is to nearest with ties
    to even; out-of-range codes saturate. An all-zero block snaps to zeros
    with exponent 0. ``scale_exponent`` pins e, for grid-nesting analyses.
    """
    if not 2 <= int(bits) <= 32:
        raise ValueError(f"fixed bit width must be in [2, 32], got {bits}")
    bits = int(bits)
    arr = _as_finite_f64(x, "snap_fixed input")
    max_abs = float(np.max(np.abs(arr)))
    if scale_exponent is None:
        if max_abs == 0.0:
            return QuantizedBlock(np.zeros_like(arr), 0, NumberFormat.fixed(bits))
        e = _scale_exponent(max_abs)
    else:
        e = int(scale_exponent)
    q_max = 2 ** (bits - 1) - 1
    step_exp = e - (bits - 1)
    codes = np.rint(np.ldexp(arr, -step_exp))
    np.clip(codes, -q_max, q_max, out=codes)
    return QuantizedBlock(np.ldexp(codes, step_exp), e, NumberFormat.fixed(bits))


def snap_bfp(x, fmt: NumberFormat, shared_exponent: int | None = None) -> QuantizedBlock:
    """Snap one box of values onto a shared-exponent grid.

    The box shares e = floor(log2 max|x|), saturated to the biased range of
    ``fmt.exponent_bits``; each element becomes an integer code on the grid
    2**(e - (element_bits - 2)) with ties to even and symmetric saturation.
    A trailing partial box (fewer than ``box_size`` elements) is fine: the
    missing elements are treated as zeros, which cannot change max|x|.
    An all-zero box takes the range-minimum exponent and stays zero.
    """
    if fmt.kind != "bfp":
        raise ValueError(f"snap_bfp needs a bfp format, got {fmt.token}")
    arr = _as_finite_f64(x, "snap_bfp input")
    if arr.ndim != 1:
        raise ValueError("snap_bfp consumes a single one-dimensional box")
    if arr.size > fmt.box_size:
        raise ValueError(f"box of {arr.size} exceeds box_size {fmt.box_size}")
    bias = 2 ** (fmt.exponent_bits - 1) - 1
    e_min, e_max = -bias, bias + 1
    max_abs = float(np.max(np.abs(arr)))
    if shared_exponent is None:
        if max_abs == 0.0:
            return QuantizedBlock(np.zeros_like(arr), e_min, fmt)
        e = _scale_exponent(max_abs) - 1  # floor(log2 max|x|), exact
        e = min(max(e, e_min), e_max)
    else:
        e = int(shared_exponent)
    bits = fmt.element_bits
    q_max = 2 ** (bits - 1) - 1
    step_exp = e - (bits - 2)
    codes = np.rint(np.ldexp(arr, -step_exp))
    np.clip(codes, -q_max, q_max, out=codes)
    return QuantizedBlock(np.ldexp(codes, step_exp), e, fmt)


def quantize_tensor(t, fmt: NumberFormat) -> np.ndarray:
    """Snap a whole tensor to ``fmt``, returning a new float64 array.

    Reference passes values through bit-identically. Fixed uses one scale
    for the entire tensor. Bfp boxes run along the last axis -- callers
    arrange for that axis to be the GEMM reduction dimension where the
    operand feeds a product directly. A trailing partial box is padded with
    zeros for the exponent computation only; output shape equals input shape.
    """
    if fmt.kind == "ref":
        return np.asarray(t, dtype=np.float64)
    if fmt.kind == "fixed":
        arr = _as_finite_f64(t, "quantize_tensor input")
        return snap_fixed(arr.ravel(), fmt.element_bits).values.reshape(arr.shape)

    arr = _as_finite_f64(t, "quantize_tensor input")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    last = arr.shape[-1]
    box = fmt.box_size
    n_boxes = -(-last // box)
    flat = arr.reshape(-1, last)
    padded = np.zeros((flat.shape[0], n_boxes * box), dtype=np.float64)
    padded[:, :last] = flat
    boxes = padded.reshape(-1, box)

    bias = 2 ** (fmt.exponent_bits - 1) - 1
    e_min, e_max = -bias, bias + 1
    max_abs = np.max(np.abs(boxes), axis=1)
    _, frexp_e = np.frexp(max_abs)
    exps = np.where(max_abs > 0.0, frexp_e - 1, e_min)
    np.clip(exps, e_min, e_max, out=exps)

    bits = fmt.element_bits
    q_max = 2 ** (bits - 1) - 1
    step_exp = (exps - (bits - 2)).astype(np.int64)
    codes = np.rint(np.ldexp(boxes, -step_exp[:, None]))
    np.clip(codes, -q_max, q_max, out=codes)
    snapped = np.ldexp(codes, step_exp[:, None])
    return snapped.reshape(flat.shape[0], n_boxes * box)[:, :last].reshape(arr.shape)


def storage_bits(fmt: NumberFormat, n_elements: int) -> int:
    """Bits needed to store ``n_elements`` in ``fmt``.

    Reference counts 32 bits per element; fixed counts element_bits each
    (the single scale exponent is negligible and ignored); bfp adds one
    shared exponent per (possibly partial) box.
    """
    if n_elements < 0:
        raise ValueError("n_elements must be non-negative")
    if fmt.kind == "ref":
        return 32 * n_elements
    if fmt.kind == "fixed":
        return fmt.element_bits * n_elements
    n_boxes = -(-n_elements // fmt.box_size)
    return fmt.element_bits * n_elements + fmt.exponent_bits * n_boxes


def max_abs_error_bound(fmt: NumberFormat, block) -> float:
    """Worst-case absolute snapping error for ``block`` under ``fmt``.

    Half a grid step for values inside the representable range, widened by
    the saturation slack max|x| - q_max*step when the block's extreme
    element lands past the largest code. Zero for Reference and for an
    all-zero block.
    """
    if fmt.kind == "ref":
        return 0.0
    arr = _as_finite_f64(block, "max_abs_error_bound input")
    max_abs = float(np.max(np.abs(arr)))
    if max_abs == 0.0:
        return 0.0
    bits = fmt.element_bits
    q_max = 2 ** (bits - 1) - 1
    if fmt.kind == "fixed":
        step_exp = _scale_exponent(max_abs) - (bits - 1)
    else:
        bias = 2 ** (fmt.exponent_bits - 1) - 1
        e = min(max(_scale_exponent(max_abs) - 1, -bias), bias + 1)
        step_exp = e - (bits - 2)
    step = float(np.ldexp(1.0, step_exp))
    return max(0.5 * step, max_abs - q_max * step)
