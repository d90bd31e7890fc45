"""Tour of the two fake-quantized number formats.

Both quantizers snap float64 values onto a narrow grid and hand back the
snapped copy: fixed-point uses one power-of-two scale per tensor, block
floating point shares one exponent per box of 16 values.
"""

import numpy as np

from stashq import (
    NumberFormat,
    max_abs_error_bound,
    quantize_tensor,
    snap_bfp,
    snap_fixed,
    storage_bits,
)

rng = np.random.default_rng(0)
x = rng.normal(size=8) * 0.7

print("input           ", np.array2string(x, precision=4))
for bits in (8, 4, 2):
    block = snap_fixed(x, bits)
    err = np.max(np.abs(block.values - x))
    bound = max_abs_error_bound(NumberFormat.fixed(bits), x)
    print(f"fixed:{bits}  scale 2^{block.exponent:+d}  "
          f"max err {err:.4f} (bound {bound:.4f})")
    print("        ", np.array2string(block.values, precision=4))

# BFP keeps outliers representable through the shared exponent but the
# mantissa grid coarsens for everything else in the same box.
y = np.array([6.0, 0.9, -0.4, 0.05] + [0.2] * 12)
for bits in (16, 8, 4):
    fmt = NumberFormat.bfp(bits)
    block = snap_bfp(y, fmt)
    print(f"bfp:{bits:2d}  shared exponent {block.exponent:+d}  "
          f"first four -> {np.array2string(block.values[:4], precision=4)}")

# a tensor is quantized box-by-box along its last axis
t = rng.normal(size=(4, 32))
tq = quantize_tensor(t, NumberFormat.bfp(4))
print("tensor snap changed", int(np.sum(t != tq)), "of", t.size, "entries")

# snapping is idempotent: a snapped tensor is already on its own grid
assert np.array_equal(quantize_tensor(tq, NumberFormat.bfp(4)), tq)

# storage: bfp pays element bits plus one 8-bit exponent per box of 16
for token_bits in (("fixed", 16), ("bfp", 16), ("bfp", 4), ("ref", 32)):
    kind, bits = token_bits
    fmt = (NumberFormat.reference() if kind == "ref"
           else getattr(NumberFormat, kind)(bits))
    print(f"{kind}:{bits}  {storage_bits(fmt, 1024)} bits for 1024 elements")
