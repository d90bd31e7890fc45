"""Format snapping: frozen examples, brute-force oracle, and properties.

The oracle below enumerates every representable value of a block's grid and
picks the nearest one (ties to the even code). It shares only the scale
convention with the implementation; rounding, clamping and reconstruction
are derived independently, so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np
import pytest

from oracles import _scale_exp, oracle_bfp, oracle_fixed

from stashq.formats import (
    NumberFormat,
    max_abs_error_bound,
    parse_format,
    quantize_tensor,
    snap_bfp,
    snap_fixed,
    storage_bits,
)


# ---------------------------------------------------------------- frozen

def test_fixed_two_bit_grid() -> None:
    block = snap_fixed([0.6, -0.6], 2)
    assert block.values.tolist() == [0.5, -0.5]
    assert block.exponent == 0  # scale 1, grid {-0.5, 0, 0.5}


def test_fixed_exactly_representable_values_survive() -> None:
    block = snap_fixed([-0.5, 0.25, 0.0], 8)
    assert block.values.tolist() == [-0.5, 0.25, 0.0]
    assert block.exponent == 0


def test_fixed_tie_rounds_to_even_code() -> None:
    # max 0.9 -> scale 1, step 1/8; 3/16 is exactly between codes 1 and 2.
    block = snap_fixed([3 / 16, 0.9], 4)
    assert block.values.tolist() == [0.25, 0.875]


def test_bfp_four_bit_example() -> None:
    x = [3.0, 1.0, -0.49, 0.1] + [0.0] * 12
    block = snap_bfp(x, NumberFormat.bfp(4))
    assert block.exponent == 1  # step 0.5
    assert block.values[:4].tolist() == [3.0, 1.0, -0.5, 0.0]
    assert np.all(block.values[4:] == 0.0)


def test_bfp_tie_rounds_to_even_code() -> None:
    x = [3.0, 0.75] + [0.0] * 14
    block = snap_bfp(x, NumberFormat.bfp(4))
    assert block.values[1] == 1.0  # tie between 0.5 and 1.0 -> even code 2


def test_bfp_all_ones_exact() -> None:
    block = snap_bfp(np.ones(16), NumberFormat.bfp(4, exponent_bits=4))
    assert block.exponent == 0  # step 0.25, 1.0 = 4 * step
    assert np.all(block.values == 1.0)


def test_bfp_zero_box_takes_range_minimum_exponent() -> None:
    block = snap_bfp(np.zeros(16), NumberFormat.bfp(4, exponent_bits=8))
    assert block.exponent == -127
    assert np.all(block.values == 0.0)


def test_fixed_zero_block() -> None:
    block = snap_fixed(np.zeros(5), 8)
    assert np.all(block.values == 0.0)
    assert block.exponent == 0


def test_error_bound_frozen_values() -> None:
    assert max_abs_error_bound(NumberFormat.fixed(8), [0.5, -0.25, 0.0]) == 1 / 256
    x = [3.0, 1.0, -0.49, 0.1] + [0.0] * 12
    assert max_abs_error_bound(NumberFormat.bfp(4), x) == 0.25
    assert max_abs_error_bound(NumberFormat.reference(), [1.0, 2.0]) == 0.0
    assert max_abs_error_bound(NumberFormat.fixed(8), np.zeros(3)) == 0.0


def test_storage_bits() -> None:
    assert storage_bits(NumberFormat.fixed(16), 1024) == 16384
    assert storage_bits(NumberFormat.bfp(16, 8, 16), 17) == 17 * 16 + 2 * 8
    assert storage_bits(NumberFormat.reference(), 10) == 320
    assert storage_bits(NumberFormat.bfp(4), 0) == 0


def test_token_round_trip() -> None:
    for token in ("ref", "fixed:16", "bfp:4", "fixed:2", "bfp:32"):
        assert parse_format(token).token == token
    assert parse_format(" BFP:8 ") == NumberFormat.bfp(8)
    for bad in ("float:16", "fixed", "bfp:x", "fixed:1", "fixed:64", ""):
        with pytest.raises(ValueError):
            parse_format(bad)


# ---------------------------------------------------------------- oracle

def test_fixed_matches_oracle_randomized() -> None:
    rng = np.random.default_rng(11)
    for _ in range(400):
        bits = int(rng.integers(2, 9))
        n = int(rng.integers(1, 25))
        x = rng.standard_normal(n) * 10.0 ** rng.integers(-3, 4)
        want, e_want = oracle_fixed(x, bits)
        got = snap_fixed(x, bits)
        assert got.exponent == e_want
        np.testing.assert_array_equal(got.values, want)


def test_bfp_matches_oracle_randomized() -> None:
    rng = np.random.default_rng(12)
    fmt_cache = {}
    for _ in range(400):
        bits = int(rng.integers(2, 9))
        n = int(rng.integers(1, 17))
        x = rng.standard_normal(n) * 10.0 ** rng.integers(-3, 4)
        want, e_want = oracle_bfp(x, bits)
        fmt = fmt_cache.setdefault(bits, NumberFormat.bfp(bits))
        got = snap_bfp(x, fmt)
        assert got.exponent == e_want
        np.testing.assert_array_equal(got.values, want)


# ------------------------------------------------------------ properties

def test_idempotence_randomized() -> None:
    rng = np.random.default_rng(13)
    for _ in range(300):
        bits = int(rng.integers(2, 17))
        x = rng.standard_normal(16) * 2.0 ** rng.integers(-20, 21)
        once = snap_fixed(x, bits).values
        np.testing.assert_array_equal(snap_fixed(once, bits).values, once)
        fmt = NumberFormat.bfp(bits)
        once_b = snap_bfp(x, fmt).values
        np.testing.assert_array_equal(snap_bfp(once_b, fmt).values, once_b)


def test_error_bound_holds_randomized() -> None:
    rng = np.random.default_rng(14)
    for _ in range(300):
        bits = int(rng.integers(2, 13))
        x = rng.standard_normal(24) * 2.0 ** rng.integers(-8, 9)
        err = np.max(np.abs(snap_fixed(x, bits).values - x))
        assert err <= max_abs_error_bound(NumberFormat.fixed(bits), x)
        fmt = NumberFormat.bfp(bits)
        xb = x[:16]
        err_b = np.max(np.abs(snap_bfp(xb, fmt).values - xb))
        assert err_b <= max_abs_error_bound(fmt, xb)


def test_sign_symmetry_and_zero_preservation() -> None:
    rng = np.random.default_rng(15)
    for _ in range(100):
        x = rng.standard_normal(16)
        x[rng.integers(0, 16)] = 0.0
        for snap in (
            lambda v: snap_fixed(v, 5).values,
            lambda v: snap_bfp(v, NumberFormat.bfp(5)).values,
        ):
            pos, neg = snap(x), snap(-x)
            np.testing.assert_array_equal(neg, -pos)
            assert np.all(pos[x == 0.0] == 0.0)


def test_monotone_refinement_with_pinned_exponent() -> None:
    # More mantissa bits on the same scale never increase the worst error.
    rng = np.random.default_rng(16)
    for _ in range(100):
        x = rng.standard_normal(16)
        e = _scale_exp(float(np.max(np.abs(x))))
        prev = np.inf
        for bits in (2, 3, 4, 6, 8, 12, 16):
            err = np.max(np.abs(snap_fixed(x, bits, scale_exponent=e).values - x))
            assert err <= prev + 1e-18
            prev = err
        prev = np.inf
        for bits in (2, 3, 4, 6, 8, 12, 16):
            fmt = NumberFormat.bfp(bits)
            err = np.max(np.abs(snap_bfp(x, fmt, shared_exponent=e - 1).values - x))
            assert err <= prev + 1e-18
            prev = err


def test_exponent_saturation() -> None:
    huge = np.full(16, 1e300)
    block = snap_bfp(huge, NumberFormat.bfp(4, exponent_bits=8))
    assert block.exponent == 128  # biased range tops out
    assert np.all(block.values == 7 * 2.0 ** (128 - 2))  # q_max on the widest grid
    tiny = np.full(16, 1e-300)
    block = snap_bfp(tiny, NumberFormat.bfp(4, exponent_bits=8))
    assert block.exponent == -127
    assert np.all(block.values == 0.0)  # flushed to zero below the range


# ------------------------------------------------------- tensor plumbing

def test_quantize_tensor_reference_is_identity() -> None:
    x = np.random.default_rng(17).standard_normal((3, 5))
    out = quantize_tensor(x, NumberFormat.reference())
    np.testing.assert_array_equal(out, x)


def test_quantize_tensor_fixed_uses_one_scale() -> None:
    x = np.array([[0.6, -0.6], [0.1, 0.0]])
    out = quantize_tensor(x, NumberFormat.fixed(2))
    np.testing.assert_array_equal(out, [[0.5, -0.5], [0.0, 0.0]])


def test_quantize_tensor_bfp_boxes_along_last_axis() -> None:
    fmt = NumberFormat.bfp(4, box_size=4)
    x = np.array([[3.0, 1.0, -0.49, 0.1], [0.01, 0.02, -0.015, 0.0]])
    out = quantize_tensor(x, fmt)
    np.testing.assert_array_equal(out[0], snap_bfp(x[0], fmt).values)
    np.testing.assert_array_equal(out[1], snap_bfp(x[1], fmt).values)


def test_quantize_tensor_partial_trailing_box() -> None:
    fmt = NumberFormat.bfp(4, box_size=16)
    rng = np.random.default_rng(18)
    x = rng.standard_normal((3, 21))  # one full box plus a partial one per row
    out = quantize_tensor(x, fmt)
    assert out.shape == x.shape
    for row_in, row_out in zip(x, out):
        np.testing.assert_array_equal(row_out[:16], snap_bfp(row_in[:16], fmt).values)
        np.testing.assert_array_equal(row_out[16:], snap_bfp(row_in[16:], fmt).values)


def test_non_finite_rejected() -> None:
    with pytest.raises(ValueError):
        snap_fixed([1.0, np.nan], 8)
    with pytest.raises(ValueError):
        snap_bfp([np.inf] + [0.0] * 15, NumberFormat.bfp(4))
    with pytest.raises(ValueError):
        quantize_tensor(np.array([1.0, -np.inf]), NumberFormat.fixed(8))


def test_box_and_width_validation() -> None:
    with pytest.raises(ValueError):
        snap_bfp(np.zeros(17), NumberFormat.bfp(4, box_size=16))
    with pytest.raises(ValueError):
        snap_fixed([1.0], 1)
    with pytest.raises(ValueError):
        NumberFormat.bfp(4, exponent_bits=1)
