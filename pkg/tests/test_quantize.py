from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qvkit import (
    Checkpoint,
    NameFilter,
    QuantSpec,
    ValidationError,
    channel_scales,
    fake_quantize_checkpoint,
    fake_quantize_tensor,
    quantize_view,
    ste_apply,
    ste_backward,
)

F32_EPS = np.finfo(np.float32).eps

# magnitudes are floored away from the subnormal range: a denormal row scale
# has fixed absolute spacing, which voids every relative-error contract
weight_elems = st.floats(
    min_value=-100.0, max_value=100.0, allow_nan=False, width=32
).map(lambda v: 0.0 if 0 < abs(v) < 1e-30 else v)
weight_matrices = arrays(
    np.float32,
    st.tuples(st.integers(1, 8), st.integers(1, 8)),
    elements=weight_elems,
)
bit_widths = st.sampled_from([2, 3, 4, 8])


def test_spec_integer_range():
    spec = QuantSpec(bits=3)
    assert (spec.q_min, spec.q_max) == (-4, 3)
    assert (QuantSpec(bits=2).q_min, QuantSpec(bits=2).q_max) == (-2, 1)
    with pytest.raises(ValidationError):
        QuantSpec(bits=1)


def test_channel_scales_worked_row():
    s = channel_scales(np.array([[1.0, -0.5, 0.25]], np.float32), QuantSpec(bits=3))
    assert s[0] == np.float32(1.0) / np.float32(3.0)


def test_channel_scales_zero_row():
    s = channel_scales(np.zeros((1, 4), np.float32))
    assert s[0] == 0.0


def test_channel_scales_negative_max():
    s = channel_scales(np.array([[-6.0, 3.0]], np.float32), QuantSpec(bits=3))
    assert s[0] == np.float32(2.0)


def test_fake_quantize_worked_row():
    # -0.5/(1/3) = -1.5 ties to -2 under half-to-even; 0.25/(1/3) = 0.75 rounds to 1
    view = quantize_view(np.array([[1.0, -0.5, 0.25]], np.float32), QuantSpec(bits=3))
    np.testing.assert_array_equal(view.codes, [[3, -2, 1]])
    s = np.float32(1.0) / np.float32(3.0)
    np.testing.assert_array_equal(view.dequantize(), np.array([[s * 3, s * -2, s * 1]], np.float32))


def test_zero_matrix_maps_to_zero():
    out = fake_quantize_tensor(np.zeros((3, 4), np.float32))
    assert not out.any()


def test_rank_check():
    with pytest.raises(ValidationError):
        fake_quantize_tensor(np.zeros(3, np.float32))
    with pytest.raises(ValidationError):
        channel_scales(np.zeros((2, 2, 2), np.float32))


@settings(max_examples=60, deadline=None)
@given(weight_matrices, bit_widths)
def test_error_bound_and_code_range(W, bits):
    spec = QuantSpec(bits=bits)
    view = quantize_view(W, spec)
    out = view.dequantize()
    scales = view.scales
    bound = scales[:, None] / 2 * (1 + 8 * F32_EPS)
    assert np.all(np.abs(out - W) <= bound + np.float32(0.0))
    assert view.codes.min() >= -spec.q_max
    assert view.codes.max() <= spec.q_max


@settings(max_examples=60, deadline=None)
@given(weight_matrices, bit_widths)
def test_code_idempotence(W, bits):
    spec = QuantSpec(bits=bits)
    first = quantize_view(W, spec)
    second = quantize_view(first.dequantize(), spec)
    np.testing.assert_array_equal(first.codes, second.codes)
    np.testing.assert_allclose(second.dequantize(), first.dequantize(), rtol=1e-6, atol=0)


@settings(max_examples=60, deadline=None)
@given(weight_matrices, bit_widths)
def test_max_preservation(W, bits):
    spec = QuantSpec(bits=bits)
    out = fake_quantize_tensor(W, spec)
    row_max_in = np.max(np.abs(W), axis=1)
    row_max_out = np.max(np.abs(out), axis=1)
    ulp = np.spacing(row_max_in.astype(np.float32))
    assert np.all(np.abs(row_max_out - row_max_in) <= 2 * ulp)


@settings(max_examples=60, deadline=None)
@given(weight_matrices, bit_widths, st.randoms(use_true_random=False))
def test_permutation_equivariance_bitwise(W, bits, rnd):
    spec = QuantSpec(bits=bits)
    rows, cols = W.shape
    pr = np.array(rnd.sample(range(rows), rows))
    pc = np.array(rnd.sample(range(cols), cols))
    permuted = W[pr][:, pc]
    left = fake_quantize_tensor(permuted, spec)
    right = fake_quantize_tensor(W, spec)[pr][:, pc]
    assert left.tobytes() == np.ascontiguousarray(right).tobytes()


@settings(max_examples=60, deadline=None)
@given(weight_matrices, bit_widths)
def test_sign_equivariance_exact(W, bits):
    # half-to-even rounding is odd-symmetric, so values match exactly; a
    # zero output only differs from its negation in the sign bit
    spec = QuantSpec(bits=bits)
    assert np.array_equal(fake_quantize_tensor(-W, spec), -fake_quantize_tensor(W, spec))


def test_checkpoint_quantization_targets_rank2_only():
    ckpt = Checkpoint(
        {
            "layers.0.weight": np.array([[1.0, -0.5, 0.25]], np.float32),
            "layers.0.bias": np.array([0.123], np.float32),
        },
        {},
    )
    out = fake_quantize_checkpoint(ckpt)
    assert out.entries["layers.0.bias"].tobytes() == ckpt.entries["layers.0.bias"].tobytes()
    assert out.entries["layers.0.weight"].tobytes() != ckpt.entries["layers.0.weight"].tobytes()


def test_checkpoint_quantization_rank1_only_is_identity(tmp_path):
    ckpt = Checkpoint({"a.bias": np.array([1.0, 2.0], np.float32)}, {"m": "1"})
    out = fake_quantize_checkpoint(ckpt)
    assert out.entries["a.bias"].tobytes() == ckpt.entries["a.bias"].tobytes()


def test_checkpoint_quantization_respects_filter():
    W = np.array([[1.0, -0.5, 0.25]], np.float32)
    ckpt = Checkpoint({"head.weight": W, "layers.0.weight": W}, {})
    out = fake_quantize_checkpoint(ckpt, name_filter=NameFilter.of(["head.*"]))
    assert out.entries["head.weight"].tobytes() == W.tobytes()
    assert out.entries["layers.0.weight"].tobytes() != W.tobytes()


def test_checkpoint_double_quantization_code_idempotent(rng):
    W = rng.normal(size=(8, 8)).astype(np.float32)
    ckpt = Checkpoint({"layers.0.weight": W}, {})
    once = fake_quantize_checkpoint(ckpt)
    twice = fake_quantize_checkpoint(once)
    np.testing.assert_array_equal(
        quantize_view(once.entries["layers.0.weight"]).codes,
        quantize_view(twice.entries["layers.0.weight"]).codes,
    )


# --- straight-through estimator -------------------------------------------


def test_ste_forward_matches_fake_quantize(rng):
    W = rng.normal(size=(4, 5)).astype(np.float32)
    assert ste_apply(W).tobytes() == fake_quantize_tensor(W).tobytes()


def test_ste_backward_is_identity(rng):
    g = rng.normal(size=(4, 5)).astype(np.float32)
    assert ste_backward(g) is g


def test_ste_disagrees_with_true_derivative_on_flat_region():
    # the round trip is piecewise constant: the numerical derivative is 0
    # away from rounding boundaries, while the straight-through rule says 1
    W = np.array([[0.8, 0.4, -0.6]], np.float32)
    h = np.float32(1e-4)
    bumped = W.copy()
    bumped[0, 1] += h
    numerical = (fake_quantize_tensor(bumped) - fake_quantize_tensor(W))[0, 1] / h
    assert numerical == 0.0
    assert ste_backward(np.ones_like(W))[0, 1] == 1.0
    assert numerical != ste_backward(np.ones_like(W))[0, 1]
