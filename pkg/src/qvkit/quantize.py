"""Symmetric per-channel weight fake quantization.

For a rank-2 weight matrix W with b-bit signed codes, each output row i
gets an independent scale

    s_i = max_j |W_ij| / q_max,    q_max = 2**(b-1) - 1,

and the fake-quantized (quantize-then-dequantize) value is

    FQ(W)_ij = s_i * clip(round(W_ij / s_i), q_min, q_max),

with round-half-to-even ties and q_min = -2**(b-1). All-zero rows have
s_i = 0 and map to zeros. Every step runs in float32 so results are
bit-reproducible, and the whole operator commutes with row/column
permutations and with sign flips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .containers import Checkpoint, NameFilter, NO_FILTER, as_weight_tensor
from .errors import ValidationError


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width and fixed rounding conventions of the weight quantizer."""

    bits: int = 3
    granularity: str = "per-channel"
    tie_rule: str = "half-to-even"

    def __post_init__(self):
        if self.bits < 2:
            raise ValidationError(f"bits must be >= 2, got {self.bits}")
        if self.granularity != "per-channel":
            raise ValidationError(f"unsupported granularity {self.granularity!r}")
        if self.tie_rule != "half-to-even":
            raise ValidationError(f"unsupported tie rule {self.tie_rule!r}")

    @property
    def q_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def q_max(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def to_meta(self) -> dict[str, str]:
        return {"bits": str(self.bits), "granularity": self.granularity, "tie_rule": self.tie_rule}


@dataclass(frozen=True)
class QuantizedView:
    """Integer codes plus per-row scales; codes * scales reproduces FQ exactly."""

    codes: np.ndarray
    scales: np.ndarray
    spec: QuantSpec = field(default_factory=QuantSpec)

    def dequantize(self) -> np.ndarray:
        return as_weight_tensor(self.scales[:, None] * self.codes.astype(np.float32))


def _require_rank2(W: np.ndarray, op: str) -> np.ndarray:
    W = np.asarray(W, dtype=np.float32)
    if W.ndim != 2:
        raise ValidationError(f"{op} requires a rank-2 tensor, got rank {W.ndim}")
    return W


def channel_scales(W: np.ndarray, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Per-row scales: row max-abs divided by q_max, zero for all-zero rows."""
    W = _require_rank2(W, "channel_scales")
    return np.max(np.abs(W), axis=1) / np.float32(spec.q_max)


def quantize_view(W: np.ndarray, spec: QuantSpec = QuantSpec()) -> QuantizedView:
    """Integer codes and scales for W. Rows with zero scale get all-zero codes."""
    W = _require_rank2(W, "quantize_view")
    scales = channel_scales(W, spec)
    safe = np.where(scales > 0, scales, np.float32(1.0))
    ratio = W / safe[:, None]
    codes = np.clip(np.rint(ratio), spec.q_min, spec.q_max).astype(np.int32)
    codes[scales == 0, :] = 0
    codes.setflags(write=False)
    scales.setflags(write=False)
    return QuantizedView(codes=codes, scales=scales, spec=spec)


def fake_quantize_tensor(W: np.ndarray, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Quantize-then-dequantize round trip for one rank-2 weight tensor."""
    return quantize_view(W, spec).dequantize()


def fake_quantize_checkpoint(
    ckpt: Checkpoint,
    spec: QuantSpec = QuantSpec(),
    name_filter: NameFilter = NO_FILTER,
) -> Checkpoint:
    """Apply fake quantization to every non-excluded rank-2 tensor.

    Rank-1 tensors (biases, norms) and excluded names are copied bitwise;
    only linear-layer weight matrices are targeted.
    """
    out = {}
    for name, tensor in ckpt.entries.items():
        if tensor.ndim == 2 and not name_filter.excludes(name):
            out[name] = fake_quantize_tensor(tensor, spec)
        else:
            out[name] = tensor
    return Checkpoint(out, dict(ckpt.meta))


def ste_apply(W: np.ndarray, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Forward rule of the straight-through estimator.

    The forward value is exactly fake_quantize_tensor(W, spec). The
    backward contract is identity: a trainer must route the gradient
    computed against the returned tensor straight onto W (see
    ste_backward). The true derivative of the round-trip is zero almost
    everywhere, so this is an intentional approximation.
    """
    return fake_quantize_tensor(W, spec)


def ste_backward(grad: np.ndarray) -> np.ndarray:
    """Identity pass-through of the upstream gradient."""
    return grad
