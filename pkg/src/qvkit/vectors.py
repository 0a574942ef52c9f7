"""Quantization-vector extraction, donor patching, and diagnostics.

A quantization vector is the per-tensor weight-space displacement from a
standard fine-tuned checkpoint to its matched quantization-aware-training
checkpoint, restricted to backbone tensors. Adding a scaled donor vector
to a compatible receiver checkpoint ("patching") transplants the donor's
robustness to low-bit weight quantization without touching receiver data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .containers import (
    Checkpoint,
    DEFAULT_HEAD_FILTER,
    NameFilter,
    TensorMap,
    as_weight_tensor,
    checkpoint_axpy,
    checkpoint_diff,
    load_checkpoint,
    save_checkpoint,
)
from .errors import GaugeMismatch, IncompatibleCheckpoints, ValidationError


class PairMetadataWarning(UserWarning):
    """Checkpoint pair metadata (seed/task) disagrees; extraction proceeds."""


@dataclass(frozen=True)
class Provenance:
    donor_task: str
    seed: str
    bits: int


@dataclass
class QuantizationVector:
    """name -> float32 delta tensors plus provenance of the donor run."""

    deltas: TensorMap
    provenance: Provenance

    def __post_init__(self):
        self.deltas = {
            name: as_weight_tensor(t, name) for name, t in sorted(self.deltas.items())
        }

    def names(self) -> list[str]:
        return list(self.deltas)

    def flat(self) -> np.ndarray:
        """Lexicographic concatenation of all deltas as float64."""
        if not self.deltas:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([t.ravel().astype(np.float64) for t in self.deltas.values()])


def extract_qv(
    theta_qat: Checkpoint,
    theta_ft: Checkpoint,
    name_filter: NameFilter = DEFAULT_HEAD_FILTER,
    allow_config_mismatch: bool = False,
    bits: int | None = None,
) -> QuantizationVector:
    """QAT-minus-FT displacement over all non-excluded tensors.

    The two checkpoints must be a matched pair: same run configuration
    except for the quantization-aware flag. When both carry a
    config_hash_noqat meta entry the pairing is enforced (override with
    allow_config_mismatch); seed/task metadata mismatches only warn.
    Provenance bits default to the donor checkpoint's 'bits' metadata.
    """
    if not theta_qat.compatible_with(theta_ft):
        checkpoint_diff(theta_qat, theta_ft)  # raises IncompatibleCheckpoints
    for key in ("seed", "task"):
        a, b = theta_qat.meta.get(key), theta_ft.meta.get(key)
        if a != b:
            warnings.warn(
                f"checkpoint pair disagrees on {key!r}: {a!r} vs {b!r}", PairMetadataWarning
            )
    ha = theta_qat.meta.get("config_hash_noqat")
    hb = theta_ft.meta.get("config_hash_noqat")
    if ha is not None and hb is not None and ha != hb and not allow_config_mismatch:
        raise ValidationError(
            "checkpoint pair was trained with configs that differ beyond the "
            "quantization-aware flag; pass allow_config_mismatch=True to override"
        )

    full = checkpoint_diff(theta_qat, theta_ft)
    deltas = {n: t for n, t in full.items() if not name_filter.excludes(n)}
    if bits is None:
        bits_meta = theta_qat.meta.get("bits")
        if bits_meta is None:
            raise ValidationError(
                "donor checkpoint lacks 'bits' metadata; pass bits= explicitly"
            )
        bits = int(bits_meta)
    prov = Provenance(
        donor_task=theta_qat.meta.get("task", ""),
        seed=theta_qat.meta.get("seed", ""),
        bits=bits,
    )
    return QuantizationVector(deltas, prov)


def patch(theta_r: Checkpoint, qv: QuantizationVector, lam: float) -> Checkpoint:
    """Receiver plus lam times the donor deltas; non-delta tensors copied bitwise.

    Any name or shape mismatch is a hard error: silently skipping tensors
    would apply a different displacement than the one extracted.
    """
    if not np.isfinite(lam):
        raise ValidationError(f"patch coefficient must be finite, got {lam}")
    try:
        return checkpoint_axpy(theta_r, lam, qv.deltas)
    except IncompatibleCheckpoints as exc:
        raise GaugeMismatch(
            f"donor vector does not fit the receiver checkpoint: {exc}"
        ) from exc


def qv_norm(a: QuantizationVector) -> float:
    """Euclidean norm of the flattened deltas, accumulated in float64."""
    return float(np.linalg.norm(a.flat()))


def qv_cosine(a: QuantizationVector, b: QuantizationVector) -> float:
    """Euclidean cosine similarity of two flattened vectors, float64 accumulation."""
    if a.names() != b.names():
        raise IncompatibleCheckpoints(
            sorted(set(b.names()) - set(a.names())),
            sorted(set(a.names()) - set(b.names())),
            [],
        )
    conflicts = [n for n in a.names() if a.deltas[n].shape != b.deltas[n].shape]
    if conflicts:
        raise IncompatibleCheckpoints([], [], conflicts)
    fa, fb = a.flat(), b.flat()
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine undefined for a zero-norm quantization vector")
    return float(np.clip(np.dot(fa, fb) / (na * nb), -1.0, 1.0))


def save_qv(qv: QuantizationVector, path) -> None:
    """Persist as a QVC1 container tagged kind=qv."""
    meta = {
        "kind": "qv",
        "donor_task": qv.provenance.donor_task,
        "seed": qv.provenance.seed,
        "bits": str(qv.provenance.bits),
    }
    save_checkpoint(Checkpoint(dict(qv.deltas), meta), path)


def load_qv(path) -> QuantizationVector:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "qv":
        raise ValidationError(f"{path} is not a quantization-vector container (kind != 'qv')")
    prov = Provenance(
        donor_task=ckpt.meta.get("donor_task", ""),
        seed=ckpt.meta.get("seed", ""),
        bits=int(ckpt.meta.get("bits", "0")),
    )
    return QuantizationVector(dict(ckpt.entries), prov)
