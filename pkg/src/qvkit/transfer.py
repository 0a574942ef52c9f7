"""Donor-to-receiver transfer evaluation: gain metric and the scale sweep.

The transfer gain is the post-quantization Top-1 improvement of the
patched receiver over the unpatched one, both quantized with the same
operator. The sweep picks the patch scale on the validation split from a
fixed ten-point grid (ties break toward the smallest scale) and only then
touches the test split, exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import Checkpoint, DEFAULT_HEAD_FILTER, NameFilter
from .quantize import QuantSpec, fake_quantize_checkpoint
from .tasks import ToyTask
from .trainer import accuracy_on
from .vectors import QuantizationVector, patch

LAMBDA_GRID: tuple[float, ...] = (0.15, 0.3, 0.45, 0.6, 0.75, 0.9, 1.05, 1.2, 1.35, 1.5)


@dataclass(frozen=True)
class SweepResult:
    grid: tuple[float, ...]
    val_acc: tuple[float, ...]
    chosen_lambda: float
    test_delta: float


def transfer_gain(
    theta_r: Checkpoint,
    qv: QuantizationVector,
    lam: float,
    task: ToyTask,
    spec: QuantSpec = QuantSpec(),
    name_filter: NameFilter = DEFAULT_HEAD_FILTER,
) -> float:
    """Quantized Top-1 of the patched receiver minus the unpatched baseline."""
    x, y = task.split("test")
    baseline = accuracy_on(fake_quantize_checkpoint(theta_r, spec, name_filter), x, y)
    patched = accuracy_on(
        fake_quantize_checkpoint(patch(theta_r, qv, lam), spec, name_filter), x, y
    )
    return patched - baseline


def lambda_sweep(
    theta_r: Checkpoint,
    qv: QuantizationVector,
    task: ToyTask,
    spec: QuantSpec = QuantSpec(),
    name_filter: NameFilter = DEFAULT_HEAD_FILTER,
    grid: tuple[float, ...] = LAMBDA_GRID,
) -> SweepResult:
    """Select the patch scale on validation data, then report the test gain.

    The test split is fetched exactly once, after the scale is frozen;
    selection never sees test data.
    """
    x_val, y_val = task.split("val")
    val_acc = tuple(
        accuracy_on(
            fake_quantize_checkpoint(patch(theta_r, qv, lam), spec, name_filter), x_val, y_val
        )
        for lam in grid
    )
    chosen = grid[int(np.argmax(val_acc))]  # first maximum = smallest scale on ties

    x_test, y_test = task.split("test")
    baseline = accuracy_on(fake_quantize_checkpoint(theta_r, spec, name_filter), x_test, y_test)
    patched = accuracy_on(
        fake_quantize_checkpoint(patch(theta_r, qv, chosen), spec, name_filter), x_test, y_test
    )
    return SweepResult(
        grid=tuple(grid),
        val_acc=val_acc,
        chosen_lambda=chosen,
        test_delta=patched - baseline,
    )
