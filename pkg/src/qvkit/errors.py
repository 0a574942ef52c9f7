"""Exception hierarchy shared by all qvkit modules.

Validation failures (bad files, incompatible checkpoints, bad arguments)
map to CLI exit code 2; numeric failures (divergence, non-finite values
produced mid-run) map to exit code 3.
"""

from __future__ import annotations


class QvkitError(Exception):
    """Base class for all structured qvkit errors."""


class ValidationError(QvkitError):
    """Input or file failed validation before any computation ran."""


class FormatError(ValidationError):
    """Container file violates the QVC1 layout."""


class BadMagic(FormatError):
    def __init__(self, found: bytes):
        super().__init__(f"bad magic {found!r}, expected b'QVC1'")
        self.found = found


class TruncatedPayload(FormatError):
    def __init__(self, detail: str):
        super().__init__(f"truncated file: {detail}")


class DuplicateTensorName(FormatError):
    def __init__(self, name: str):
        super().__init__(f"duplicate tensor name {name!r} in header")
        self.name = name


class SizeMismatch(FormatError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"tensor {name!r}: {detail}")
        self.name = name


class NonFiniteTensor(ValidationError):
    def __init__(self, name: str):
        super().__init__(f"tensor {name!r} contains NaN or Inf")
        self.name = name


class IncompatibleCheckpoints(ValidationError):
    """Name sets or shapes differ between two checkpoints."""

    def __init__(self, missing: list[str], extra: list[str], shape_conflicts: list[str]):
        parts = []
        if missing:
            parts.append(f"missing={missing}")
        if extra:
            parts.append(f"extra={extra}")
        if shape_conflicts:
            parts.append(f"shape_conflicts={shape_conflicts}")
        super().__init__("incompatible checkpoints: " + ", ".join(parts))
        self.missing = missing
        self.extra = extra
        self.shape_conflicts = shape_conflicts


class GaugeMismatch(ValidationError):
    """A delta map names tensors the target checkpoint cannot absorb."""


class UnknownTask(ValidationError):
    def __init__(self, name: str, known: list[str]):
        super().__init__(f"unknown task {name!r}; registered: {known}")
        self.name = name


class NumericError(QvkitError):
    """Computation produced NaN/Inf or failed to converge."""


class DivergenceError(NumericError):
    def __init__(self, step: int, epoch: int | None = None, detail: str = "loss is not finite"):
        where = f"step {step}" if epoch is None else f"epoch {epoch}, step {step}"
        super().__init__(f"{detail} at {where}")
        self.epoch = epoch
        self.step = step
