"""Checkpoint containers and the QVC1 binary tensor format.

All weight tensors are dense float32 numpy arrays in C (row-major) order.
A checkpoint is an ordered name -> tensor map plus free-form string
metadata; iteration order is always lexicographic by name so flattened
views are reproducible.

QVC1 layout (bit-exact, little-endian):

    bytes  0..3   ASCII magic "QVC1"
    bytes  4..11  header length H, unsigned 64-bit little-endian
    bytes 12..12+H-1
                  UTF-8 canonical JSON (sorted keys, no whitespace):
                  {"meta": {str: str}, "tensors": {name: {"shape": [...],
                   "offset": int, "nbytes": int}}}
                  offsets are relative to the end of the header; tensors
                  are serialized in lexicographic name order
    remainder     raw little-endian float32 payloads, contiguous, no padding

Saving is deterministic: the same checkpoint always produces byte-identical
files, which makes golden-file and idempotence tests exact.
"""

from __future__ import annotations

import fnmatch
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DuplicateTensorName,
    FormatError,
    IncompatibleCheckpoints,
    NonFiniteTensor,
    SizeMismatch,
    TruncatedPayload,
    ValidationError,
)

MAGIC = b"QVC1"

TensorMap = dict[str, np.ndarray]


def canonical_json(obj) -> bytes:
    """Sorted keys, no whitespace; the only JSON encoding qvkit ever writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def as_weight_tensor(arr, name: str = "<tensor>") -> np.ndarray:
    """Validate and normalize an array to an immutable float32 C-order tensor."""
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise NonFiniteTensor(name)
    out.setflags(write=False)
    return out


def _validate_name(name) -> str:
    if not isinstance(name, str) or not name:
        raise ValidationError(f"tensor name must be a nonempty string, got {name!r}")
    return name


@dataclass(frozen=True)
class NameFilter:
    """Glob-style exclusion patterns matched against tensor names.

    An empty pattern list excludes nothing. Matching uses case-sensitive
    fnmatch semantics so results do not depend on the host platform.
    """

    exclude_patterns: tuple[str, ...] = ()

    @classmethod
    def of(cls, patterns) -> NameFilter:
        return cls(tuple(patterns))

    def excludes(self, name: str) -> bool:
        return any(fnmatch.fnmatchcase(name, p) for p in self.exclude_patterns)


#: Mirrors the convention that task-specific heads never take part in
#: weight-space arithmetic or weight quantization.
DEFAULT_HEAD_FILTER = NameFilter(("head.*", "classifier.*"))

NO_FILTER = NameFilter(())


@dataclass
class Checkpoint:
    """Ordered name -> float32 tensor map with string metadata.

    Immutable after construction: stored arrays are write-protected and
    every operation returns fresh copies, so instances are safe to share
    across threads.
    """

    entries: TensorMap
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        normalized: TensorMap = {}
        for name in sorted(self.entries):
            normalized[_validate_name(name)] = as_weight_tensor(self.entries[name], name)
        self.entries = normalized
        self.meta = {str(k): str(v) for k, v in self.meta.items()}

    def names(self) -> list[str]:
        return list(self.entries)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self.entries.items()}

    def compatible_with(self, other: Checkpoint) -> bool:
        return self.shapes() == other.shapes()

    def num_parameters(self) -> int:
        return sum(int(t.size) for t in self.entries.values())


def _check_compatible(a: Checkpoint, b: Checkpoint) -> None:
    if a.compatible_with(b):
        return
    a_names, b_names = set(a.entries), set(b.entries)
    missing = sorted(b_names - a_names)
    extra = sorted(a_names - b_names)
    conflicts = sorted(
        n for n in a_names & b_names if a.entries[n].shape != b.entries[n].shape
    )
    raise IncompatibleCheckpoints(missing, extra, conflicts)


def checkpoint_diff(a: Checkpoint, b: Checkpoint) -> TensorMap:
    """Per-name elementwise a - b in float32.

    Anti-symmetric: diff(a, b) == -diff(b, a) holds exactly as values
    (negation is exact; only the sign of a zero result can differ).
    """
    _check_compatible(a, b)
    out: TensorMap = {}
    for name, ta in a.entries.items():
        out[name] = as_weight_tensor(ta - b.entries[name], name)
    return out


def checkpoint_axpy(
    base: Checkpoint,
    scale: float,
    delta: TensorMap,
    name_filter: NameFilter = NO_FILTER,
) -> Checkpoint:
    """base + scale * delta on non-excluded delta names; everything else copied bitwise.

    scale == 0 short-circuits to a bitwise copy: IEEE addition would turn
    -0.0 entries into +0.0 and break the additive-identity contract.
    """
    unknown = sorted(set(delta) - set(base.entries))
    if unknown:
        raise IncompatibleCheckpoints(missing=[], extra=unknown, shape_conflicts=[])
    conflicts = sorted(
        n for n in delta if base.entries[n].shape != np.shape(delta[n])
    )
    if conflicts:
        raise IncompatibleCheckpoints([], [], conflicts)

    out: TensorMap = {}
    s = np.float32(scale)
    for name, tensor in base.entries.items():
        if name in delta and not name_filter.excludes(name) and s != 0:
            out[name] = as_weight_tensor(tensor + s * np.asarray(delta[name], np.float32), name)
        else:
            out[name] = tensor
    return Checkpoint(out, dict(base.meta))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write QVC1 bytes; deterministic for a given checkpoint."""
    table = {}
    offset = 0
    payloads: list[bytes] = []
    for name in ckpt.names():
        tensor = ckpt.entries[name]
        raw = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        table[name] = {"shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)}
        payloads.append(raw)
        offset += len(raw)
    header = canonical_json({"meta": ckpt.meta, "tensors": table})
    blob = MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payloads)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    """Parse a QVC1 file, validating layout, sizes, and finiteness."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise TruncatedPayload(f"{len(blob)} bytes, need at least 12 for magic and header length")
    if blob[:4] != MAGIC:
        raise BadMagic(blob[:4])
    (header_len,) = struct.unpack("<Q", blob[4:12])
    if len(blob) < 12 + header_len:
        raise TruncatedPayload(f"header declares {header_len} bytes but only {len(blob) - 12} follow")
    header = _parse_header(blob[12 : 12 + header_len])
    payload = blob[12 + header_len :]

    meta = header.get("meta", {})
    if not isinstance(meta, dict) or any(
        not isinstance(k, str) or not isinstance(v, str) for k, v in meta.items()
    ):
        raise FormatError("meta must map strings to strings")

    tensors = header.get("tensors", {})
    if not isinstance(tensors, dict):
        raise FormatError("tensor table must be a JSON object")

    entries: TensorMap = {}
    expected_offset = 0
    for name in sorted(tensors):
        _validate_name(name)
        rec = tensors[name]
        if not isinstance(rec, dict):
            raise FormatError(f"tensor {name!r}: table entry must be a JSON object")
        shape = rec.get("shape")
        if (
            not isinstance(shape, list)
            or any(not isinstance(d, int) or isinstance(d, bool) or d <= 0 for d in shape)
        ):
            raise FormatError(f"tensor {name!r}: shape must be a list of positive integers")
        count = math.prod(shape)  # exact Python ints; no int64 wraparound on hostile shapes
        nbytes = rec.get("nbytes")
        offset = rec.get("offset")
        if nbytes != 4 * count:
            raise SizeMismatch(name, f"nbytes={nbytes} but shape {shape} needs {4 * count}")
        if offset != expected_offset:
            raise SizeMismatch(name, f"offset={offset}, expected contiguous offset {expected_offset}")
        if offset + nbytes > len(payload):
            raise SizeMismatch(
                name, f"payload has {len(payload) - offset} bytes at offset {offset}, need {nbytes}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteTensor(name)
        entries[name] = arr.astype(np.float32)
        expected_offset = offset + nbytes
    if expected_offset != len(payload):
        raise TruncatedPayload(
            f"payload is {len(payload)} bytes but tensor table covers {expected_offset}"
        )
    return Checkpoint(entries, meta)


def _parse_header(raw: bytes) -> dict:
    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise DuplicateTensorName(key)
            seen[key] = value
        return seen

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except DuplicateTensorName:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    return header
