#!/usr/bin/env python3
"""Regenerate the frozen golden files under tests/golden/.

Run once on the reference environment after any intentional change to the
trainer, tasks, or report format; the acceptance suite compares against
these bytes exactly.
"""

from __future__ import annotations

import json
import shutil
import struct
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from qvkit import (  # noqa: E402
    Checkpoint,
    DEFAULT_HEAD_FILTER,
    TrainConfig,
    evaluate_top1,
    fake_quantize_checkpoint,
    make_task,
    registered_tasks,
    save_checkpoint,
    train,
)
from qvkit.cli import dispatch  # noqa: E402

GOLDEN = ROOT / "tests" / "golden"
PINNED_SEED = 7


def freeze_desk_scale_baselines() -> None:
    cfg_ft, cfg_qat = TrainConfig(seed=PINNED_SEED).as_pair()
    table = {}
    for name in registered_tasks():
        task = make_task(name, PINNED_SEED)
        ft = train(task, cfg_ft)
        qat = train(task, cfg_qat)
        fq = lambda c: fake_quantize_checkpoint(c, cfg_ft.quant, DEFAULT_HEAD_FILTER)
        table[name] = {
            "ft_top1": evaluate_top1(ft, task, "test"),
            "ft_ptq_top1": evaluate_top1(fq(ft), task, "test"),
            "qat_ptq_top1": evaluate_top1(fq(qat), task, "test"),
        }
    (GOLDEN / "desk_scale_baselines.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    print("desk-scale baselines:", json.dumps(table))


def freeze_pipeline_report() -> None:
    """Golden transfer run: donor blobs-B onto receiver blobs-A at seed 7."""
    workdir = GOLDEN / "_pipeline_tmp"
    if workdir.exists():
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True)
    report_path = workdir / "report.json"
    code, _ = dispatch(
        [
            "pipeline",
            "--donor", "blobs-B",
            "--receiver", "blobs-A",
            "--seed", str(PINNED_SEED),
            "--out-dir", str(workdir / "artifacts"),
            "--report", str(report_path),
        ]
    )
    if code != 0:
        raise SystemExit(f"pipeline failed with exit code {code}")
    (GOLDEN / "pipeline_blobs-B_to_blobs-A_seed7.json").write_bytes(report_path.read_bytes())
    hashes = {
        p.name: __import__("hashlib").sha256(p.read_bytes()).hexdigest()
        for p in sorted((workdir / "artifacts").iterdir())
    }
    (GOLDEN / "pipeline_artifact_hashes.json").write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")
    shutil.rmtree(workdir)
    print("pipeline report + artifact hashes frozen")


def freeze_sample_container() -> None:
    """Small fixed checkpoint with hand-checkable payload bytes."""
    entries = {
        "head.weight": np.array([[0.5, -0.5]], np.float32),
        "layers.0.weight": np.array([[1.0, -2.0], [0.25, 8.0]], np.float32),
        "layers.0.bias": np.array([0.0, -1.5], np.float32),
    }
    ckpt = Checkpoint(entries, {"task": "sample", "regime": "FT"})
    save_checkpoint(ckpt, GOLDEN / "sample.qvc")
    expected = {
        name: [struct.unpack("<f", struct.pack("<f", float(v)))[0] for v in t.ravel()]
        for name, t in ckpt.entries.items()
    }
    (GOLDEN / "sample_values.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")
    print("sample container frozen")


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    freeze_sample_container()
    freeze_desk_scale_baselines()
    freeze_pipeline_report()


if __name__ == "__main__":
    main()
