"""Command-line entry point with machine-readable run reports.

Every subcommand emits one canonical-JSON report (sorted keys, no
whitespace, trailing newline) to --report or standard output. Reports are
byte-identical across reruns with identical flags: paths are recorded
relative to the report's directory when they live under it, metrics are a
flat name -> number map, and no timestamps or environment state leak in.

Exit codes: 0 success, 2 validation error (including argparse usage
errors), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .containers import (
    DEFAULT_HEAD_FILTER,
    NameFilter,
    canonical_json,
    load_checkpoint,
    save_checkpoint,
)
from .errors import NumericError, ValidationError
from .geometry import displacement_scaling_slope, verify_geometry_instances
from .quantize import QuantSpec, fake_quantize_checkpoint
from .tasks import make_task, registered_tasks
from .trainer import TrainConfig, evaluate_top1, train
from .transfer import lambda_sweep, transfer_gain
from .vectors import extract_qv, load_qv, patch, qv_norm, save_qv

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    command: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    schema_version: int = SCHEMA_VERSION
    flags: dict[str, bool] | None = None
    instances: list[dict] | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = {
            "command": self.command,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "metrics": self.metrics,
            "status": self.status,
            "schema_version": self.schema_version,
        }
        if self.flags is not None:
            out["flags"] = self.flags
        if self.instances is not None:
            out["instances"] = self.instances
        if self.error is not None:
            out["error"] = self.error
        return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _record_path(path, base: Path) -> str:
    p = Path(path).resolve()
    try:
        return p.relative_to(base.resolve()).as_posix()
    except ValueError:
        return p.as_posix()


def _write_report(report: RunReport, report_path: str | None) -> None:
    payload = canonical_json(report.to_dict()) + b"\n"
    if report_path:
        Path(report_path).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def _name_filter(args) -> NameFilter:
    if args.exclude:
        return NameFilter.of(args.exclude)
    return DEFAULT_HEAD_FILTER


def _train_config(args, qat: bool = False) -> TrainConfig:
    base: dict = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {args.config} is not valid JSON: {exc}") from exc
    cfg = TrainConfig.from_dict(base) if base else TrainConfig()
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "bits", None) is not None:
        overrides["quant"] = QuantSpec(bits=args.bits)
    overrides["qat"] = qat
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# Subcommand handlers; each returns (outputs, metrics, flags, instances)
# ---------------------------------------------------------------------------


def _cmd_quantize(args, base: Path, inputs: dict[str, str]):
    ckpt = load_checkpoint(args.infile)
    spec = QuantSpec(bits=args.bits)
    flt = _name_filter(args)
    out = fake_quantize_checkpoint(ckpt, spec, flt)
    save_checkpoint(out, args.out)
    quantized = sum(
        1 for n, t in ckpt.entries.items() if t.ndim == 2 and not flt.excludes(n)
    )
    return (
        {"out": _record_path(args.out, base), "out_sha256": _sha256(Path(args.out))},
        {"bits": float(args.bits), "tensors_quantized": float(quantized)},
        None,
        None,
    )


def _cmd_extract_qv(args, base: Path, inputs: dict[str, str]):
    qat = load_checkpoint(args.qat)
    ft = load_checkpoint(args.ft)
    qv = extract_qv(qat, ft, _name_filter(args))
    save_qv(qv, args.out)
    return (
        {"out": _record_path(args.out, base), "out_sha256": _sha256(Path(args.out))},
        {"qv_norm": qv_norm(qv), "n_tensors": float(len(qv.names()))},
        None,
        None,
    )


def _cmd_patch(args, base: Path, inputs: dict[str, str]):
    receiver = load_checkpoint(args.receiver)
    qv = load_qv(args.qv)
    patched = patch(receiver, qv, args.lam)
    save_checkpoint(patched, args.out)
    return (
        {"out": _record_path(args.out, base), "out_sha256": _sha256(Path(args.out))},
        {"lambda": float(args.lam)},
        None,
        None,
    )


def _cmd_eval(args, base: Path, inputs: dict[str, str]):
    ckpt = load_checkpoint(args.ckpt)
    task = make_task(args.task, args.seed)
    top1 = evaluate_top1(ckpt, task, args.split)
    return ({}, {"top1": top1}, None, None)


def _cmd_sweep(args, base: Path, inputs: dict[str, str]):
    receiver = load_checkpoint(args.receiver)
    qv = load_qv(args.qv)
    task = make_task(args.task, args.seed)
    spec = QuantSpec(bits=args.bits)
    flt = _name_filter(args)
    result = lambda_sweep(receiver, qv, task, spec, flt)
    metrics = {
        "chosen_lambda": result.chosen_lambda,
        "test_delta": result.test_delta,
    }
    for lam, acc in zip(result.grid, result.val_acc):
        metrics[f"val_top1_lambda_{lam:g}"] = acc
    return ({}, metrics, {"receiver_val_data_used": True}, None)


def _cmd_train_toy(args, base: Path, inputs: dict[str, str]):
    cfg = _train_config(args, qat=args.qat)
    task = make_task(args.task, cfg.seed)
    ckpt = train(task, cfg)
    save_checkpoint(ckpt, args.out)
    inputs["config_sha256"] = cfg.config_hash()
    return (
        {"out": _record_path(args.out, base), "out_sha256": _sha256(Path(args.out))},
        {
            "train_top1": evaluate_top1(ckpt, task, "train"),
            "test_top1": evaluate_top1(ckpt, task, "test"),
        },
        None,
        None,
    )


def _cmd_verify_geometry(args, base: Path, inputs: dict[str, str]):
    dims = tuple(int(d) for d in args.dims.split(","))
    records = verify_geometry_instances(args.instances, dims, args.seed)
    slope = displacement_scaling_slope(args.seed)
    n_fail = sum(1 for r in records if not r["pass"])
    metrics = {
        "n_instances": float(len(records)),
        "n_fail": float(n_fail),
        "max_identity_gap": max(abs(r["fraction"] - r["cos_sq"]) for r in records),
        "max_lambda_gap": max(abs(r["lambda_star"] - r["lambda_oracle"]) for r in records),
        "max_bound_excess": max(max(abs(r["epsilon"]) - r["bound"], 0.0) for r in records),
        "scaling_slope": slope,
    }
    if n_fail or slope < 2.9:
        raise NumericError(
            f"geometry verification failed: {n_fail} failing instances, slope {slope:.3f}"
        )
    return ({}, metrics, None, records)


def _cmd_pipeline(args, base: Path, inputs: dict[str, str]):
    for name in (args.donor, args.receiver):
        if name not in registered_tasks():
            from .errors import UnknownTask

            raise UnknownTask(name, registered_tasks())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_ft, cfg_qat = _train_config(args, qat=False).as_pair()
    inputs["config_sha256"] = cfg_ft.config_hash()
    spec = cfg_ft.quant
    flt = _name_filter(args)

    donor_task = make_task(args.donor, cfg_ft.seed)
    receiver_task = make_task(args.receiver, cfg_ft.seed)

    donor_ft = train(donor_task, cfg_ft)
    donor_qat = train(donor_task, cfg_qat)
    receiver_ft = train(receiver_task, cfg_ft)
    qv = extract_qv(donor_qat, donor_ft, flt)
    sweep = lambda_sweep(receiver_ft, qv, receiver_task, spec, flt)
    patched = patch(receiver_ft, qv, sweep.chosen_lambda)

    artifacts = {
        "donor_ft": donor_ft,
        "donor_qat": donor_qat,
        "receiver_ft": receiver_ft,
        "receiver_patched": patched,
    }
    outputs: dict[str, str] = {}
    for stem, ckpt in artifacts.items():
        path = out_dir / f"{stem}.qvc"
        save_checkpoint(ckpt, path)
        outputs[stem] = _record_path(path, base)
        outputs[f"{stem}_sha256"] = _sha256(path)
    qv_path = out_dir / "donor_qv.qvc"
    save_qv(qv, qv_path)
    outputs["donor_qv"] = _record_path(qv_path, base)
    outputs["donor_qv_sha256"] = _sha256(qv_path)

    fq = lambda c: fake_quantize_checkpoint(c, spec, flt)
    metrics = {
        "donor_ft_top1": evaluate_top1(donor_ft, donor_task, "test"),
        "donor_ft_ptq_top1": evaluate_top1(fq(donor_ft), donor_task, "test"),
        "donor_qat_ptq_top1": evaluate_top1(fq(donor_qat), donor_task, "test"),
        "receiver_ft_top1": evaluate_top1(receiver_ft, receiver_task, "test"),
        "receiver_ptq_top1": evaluate_top1(fq(receiver_ft), receiver_task, "test"),
        "receiver_patched_ptq_top1": evaluate_top1(fq(patched), receiver_task, "test"),
        "qv_norm": qv_norm(qv),
        "chosen_lambda": sweep.chosen_lambda,
        "test_delta": sweep.test_delta,
        "unit_scale_test_delta": transfer_gain(receiver_ft, qv, 1.0, receiver_task, spec, flt),
    }
    for lam, acc in zip(sweep.grid, sweep.val_acc):
        metrics[f"val_top1_lambda_{lam:g}"] = acc
    flags = {"receiver_val_data_used": True}
    return (outputs, metrics, flags, None)


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qvkit",
        description="Quantization-vector extraction, zero-shot patching, and low-bit PTQ.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, report=True):
        if report:
            p.add_argument("--report", default=None, help="write the run report here (default: stdout)")
        p.add_argument(
            "--exclude",
            action="append",
            default=None,
            metavar="GLOB",
            help="tensor-name exclusion pattern; replaces the default head.*/classifier.* filter",
        )

    p = sub.add_parser("quantize", help="fake-quantize the rank-2 weights of a checkpoint")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, default=3)
    add_common(p)

    p = sub.add_parser("extract-qv", help="extract a quantization vector from a matched pair")
    p.add_argument("--qat", required=True, help="quantization-aware checkpoint")
    p.add_argument("--ft", required=True, help="standard fine-tuned checkpoint")
    p.add_argument("--out", required=True)
    add_common(p)

    p = sub.add_parser("patch", help="add a scaled donor vector to a receiver checkpoint")
    p.add_argument("--receiver", required=True)
    p.add_argument("--qv", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    add_common(p)

    p = sub.add_parser("eval", help="Top-1 accuracy of a checkpoint on a task split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=7)
    add_common(p)

    p = sub.add_parser("sweep", help="select the patch scale on validation data")
    p.add_argument("--receiver", required=True)
    p.add_argument("--qv", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--bits", type=int, default=3)
    add_common(p)

    p = sub.add_parser("train-toy", help="train a deterministic MLP checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--qat", action="store_true")
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file of training-config overrides")
    p.add_argument("--out", required=True)
    add_common(p)

    p = sub.add_parser("verify-geometry", help="run the projection/recovery-law verification")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--dims", default="2,8,32")
    p.add_argument("--seed", type=int, default=7)
    add_common(p)

    p = sub.add_parser("pipeline", help="full donor-to-receiver transfer experiment")
    p.add_argument("--donor", required=True)
    p.add_argument("--receiver", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default=None, help="artifact directory (default derived from tasks/seed)")
    add_common(p)

    return parser


_HANDLERS = {
    "quantize": _cmd_quantize,
    "extract-qv": _cmd_extract_qv,
    "patch": _cmd_patch,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "train-toy": _cmd_train_toy,
    "verify-geometry": _cmd_verify_geometry,
    "pipeline": _cmd_pipeline,
}

_INPUT_PATH_FLAGS = ("infile", "qat", "ft", "receiver", "qv", "ckpt", "config")


def dispatch(argv: list[str] | None = None) -> tuple[int, RunReport | None]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (int(exc.code) if exc.code else 0, None)

    if args.command == "pipeline" and args.out_dir is None:
        args.out_dir = f"qv-pipeline-{args.donor}-{args.receiver}-seed{args.seed}"

    report_path = getattr(args, "report", None)
    base = Path(report_path).resolve().parent if report_path else Path.cwd()

    inputs: dict[str, str] = {}
    for flag in _INPUT_PATH_FLAGS:
        if args.command == "pipeline" and flag == "receiver":
            continue  # pipeline's receiver is a task name, not a file
        value = getattr(args, flag, None)
        if isinstance(value, str) and value:
            inputs[flag] = _record_path(value, base)
            if Path(value).is_file():
                inputs[f"{flag}_sha256"] = _sha256(Path(value))
    for flag in ("task", "donor", "split"):
        value = getattr(args, flag, None)
        if value is not None:
            inputs[flag] = str(value)
    if args.command == "pipeline":
        inputs["receiver"] = args.receiver
    if getattr(args, "seed", None) is not None:
        inputs["seed"] = str(args.seed)

    report = RunReport(command=args.command, inputs=inputs)
    try:
        outputs, metrics, flags, instances = _HANDLERS[args.command](args, base, inputs)
        report.outputs = outputs
        report.metrics = metrics
        report.flags = flags
        report.instances = instances
        _write_report(report, report_path)
        return (0, report)
    except (ValidationError, OSError) as exc:
        report.status = "error"
        report.error = str(exc)
        _write_report(report, report_path)
        return (2, report)
    except NumericError as exc:
        report.status = "error"
        report.error = str(exc)
        _write_report(report, report_path)
        return (3, report)


def main() -> None:
    code, _ = dispatch()
    raise SystemExit(code)


if __name__ == "__main__":
    main()
