#!/usr/bin/env python3
"""Run the full donor-to-receiver transfer experiment from the command line.

Thin wrapper over `qvkit pipeline`; keeps a copy-pasteable default for the
pinned blobs-B -> blobs-A study.

    python scripts/run_pipeline.py
    python scripts/run_pipeline.py --donor moons --receiver xor-grid --seed 11
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from qvkit.cli import dispatch  # noqa: E402


def main() -> None:
    argv = sys.argv[1:]
    if not any(a.startswith("--donor") for a in argv):
        argv = ["--donor", "blobs-B", "--receiver", "blobs-A", "--seed", "7"] + argv
    code, report = dispatch(["pipeline", *argv])
    if report is not None and report.status == "ok":
        m = report.metrics
        print(
            f"receiver PTQ {m['receiver_ptq_top1']:.3f} -> patched {m['receiver_patched_ptq_top1']:.3f} "
            f"(delta {m['test_delta']:+.3f} at lambda {m['chosen_lambda']})",
            file=sys.stderr,
        )
    raise SystemExit(code)


if __name__ == "__main__":
    main()
