#!/usr/bin/env python3
"""Run the synthetic-geometry verification sweep and print a summary.

    python scripts/verify_geometry.py
    python scripts/verify_geometry.py --instances 5000 --dims 2,8,32,64 --report geometry.json
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from qvkit.cli import dispatch  # noqa: E402


def main() -> None:
    argv = sys.argv[1:]
    code, report = dispatch(["verify-geometry", *argv])
    if report is not None and report.metrics:
        m = report.metrics
        print(
            f"{int(m.get('n_instances', 0))} instances, {int(m.get('n_fail', 0))} failures; "
            f"max identity gap {m.get('max_identity_gap', float('nan')):.2e}, "
            f"max oracle gap {m.get('max_lambda_gap', float('nan')):.2e}, "
            f"scaling slope {m.get('scaling_slope', float('nan')):.3f}",
            file=sys.stderr,
        )
    raise SystemExit(code)


if __name__ == "__main__":
    main()
