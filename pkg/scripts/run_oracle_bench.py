"""Oracle sweep over a fresh seed-42 cohort: both languages, 10 reps, timed.

Writes runs and report under --out and exits nonzero unless every eligible
patient scores 1.0 with no error category.
"""

import argparse
import sys
import time
from pathlib import Path

from ehr_mcp.bench import run_benchmark, summary_table
from ehr_mcp.cohort import generate_cohort
from ehr_mcp.tasks import LANGUAGES


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("-n", "--patients", type=int, default=8)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("oracle-out"))
    args = ap.parse_args()

    wh = generate_cohort(args.seed, args.patients)
    t0 = time.perf_counter()
    report = run_benchmark(wh, "oracle", LANGUAGES, args.reps, jobs=args.jobs, out_dir=args.out)
    elapsed = time.perf_counter() - t0
    print(summary_table(report))
    print(f"wall clock: {elapsed:.2f}s")

    perfect = all(
        m["min"] == 1.0 for entry in report["tasks"].values() for m in entry["metrics"].values()
    )
    clean = sum(report["errors"].values()) == 0 and report["run_errors"] == 0
    return 0 if perfect and clean else 1


if __name__ == "__main__":
    sys.exit(main())
