"""Run each fault injector over every task and print the classifier histogram.

A healthy classifier puts every run of ``fault:<c>`` in bucket ``c``; the
diagonal is printed per task so a leak shows up as an off-diagonal count.
"""

import argparse
import sys
from collections import Counter

from ehr_mcp.bench import run_benchmark
from ehr_mcp.cohort import generate_cohort
from ehr_mcp.scoring import ErrorCategory
from ehr_mcp.tasks import TASK_IDS


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("-n", "--patients", type=int, default=8)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--lang", choices=("en", "ja"), default="en")
    args = ap.parse_args()

    wh = generate_cohort(args.seed, args.patients)
    cats = [c.value for c in ErrorCategory]
    print(f"{'task':<18} {'injected':<16} " + " ".join(f"{c[:12]:>12}" for c in cats + ["none"]))
    leaks = 0
    for task in TASK_IDS:
        for injected in cats:
            report = run_benchmark(wh, f"fault:{injected}", (args.lang,), args.reps, tasks=(task,), jobs=1)
            got = Counter(r["error_category"] or "none" for r in report["runs"])
            leaks += report["run_count"] - got[injected]
            print(f"{task:<18} {injected:<16} " + " ".join(f"{got[c]:>12}" for c in cats + ["none"]))
    print(f"off-diagonal runs: {leaks}")
    return 1 if leaks else 0


if __name__ == "__main__":
    sys.exit(main())
