"""Regenerate tests/golden/responses.jsonl from tests/golden/requests.jsonl.

Replies come from an in-process session over the seed-42 cohort; the transport
tests then require stdio and HTTP to reproduce them byte for byte.
"""

import argparse
from pathlib import Path

from ehr_mcp.cohort import generate_cohort
from ehr_mcp.server import McpServer
from ehr_mcp.tools import ClinicalTools

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"


def replies(requests: list[str], seed: int = 42) -> list[str]:
    session = McpServer(ClinicalTools(generate_cohort(seed, 8))).session()
    out = []
    for line in requests:
        reply = session.handle_line(line)
        if reply is not None:
            out.append(reply)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", type=Path, default=GOLDEN)
    args = ap.parse_args()
    requests = (args.dir / "requests.jsonl").read_text(encoding="utf-8").splitlines()
    body = "".join(r + "\n" for r in replies(requests))
    (args.dir / "responses.jsonl").write_text(body, encoding="utf-8")
    print(f"wrote {body.count(chr(10))} replies to {args.dir / 'responses.jsonl'}")


if __name__ == "__main__":
    main()
