"""Command line: ``generate``, ``serve``, ``bench`` and ``report``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .bench import build_report, load_runs, run_benchmark, summary_table, validate_policy, write_report
from .cohort import generate_cohort
from .server import McpServer, make_http_server, serve_stdio
from .tasks import LANGUAGES
from .tools import ClinicalTools
from .warehouse import WarehouseError, load_warehouse, write_warehouse

log = logging.getLogger("ehr_mcp")

DEFAULT_SEED = 42
DEFAULT_PATIENTS = 8
DEFAULT_BIND = "127.0.0.1:8765"
DEFAULT_REPS = 10

EXIT_USAGE = 2
EXIT_FAILURE = 1


@dataclass(frozen=True)
class CliConfig:
    warehouse: Path | None = None
    seed: int = DEFAULT_SEED
    patients: int = DEFAULT_PATIENTS
    transport: str = "stdio"
    bind: tuple[str, int] | None = None
    provider_config: Path | None = None
    languages: tuple[str, ...] = LANGUAGES
    repetitions: int = DEFAULT_REPS
    jobs: int | None = None
    out: Path | None = None

    def __post_init__(self) -> None:
        if self.transport not in ("stdio", "http"):
            raise ValueError(f"unknown transport: {self.transport}")
        if self.transport == "http" and self.bind is None:
            raise ValueError("http transport requires a bind address")
        if self.patients < 1:
            raise ValueError("patient count must be at least 1")
        if self.repetitions < 1:
            raise ValueError("--reps must be at least 1")
        if self.jobs is not None and self.jobs < 1:
            raise ValueError("--jobs must be at least 1")


class UsageError(Exception):
    pass


def parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise UsageError(f"bad bind address {text!r}; expected host:port")
    return host, int(port)


def _languages(value: str) -> tuple[str, ...]:
    return LANGUAGES if value == "both" else (value,)


def config_from_args(args: argparse.Namespace) -> CliConfig:
    """Cross-check the flags; raises UsageError on an inconsistent combination."""
    transport = getattr(args, "transport", "stdio")
    bind = getattr(args, "bind", None)
    try:
        if transport == "http":
            bind_addr = parse_bind(bind or DEFAULT_BIND)
        elif bind is not None:
            raise UsageError("--bind only applies to --transport http")
        else:
            bind_addr = None
        return CliConfig(
            warehouse=args.warehouse,
            seed=args.seed,
            patients=getattr(args, "patients", DEFAULT_PATIENTS),
            transport=transport,
            bind=bind_addr,
            provider_config=getattr(args, "provider_config", None),
            languages=_languages(args.lang),
            repetitions=args.reps,
            jobs=args.jobs,
            out=args.out,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Registered on the root parser and every subparser so the flags work on either side
    # of the subcommand; the subparser copies default to SUPPRESS to not clobber them.
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--warehouse", type=Path, default=d(None), help="warehouse directory")
    p.add_argument("--seed", type=int, default=d(DEFAULT_SEED), help="cohort seed (default 42)")
    p.add_argument("--lang", choices=("en", "ja", "both"), default=d("both"))
    p.add_argument("--reps", type=int, default=d(DEFAULT_REPS), help="repetitions per prompt")
    p.add_argument("--jobs", type=int, default=d(None), help="bench workers (default: CPU count)")
    p.add_argument("--out", type=Path, default=d(None), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehr-mcp",
        description="Clinical MCP server and retrieval benchmark.",
        parents=[_global_flags(False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic cohort")
    gen.add_argument("-n", "--patients", type=int, default=DEFAULT_PATIENTS)

    srv = sub.add_parser("serve", parents=[common], help="serve the tools over MCP")
    srv.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    srv.add_argument("--bind", default=None, help=f"host:port for http (default {DEFAULT_BIND})")

    bench = sub.add_parser("bench", parents=[common], help="run the benchmark sweep")
    bench.add_argument(
        "--policy", default="oracle", help="oracle (default), live, or fault:<category>"
    )
    bench.add_argument("--provider-config", type=Path, default=None)
    bench.add_argument("--max-steps", type=int, default=10)

    rep = sub.add_parser("report", parents=[common], help="rebuild a report from stored runs")
    rep.add_argument("runs", type=Path, nargs="?", default=None, help="bench output or runs dir")
    return parser


def _load(cfg: CliConfig):
    if cfg.warehouse is None:
        raise UsageError("--warehouse is required")
    return load_warehouse(cfg.warehouse)


def cmd_generate(cfg: CliConfig, args: argparse.Namespace) -> int:
    out = cfg.out or cfg.warehouse
    if out is None:
        raise UsageError("generate needs --out (or --warehouse) as the destination")
    wh = generate_cohort(cfg.seed, cfg.patients)
    write_warehouse(wh, out)
    print(f"wrote {len(wh.patients)} patients (seed {cfg.seed}) to {out}")
    for case in wh.cases:
        p = next(p for p in wh.patients if p.patient_id == case.patient_id)
        flags = []
        if p.on_dialysis:
            flags.append("dialysis")
        if not any(
            a.short_name == "VCM" and a.patient_id == p.patient_id for a in wh.antibiotics
        ):
            flags.append("no vancomycin")
        print(
            f"  {p.patient_id}  {p.sex}  born {p.date_of_birth}  "
            f"intervention {case.intervention_date}" + (f"  [{', '.join(flags)}]" if flags else "")
        )
    return 0


def cmd_serve(cfg: CliConfig, args: argparse.Namespace) -> int:
    wh = _load(cfg)
    server = McpServer(ClinicalTools(wh))
    if cfg.transport == "stdio":
        log.info("serving MCP over stdio (%d patients)", len(wh.patients))
        serve_stdio(server, sys.stdin, sys.stdout)
        return 0
    host, port = cfg.bind
    try:
        httpd = make_http_server(server, host, port)
    except OSError as exc:
        log.error("cannot bind %s:%d: %s", host, port, exc)
        return EXIT_FAILURE
    log.info("serving MCP over HTTP on http://%s:%d/rpc", *httpd.server_address[:2])
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def cmd_bench(cfg: CliConfig, args: argparse.Namespace) -> int:
    try:
        validate_policy(args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    wh = _load(cfg)
    provider = None
    if args.policy == "live":
        if cfg.provider_config is None:
            raise UsageError("--policy live needs --provider-config")
        from .provider import ChatProvider, ProviderConfig

        provider = ChatProvider(ProviderConfig.from_file(cfg.provider_config))
    out = cfg.out or Path("bench-out")
    report = run_benchmark(
        wh,
        args.policy,
        cfg.languages,
        cfg.repetitions,
        jobs=cfg.jobs,
        out_dir=out,
        provider=provider,
        max_steps=args.max_steps,
    )
    print(summary_table(report))
    print(f"report: {out / 'report.json'}")
    return EXIT_FAILURE if report["run_errors"] else 0


def cmd_report(cfg: CliConfig, args: argparse.Namespace) -> int:
    src = args.runs or cfg.out
    if src is None:
        raise UsageError("report needs a runs directory")
    if not Path(src).is_dir():
        raise UsageError(f"not a directory: {src}")
    docs, manifest = load_runs(src)
    if not docs:
        raise UsageError(f"no run documents under {src}")
    report = build_report(docs, manifest)
    if args.runs is not None and cfg.out is not None:
        write_report(report, cfg.out)
    print(summary_table(report))
    return EXIT_FAILURE if report["run_errors"] else 0


COMMANDS = {
    "generate": cmd_generate,
    "serve": cmd_serve,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](config_from_args(args), args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ehr-mcp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WarehouseError, OSError, ValueError) as exc:
        print(f"ehr-mcp: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
