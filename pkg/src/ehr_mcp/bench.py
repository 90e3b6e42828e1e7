"""Benchmark sweep: render, run, score and classify every (task, patient, language, rep)."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Any, Callable, Iterable

from .agent import DEFAULT_MAX_STEPS, PROVIDER_ERROR, Transcript, run_react
from .client import LocalClient, ToolClient
from .gold import GoldAnswer, gold_answer
from .policies import make_fault_injector, scripted_oracle_agent
from .scoring import ErrorCategory, classify_error, score_run
from .server import McpServer
from .tasks import LANGUAGES, TASK_IDS, TASKS, make_bindings, render_prompt
from .tools import ClinicalTools
from .warehouse import Warehouse

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RunKey:
    task: str
    patient_id: str
    language: str
    rep: int

    @property
    def relpath(self) -> str:
        return f"{self.task}/{self.patient_id}/{self.language}-{self.rep:02d}.json"


def make_policy(kind: str, task: str, bindings: dict, gold: GoldAnswer, provider: Any = None):
    """``oracle``, ``live`` or ``fault:<category>``."""
    if kind == "oracle":
        return scripted_oracle_agent(task, bindings)
    if kind == "live":
        if provider is None:
            raise ValueError("live policy needs a provider")
        from .provider import LiveLLMPolicy

        return LiveLLMPolicy(provider)
    if kind.startswith("fault:"):
        return make_fault_injector(kind.split(":", 1)[1], task, bindings, gold)
    raise ValueError(f"unknown policy: {kind}")


def validate_policy(kind: str) -> str:
    if kind in ("oracle", "live"):
        return kind
    if kind.startswith("fault:"):
        ErrorCategory(kind.split(":", 1)[1])
        return kind
    raise ValueError(f"unknown policy: {kind}")


def evaluate(task: str, transcript: Transcript, gold: GoldAnswer) -> tuple[dict, str | None]:
    scores = score_run(task, transcript.final_response, gold)
    category = classify_error(transcript, task, gold)
    return {s.metric: s.value for s in scores}, (category.value if category else None)


def run_one(
    key: RunKey,
    bindings: dict,
    gold: GoldAnswer,
    policy: Any,
    client: ToolClient,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> dict:
    prompt = render_prompt(key.task, key.language, bindings)
    try:
        transcript = run_react(prompt, client, policy, max_steps=max_steps)
    except Exception as exc:  # noqa: BLE001 - a broken run must not stop the sweep
        log.exception("run %s failed", key)
        transcript = Transcript(prompt, terminated_by=PROVIDER_ERROR, error=repr(exc))
    scores, category = evaluate(key.task, transcript, gold)
    return {
        "task": key.task,
        "patient_id": key.patient_id,
        "language": key.language,
        "rep": key.rep,
        "bindings": bindings,
        "gold": gold.to_json(),
        "transcript": transcript.to_json(),
        "scores": scores,
        "error_category": category,
    }


def run_benchmark(
    warehouse: Warehouse,
    policy: str = "oracle",
    languages: Iterable[str] = LANGUAGES,
    repetitions: int = 10,
    *,
    tasks: Iterable[str] = TASK_IDS,
    jobs: int | None = None,
    out_dir: str | Path | None = None,
    provider: Any = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    client_factory: Callable[[], ToolClient] | None = None,
) -> dict:
    """Run the whole sweep and return the report; optionally persist runs and report."""
    validate_policy(policy)
    if policy == "live" and provider is None:
        raise ValueError("live policy needs a provider")
    languages = tuple(languages)
    tasks = tuple(tasks)
    if not warehouse.cases:
        raise ValueError("warehouse has no reviewed cases (cohort.json) to benchmark")
    server = McpServer(ClinicalTools(warehouse))
    factory = client_factory or (lambda: LocalClient(server))

    excluded: dict[str, dict[str, str]] = {}
    work = []
    for task in tasks:
        for case in warehouse.cases:
            pid = case.patient_id
            gold = gold_answer(task, pid, warehouse)
            if gold.excluded:
                excluded.setdefault(task, {})[pid] = gold.reason or ""
                continue
            bindings = make_bindings(warehouse, pid)
            for lang in languages:
                for rep in range(repetitions):
                    work.append((RunKey(task, pid, lang, rep), bindings, gold))

    def go(item):
        key, bindings, gold = item
        pol = make_policy(policy, key.task, bindings, gold, provider)
        return run_one(key, bindings, gold, pol, factory(), max_steps)

    jobs = jobs or os.cpu_count() or 1
    if jobs == 1:
        docs = [go(w) for w in work]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            docs = list(pool.map(go, work))

    manifest = {
        "policy": policy,
        "languages": list(languages),
        "repetitions": repetitions,
        "tasks": list(tasks),
        "excluded": excluded,
    }
    report = build_report(docs, manifest)
    if out_dir is not None:
        write_runs(docs, manifest, Path(out_dir))
        write_report(report, Path(out_dir))
    return report


# --- persistence ---------------------------------------------------------------


def _key(doc: dict) -> RunKey:
    return RunKey(doc["task"], doc["patient_id"], doc["language"], doc["rep"])


def write_runs(docs: list[dict], manifest: dict, out_dir: Path) -> None:
    runs = out_dir / "runs"
    for doc in docs:
        path = runs / _key(doc).relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    runs.mkdir(parents=True, exist_ok=True)
    (runs / MANIFEST).write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def load_runs(runs_dir: str | Path) -> tuple[list[dict], dict]:
    """Read every stored run document (and the manifest, when present)."""
    runs_dir = Path(runs_dir)
    if (runs_dir / "runs").is_dir():
        runs_dir = runs_dir / "runs"
    docs = [
        json.loads(p.read_text(encoding="utf-8"))
        for p in sorted(runs_dir.glob("*/*/*.json"))
    ]
    manifest_path = runs_dir / MANIFEST
    manifest = (
        json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.is_file() else {}
    )
    return docs, manifest


def write_report(report: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.txt").write_text(summary_table(report) + "\n", encoding="utf-8")


# --- aggregation ---------------------------------------------------------------


def build_report(docs: list[dict], manifest: dict | None = None) -> dict:
    """Aggregate run documents; scores are recomputed from each stored transcript."""
    manifest = dict(manifest or {})
    docs = sorted(docs, key=lambda d: (d["task"], d["patient_id"], d["language"], d["rep"]))
    runs = []
    per: dict[tuple[str, str], dict[str, dict[str, list[float]]]] = {}
    errors: dict[str, Counter] = {}
    run_errors = 0
    for doc in docs:
        task = doc["task"]
        gold = GoldAnswer.from_json(doc["gold"])
        transcript = Transcript.from_json(doc["transcript"])
        scores, category = evaluate(task, transcript, gold)
        if transcript.terminated_by == PROVIDER_ERROR:
            run_errors += 1
        for metric, value in scores.items():
            per.setdefault((task, metric), {}).setdefault(doc["patient_id"], {}).setdefault(
                doc["language"], []
            ).append(value)
        bucket = errors.setdefault(task, Counter())
        if category:
            bucket[category] += 1
        runs.append(
            {
                "path": "runs/" + _key(doc).relpath,
                "task": task,
                "patient_id": doc["patient_id"],
                "language": doc["language"],
                "rep": doc["rep"],
                "scores": scores,
                "error_category": category,
                "terminated_by": transcript.terminated_by,
            }
        )

    tasks_out: dict[str, Any] = {}
    for task in TASK_IDS:
        metrics = {}
        for metric in TASKS[task].metrics:
            by_patient = per.get((task, metric))
            if not by_patient:
                continue
            per_patient = {
                pid: fmean([v for lang in sorted(langs) for v in langs[lang]])
                for pid, langs in sorted(by_patient.items())
            }
            per_language: dict[str, dict[str, float]] = {}
            for pid, langs in sorted(by_patient.items()):
                for lang, vals in sorted(langs.items()):
                    per_language.setdefault(lang, {})[pid] = fmean(vals)
            means = list(per_patient.values())
            metrics[metric] = {
                "per_patient": per_patient,
                "per_language": per_language,
                "mean": fmean(means),
                "min": min(means),
                "max": max(means),
                "n_patients": len(means),
                "perfect_patients": sum(1 for m in means if m == 1.0),
            }
        if not metrics:
            continue
        tasks_out[task] = {
            "difficulty": TASKS[task].difficulty,
            "metrics": metrics,
            "errors": {c.value: errors.get(task, Counter())[c.value] for c in ErrorCategory},
            "runs": sum(1 for r in runs if r["task"] == task),
        }
    totals = Counter()
    for c in errors.values():
        totals.update(c)
    return {
        "config": {
            k: manifest[k] for k in ("policy", "languages", "repetitions") if k in manifest
        },
        "excluded": manifest.get("excluded", {}),
        "tasks": tasks_out,
        "errors": {c.value: totals[c.value] for c in ErrorCategory},
        "run_count": len(runs),
        "run_errors": run_errors,
        "runs": runs,
    }


def summary_table(report: dict) -> str:
    cats = [c.value for c in ErrorCategory]
    header = f"{'task':<34} {'diff':<7} {'mean':>6} {'min':>6} {'perfect':>8}  " + " ".join(
        f"{c[:12]:>12}" for c in cats
    )
    lines = [header, "-" * len(header)]
    for task, entry in report["tasks"].items():
        for metric, m in entry["metrics"].items():
            name = task if len(entry["metrics"]) == 1 else f"{task}[{metric}]"
            errs = " ".join(f"{entry['errors'][c]:>12}" for c in cats)
            lines.append(
                f"{name:<34} {entry['difficulty']:<7} {m['mean']:>6.3f} {m['min']:>6.3f} "
                f"{m['perfect_patients']:>3}/{m['n_patients']:<4}  {errs}"
            )
    for task, pids in sorted(report.get("excluded", {}).items()):
        for pid, reason in sorted(pids.items()):
            lines.append(f"excluded: {task} {pid} ({reason})")
    lines.append(f"runs: {report['run_count']}  run errors: {report['run_errors']}")
    return "\n".join(lines)
