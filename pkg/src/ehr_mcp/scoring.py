"""Scoring of final answers and rule-based error classification."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from enum import Enum
from typing import Any, Hashable, Iterable

import jsonschema

from .gold import GoldAnswer
from .tasks import TASKS
from .tools import TOOL_SPECS, round_half_up

OVER_LIMIT_PREFIX = "Too many items matched"
COMPUTE_TOOLS = frozenset({"calculate_cockcroft_gault"})


class ErrorCategory(str, Enum):
    TOOL_INVOCATION = "tool_invocation"
    ARGUMENT = "argument"
    INTERPRETATION = "interpretation"
    OUTPUT_FORMAT = "output_format"


@dataclass(frozen=True)
class RunScore:
    metric: str
    value: float
    error_category: ErrorCategory | None = None


class FormatViolation(ValueError):
    pass


def dice(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    """Dice coefficient of two multisets; 1.0 when both are empty."""
    ca, cb = Counter(a), Counter(b)
    total = sum(ca.values()) + sum(cb.values())
    if total == 0:
        return 1.0
    return 2 * sum((ca & cb).values()) / total


_ANSWER_VALIDATORS = {
    tid: jsonschema.Draft202012Validator(spec.answer_schema) for tid, spec in TASKS.items()
}


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-standard JSON constant {name}")


def parse_final(task: str, text: str | None) -> dict:
    """Parse a final response strictly against the task's answer schema."""
    if text is None:
        raise FormatViolation("no final response")
    try:
        value = json.loads(text.strip(), parse_constant=_reject_constant)
    except ValueError as exc:
        raise FormatViolation(f"not a bare JSON object: {exc}") from None
    err = jsonschema.exceptions.best_match(_ANSWER_VALIDATORS[task].iter_errors(value))
    if err is not None:
        raise FormatViolation(f"schema violation: {err.message}")
    return value


def _ccr(x: float) -> Decimal:
    return round_half_up(Decimal(repr(float(x))))


def _pair_greedy(gold: list[list[str]], answer: list[list[str]]) -> float:
    """Sum of species Dice over a greedy max-first pairing of same-day entries."""
    pairs = sorted(
        ((dice(set(g), set(r)), i, j) for i, g in enumerate(gold) for j, r in enumerate(answer)),
        key=lambda p: (-p[0], p[1], p[2]),
    )
    used_g: set[int] = set()
    used_r: set[int] = set()
    total = 0.0
    for score, i, j in pairs:
        if i in used_g or j in used_r:
            continue
        used_g.add(i)
        used_r.add(j)
        total += score
    return total


def species_mean(gold: list[dict], answer: list[dict]) -> float:
    if not gold:
        return 1.0 if not answer else 0.0
    by_day_gold: dict[str, list[list[str]]] = defaultdict(list)
    by_day_answer: dict[str, list[list[str]]] = defaultdict(list)
    for e in gold:
        by_day_gold[e["date"]].append(e["species"])
    for e in answer:
        by_day_answer[e["date"]].append(e["species"])
    total = sum(_pair_greedy(g, by_day_answer.get(day, [])) for day, g in by_day_gold.items())
    return total / len(gold)


def _metric_values(task: str, answer: dict, gold: dict) -> dict[str, float]:
    if task == "body_weight":
        return {"exact_accuracy": float(float(answer["weight"]) == float(gold["weight"]))}
    if task == "lab_data":
        return {"exact_accuracy": float(answer["wbc"] == gold["wbc"])}
    if task == "calculate_ccr":
        return {"exact_accuracy": float(_ccr(answer["ccr"]) == _ccr(gold["ccr"]))}
    if task == "culture_neg_abx":
        key = "days_abx_since_first_neg_blood_culture"
        return {"exact_accuracy": float(answer[key] == gold[key])}
    if task == "antibiotics":
        return {"dice_detection": dice(set(answer["antibiotics"]), set(gold["antibiotics"]))}
    if task == "culture_history":
        return {
            "dice_detection": dice(
                [e["date"] for e in answer["results"]], [e["date"] for e in gold["results"]]
            ),
            "dice_species_mean": species_mean(gold["results"], answer["results"]),
        }
    raise ValueError(f"unknown task: {task}")


def score_run(task: str, final_response: str | None, gold: GoldAnswer) -> list[RunScore]:
    """One score per task metric; a schema violation zeroes every metric."""
    if gold.excluded:
        raise ValueError(f"{gold.patient_id} is excluded from {task}: {gold.reason}")
    metrics = TASKS[task].metrics
    try:
        answer = parse_final(task, final_response)
    except FormatViolation:
        return [RunScore(m, 0.0, ErrorCategory.OUTPUT_FORMAT) for m in metrics]
    values = _metric_values(task, answer, gold.value)
    return [RunScore(m, values[m]) for m in metrics]


def is_perfect(scores: list[RunScore]) -> bool:
    return all(s.value == 1.0 for s in scores)


def _window(args: dict) -> tuple[date, date] | None:
    try:
        return date.fromisoformat(args["start_date"]), date.fromisoformat(args["end_date"])
    except (KeyError, TypeError, ValueError):
        return None


def _num(x: Any) -> float | None:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        return None
    return float(x)


def _arguments_invalid(steps: list, gold: GoldAnswer) -> bool:
    ev = gold.evidence
    pid = ev.get("patient_id", gold.patient_id)
    for s in steps:
        if "patient_id" in s.arguments and s.arguments["patient_id"] != pid:
            return True
    for i, s in enumerate(steps):
        if s.is_error and s.result_text.startswith(OVER_LIMIT_PREFIX):
            if not any(t.tool_name == s.tool_name and not t.is_error for t in steps[i + 1 :]):
                return True
    for tool, days in ev.get("windows", {}).items():
        windows = [
            w for s in steps if s.tool_name == tool and not s.is_error
            for w in [_window(s.arguments)] if w is not None
        ]
        for day in map(date.fromisoformat, days):
            if not any(lo <= day <= hi for lo, hi in windows):
                return True
    expected_cg = ev.get("cockcroft_gault")
    if expected_cg:
        calls = [s for s in steps if s.tool_name == "calculate_cockcroft_gault" and not s.is_error]
        if calls:
            a = calls[-1].arguments
            if (
                a.get("age") != expected_cg["age"]
                or a.get("sex") != expected_cg["sex"]
                or _num(a.get("weight")) != float(expected_cg["weight"])
                or _num(a.get("serum_creatinine")) != float(expected_cg["serum_creatinine"])
            ):
                return True
    return False


def classify_error(transcript: Any, task: str, gold: GoldAnswer) -> ErrorCategory | None:
    """Assign exactly one error category to an imperfect run, none to a perfect one.

    Precedence: output_format, tool_invocation, argument, interpretation.
    """
    scores = score_run(task, transcript.final_response, gold)
    if is_perfect(scores):
        return None
    if scores[0].error_category is ErrorCategory.OUTPUT_FORMAT:
        return ErrorCategory.OUTPUT_FORMAT
    steps = list(transcript.steps)
    invoked = {s.tool_name for s in steps}
    missing = set(TASKS[task].expected_tools) - invoked
    bad_args = _arguments_invalid(steps, gold)
    if invoked - set(TOOL_SPECS):
        return ErrorCategory.TOOL_INVOCATION
    # Skipping only the calculator after a retrieval that missed its inputs is blamed on
    # the retrieval arguments: the agent never held the values to calculate with.
    if missing and not (missing <= COMPUTE_TOOLS and bad_args):
        return ErrorCategory.TOOL_INVOCATION
    if bad_args:
        return ErrorCategory.ARGUMENT
    return ErrorCategory.INTERPRETATION
