"""Deterministic agent policies: the scripted oracle and the four fault injectors.

Every policy here is a pure function of (task, bindings, step history). The
oracle reads its answer out of the tool observations with the same rules the
gold answers use; each injector departs from it in exactly one way.
"""

from __future__ import annotations

import json
from datetime import date, timedelta
from decimal import Decimal
from typing import Any, Callable

from .agent import Action, FinalAnswer, Step, ToolCall, answer_text
from .gold import VANCOMYCIN, GoldAnswer, wbc_per_microliter
from .scoring import ErrorCategory, _metric_values
from .tasks import TASKS, binding_sex
from .warehouse import ANALYTE_BY_NAME

OVER_LIMIT = "Too many items matched"
MAX_LAB_CALLS = 6

# Format examples printed in the prompts; what a model falls back to when it gives up.
PROMPT_EXAMPLES = {
    "body_weight": {"weight": 45.2},
    "lab_data": {"wbc": 12000},
    "culture_history": {
        "results": [
            {"date": "2025-03-21", "species": ["Staphylococcus aureus"]},
            {"date": "2025-03-25", "species": []},
        ]
    },
    "antibiotics": {"antibiotics": ["CTRX", "VCM"]},
    "calculate_ccr": {"ccr": 21.5},
    "culture_neg_abx": {"days_abx_since_first_neg_blood_culture": 7},
}


# --- reading observations ------------------------------------------------------


def _payload(step: Step) -> Any:
    return None if step.is_error else json.loads(step.result_text)


def _d(text: str) -> date:
    return date.fromisoformat(text)


def _window_args(pid: str, start: date, end: date) -> dict:
    return {"patient_id": pid, "start_date": start.isoformat(), "end_date": end.isoformat()}


def _latest_lab(steps: list[Step], key: str, until: date) -> tuple[str, str, str] | None:
    """Latest (timestamp, display name, "value unit") for ``key`` on or before ``until``."""
    best = None
    for s in steps:
        if s.tool_name != "lab_results" or s.is_error:
            continue
        for stamp, panel in _payload(s).items():
            if _d(stamp[:10]) > until:
                continue
            for name, shown in panel.items():
                a = ANALYTE_BY_NAME.get(name)
                if a is not None and a.key == key and (best is None or stamp > best[0]):
                    best = (stamp, name, shown)
    return best


def _all_labs(steps: list[Step], key: str, until: date) -> list[tuple[str, str, str]]:
    rows = set()
    for s in steps:
        if s.tool_name == "lab_results" and not s.is_error:
            for stamp, panel in _payload(s).items():
                for name, shown in panel.items():
                    a = ANALYTE_BY_NAME.get(name)
                    if a is not None and a.key == key and _d(stamp[:10]) <= until:
                        rows.add((stamp, name, shown))
    return sorted(rows)


def _wbc_value(name: str, shown: str) -> int:
    value, unit = shown.split(" ", 1)
    return wbc_per_microliter(name, float(value), unit)


def _next_lab_window(d: date, steps: list[Step], first: tuple[date, date]) -> tuple[date, date] | None:
    tried = [s for s in steps if s.tool_name == "lab_results"]
    if not tried:
        return first
    if len(tried) >= MAX_LAB_CALLS:
        return None
    last = tried[-1]
    lo, hi = _d(last.arguments["start_date"]), _d(last.arguments["end_date"])
    if last.is_error and last.result_text.startswith(OVER_LIMIT):
        return lo + (hi - lo) // 2 + timedelta(days=1), hi
    covered = [_d(s.arguments["start_date"]) for s in tried if not s.is_error]
    earliest = min(covered, default=d + timedelta(days=1))
    return earliest - timedelta(days=60), earliest - timedelta(days=1)


def _blood_entries(steps: list[Step], specimens: tuple[str, ...] = ("blood",)) -> list[dict]:
    entries = []
    for s in steps:
        if s.tool_name == "bacteria_results" and not s.is_error:
            entries = [
                {"date": c["collected_at"][:10], "species": list(c["organisms"])}
                for c in _payload(s)
                if c["specimen"] in specimens
            ]
    return entries


def _antibiotic_lines(step: Step) -> list[str]:
    p = _payload(step)
    if p is None:
        return []
    lines = p["oral_antibiotics"] + p["iv_antibiotics"]
    return sorted(lines, key=lambda line: line[:10])


def _short_name(line: str) -> str:
    return line.split(" - ", 1)[1].split(" ", 1)[0]


def _distinct_names(lines: list[str]) -> list[str]:
    names: list[str] = []
    for line in lines:
        n = _short_name(line)
        if n not in names:
            names.append(n)
    return names


def _days_since_negative(
    cultures: list[dict], antibiotic_lines: list[str], *, all_negative: bool = True
) -> int | None:
    vcm_days = sorted({_d(line[:10]) for line in antibiotic_lines if _short_name(line) == VANCOMYCIN})
    if not vcm_days:
        return None
    by_day: dict[date, list[bool]] = {}
    for c in cultures:
        by_day.setdefault(_d(c["date"]), []).append(not c["species"])
    rule = all if all_negative else any
    negative = [day for day, neg in sorted(by_day.items()) if day >= vcm_days[0] and rule(neg)]
    if not negative:
        return None
    return sum(1 for day in vcm_days if day >= negative[0])


def _last(steps: list[Step], tool: str) -> Step | None:
    for s in reversed(steps):
        if s.tool_name == tool:
            return s
    return None


def _final(value: Any) -> FinalAnswer:
    return FinalAnswer(answer_text(value))


GIVE_UP = {"error": "Required data could not be retrieved."}


# --- the oracle ------------------------------------------------------------------


def _oracle_body_weight(b: dict, steps: list[Step]) -> Action:
    if not steps:
        return ToolCall("patient_basic_info", {"patient_id": b["patient_id"]})
    info = _payload(steps[-1])
    if not info or not info.get("latest_somatometry"):
        return _final(GIVE_UP)
    return _final({"weight": info["latest_somatometry"]["weight"]})


def _oracle_lab_data(b: dict, steps: list[Step]) -> Action:
    d = _d(b["intervention_date"])
    hit = _latest_lab(steps, "WBC", d)
    if hit is not None:
        return _final({"wbc": _wbc_value(hit[1], hit[2])})
    window = _next_lab_window(d, steps, (d - timedelta(days=30), d))
    if window is None:
        return _final(GIVE_UP)
    return ToolCall("lab_results", _window_args(b["patient_id"], *window))


def _oracle_culture_history(b: dict, steps: list[Step]) -> Action:
    if not steps:
        return ToolCall(
            "bacteria_results", _window_args(b["patient_id"], _d(b["start_date"]), _d(b["end_date"]))
        )
    return _final({"results": _blood_entries(steps)})


def _oracle_antibiotics(b: dict, steps: list[Step]) -> Action:
    d = _d(b["intervention_date"])
    if not steps:
        return ToolCall("antibiotics_treatment", _window_args(b["patient_id"], d, d))
    return _final({"antibiotics": _distinct_names(_antibiotic_lines(steps[-1]))})


def _oracle_calculate_ccr(b: dict, steps: list[Step]) -> Action:
    pid = b["patient_id"]
    d = _d(b["intervention_date"])
    info_step = _last(steps, "patient_basic_info")
    if info_step is None:
        return ToolCall("patient_basic_info", {"patient_id": pid})
    cg = _last(steps, "calculate_cockcroft_gault")
    if cg is not None:
        result = _payload(cg)
        return _final({"ccr": result["creatinine_clearance"]} if result else GIVE_UP)
    info = _payload(info_step)
    if not info or not info.get("latest_somatometry"):
        return _final(GIVE_UP)
    hit = _latest_lab(steps, "CRE", d)
    if hit is None:
        window = _next_lab_window(d, steps, (d, d))
        if window is None:
            return _final(GIVE_UP)
        if len([s for s in steps if s.tool_name == "lab_results"]) == 1 and window[1] < d:
            window = (d - timedelta(days=30), d)
        return ToolCall("lab_results", _window_args(pid, *window))
    return ToolCall(
        "calculate_cockcroft_gault",
        {
            "age": int(b["age"]),
            "sex": binding_sex(b["sex"]),
            "weight": info["latest_somatometry"]["weight"],
            "serum_creatinine": float(Decimal(hit[2].split(" ", 1)[0])),
        },
    )


def _oracle_culture_neg_abx(b: dict, steps: list[Step]) -> Action:
    pid = b["patient_id"]
    start, end = _d(b["start_date"]), _d(b["end_date"])
    if _last(steps, "bacteria_results") is None:
        return ToolCall("bacteria_results", _window_args(pid, start, end))
    abx = _last(steps, "antibiotics_treatment")
    if abx is None:
        return ToolCall("antibiotics_treatment", _window_args(pid, start, end))
    days = _days_since_negative(_blood_entries(steps), _antibiotic_lines(abx))
    return _final(GIVE_UP if days is None else {"days_abx_since_first_neg_blood_culture": days})


ORACLES: dict[str, Callable[[dict, list[Step]], Action]] = {
    "body_weight": _oracle_body_weight,
    "lab_data": _oracle_lab_data,
    "culture_history": _oracle_culture_history,
    "antibiotics": _oracle_antibiotics,
    "calculate_ccr": _oracle_calculate_ccr,
    "culture_neg_abx": _oracle_culture_neg_abx,
}


class ScriptedOracle:
    """Issues the expected tool calls with correct arguments and answers correctly."""

    def __init__(self, task: str, bindings: dict):
        if task not in ORACLES:
            raise ValueError(f"unknown task: {task}")
        self.task = task
        self.bindings = dict(bindings)

    def decide(self, prompt: str, steps: list[Step], tools: list[dict]) -> Action:
        return ORACLES[self.task](self.bindings, steps)


def scripted_oracle_agent(task: str, bindings: dict) -> ScriptedOracle:
    return ScriptedOracle(task, bindings)


# --- fault injection -------------------------------------------------------------


def force_wrong(task: str, value: Any, gold: Any) -> Any:
    """Return ``value`` unless it would score perfectly, else a minimally altered copy."""
    if not isinstance(value, dict) or set(value) != set(TASKS[task].answer_schema["properties"]):
        return value
    try:
        perfect = all(v == 1.0 for v in _metric_values(task, value, gold).values())
    except (KeyError, TypeError, ValueError):
        return value
    if not perfect:
        return value
    if task == "body_weight":
        return {"weight": round(value["weight"] + 1.0, 1)}
    if task == "lab_data":
        return {"wbc": value["wbc"] + 100}
    if task == "calculate_ccr":
        return {"ccr": round(value["ccr"] + 1.0, 1)}
    if task == "culture_neg_abx":
        key = "days_abx_since_first_neg_blood_culture"
        return {key: value[key] + 1}
    if task == "antibiotics":
        names = list(value["antibiotics"])
        return {"antibiotics": [n for n in names if n != "VCM"] if "VCM" in names else names + ["VCM"]}
    results = list(value["results"])
    first = results[0]["date"] if results else "2024-01-01"
    return {"results": results + [{"date": first, "species": ["Staphylococcus aureus"]}]}


WRONG_TOOL_NAMES = {
    "body_weight": "get_body_weight",
    "lab_data": "get_wbc_count",
    "culture_history": "blood_culture_results",
    "antibiotics": "medication_orders",
}


class FaultInjector:
    """A policy that departs from the oracle in exactly one error category."""

    def __init__(self, category: ErrorCategory | str, task: str, bindings: dict, gold: GoldAnswer):
        self.category = ErrorCategory(category)
        self.task = task
        self.bindings = dict(bindings)
        self.gold = gold
        self._oracle = ScriptedOracle(task, bindings)

    def decide(self, prompt: str, steps: list[Step], tools: list[dict]) -> Action:
        handler = getattr(self, f"_{self.category.value}")
        return handler(steps, tools)

    def _wrong(self, value: Any) -> FinalAnswer:
        return _final(force_wrong(self.task, value, self.gold.value))

    def _hallucinate(self) -> FinalAnswer:
        return self._wrong(PROMPT_EXAMPLES[self.task])

    # output_format: correct work, answer wrapped in a code fence
    def _output_format(self, steps: list[Step], tools: list[dict]) -> Action:
        action = self._oracle.decide("", steps, tools)
        if isinstance(action, FinalAnswer):
            return FinalAnswer(f"```json\n{action.text}\n```")
        return action

    # tool_invocation: a tool that does not exist, or a required tool skipped
    def _tool_invocation(self, steps: list[Step], tools: list[dict]) -> Action:
        b = self.bindings
        if self.task in WRONG_TOOL_NAMES:
            if not steps:
                first = self._oracle.decide("", [], tools)
                assert isinstance(first, ToolCall)
                return ToolCall(WRONG_TOOL_NAMES[self.task], first.arguments)
            return self._hallucinate()
        if self.task == "calculate_ccr":
            if not steps:
                return ToolCall("patient_basic_info", {"patient_id": b["patient_id"]})
            if len(steps) == 1:
                info = _payload(steps[0]) or {}
                weight = (info.get("latest_somatometry") or {}).get("weight", 60.0)
                return ToolCall(
                    "calculate_cockcroft_gault",
                    {"age": int(b["age"]), "sex": binding_sex(b["sex"]), "weight": weight, "serum_creatinine": 1.0},
                )
            result = _payload(steps[-1])
            return self._wrong({"ccr": result["creatinine_clearance"]} if result else GIVE_UP)
        # culture_neg_abx: never looks at the antibiotic records
        if not steps:
            return ToolCall(
                "bacteria_results", _window_args(b["patient_id"], _d(b["start_date"]), _d(b["end_date"]))
            )
        return self._hallucinate()

    # argument: wrong patient, a window that misses the needed records, or an overly broad one
    def _argument(self, steps: list[Step], tools: list[dict]) -> Action:
        b = self.bindings
        pid = b["patient_id"]
        d = _d(b["intervention_date"])
        start, end = _d(b["start_date"]), _d(b["end_date"])
        year_start = date(d.year, 1, 1)
        if self.task == "body_weight":
            if not steps:
                return ToolCall("patient_basic_info", {"patient_id": pid + "0"})
            return self._hallucinate()
        if self.task == "lab_data":
            if not steps:
                return ToolCall("lab_results", _window_args(pid, year_start, d))
            return self._hallucinate()
        if self.task == "culture_history":
            if not steps:
                return ToolCall("bacteria_results", _window_args(pid, d, end))
            return self._wrong({"results": _blood_entries(steps)})
        if self.task == "antibiotics":
            if not steps:
                day = d - timedelta(days=1)
                return ToolCall("antibiotics_treatment", _window_args(pid, day, day))
            return self._wrong({"antibiotics": _distinct_names(_antibiotic_lines(steps[-1]))})
        if self.task == "calculate_ccr":
            if not steps:
                return ToolCall("patient_basic_info", {"patient_id": pid})
            if len(steps) == 1:
                needed = self.gold.evidence.get("windows", {}).get("lab_results", [])
                if needed and _d(needed[0]) < d:
                    return ToolCall("lab_results", _window_args(pid, d, d))
                return ToolCall("lab_results", _window_args(pid, year_start, d))
            return self._hallucinate()
        # culture_neg_abx: antibiotic window cut off at the intervention date
        if not steps:
            return ToolCall("bacteria_results", _window_args(pid, start, end))
        if len(steps) == 1:
            return ToolCall("antibiotics_treatment", _window_args(pid, start, d))
        days = _days_since_negative(_blood_entries(steps), _antibiotic_lines(steps[-1]))
        return self._wrong({"days_abx_since_first_neg_blood_culture": days or 0})

    # interpretation: the oracle's calls, a misread answer
    def _interpretation(self, steps: list[Step], tools: list[dict]) -> Action:
        action = self._oracle.decide("", steps, tools)
        if not isinstance(action, FinalAnswer):
            return action
        b = self.bindings
        if self.task == "body_weight":
            soma = _payload(steps[-1])["latest_somatometry"]
            misread = soma.get("body_mass_index") or soma.get("height")
            return self._wrong({"weight": misread})
        if self.task == "lab_data":
            rows = _all_labs(steps, "WBC", _d(b["intervention_date"]))
            stamp, name, shown = rows[0]
            return self._wrong({"wbc": _wbc_value(name, shown)})
        if self.task == "culture_history":
            return self._wrong({"results": _blood_entries(steps, ("blood", "sputum", "urine"))})
        if self.task == "antibiotics":
            lines = _antibiotic_lines(steps[-1])
            return self._wrong({"antibiotics": [_short_name(lines[-1])] if lines else ["VCM"]})
        if self.task == "calculate_ccr":
            ccr = _payload(steps[-1])["creatinine_clearance"]
            return self._wrong({"ccr": float(int(ccr))})
        abx = _last(steps, "antibiotics_treatment")
        days = _days_since_negative(_blood_entries(steps), _antibiotic_lines(abx), all_negative=False)
        return self._wrong({"days_abx_since_first_neg_blood_culture": days or 0})


def make_fault_injector(
    category: ErrorCategory | str, task: str, bindings: dict, gold: GoldAnswer
) -> FaultInjector:
    return FaultInjector(category, task, bindings, gold)


def expressible(category: ErrorCategory | str, task: str) -> bool:
    """Whether ``category`` can be injected into ``task``; true for all 24 pairs here."""
    return task in TASKS and ErrorCategory(category) in ErrorCategory
