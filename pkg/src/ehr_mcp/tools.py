"""The five clinical tools, shaped like the DWH tool payloads."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, datetime
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Callable

from .warehouse import (
    DEFAULT_RECORD_LIMIT,
    RecordLimitExceeded,
    UnknownPatient,
    Warehouse,
)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"

SEX_LABELS = {"ja": {"male": "男性", "female": "女性"}, "en": {"male": "male", "female": "female"}}

_DATE = {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}$", "description": "YYYY-MM-DD"}
_PATIENT = {"type": "string", "description": "Patient identifier"}


def _window_schema() -> dict:
    return {
        "type": "object",
        "properties": {"patient_id": _PATIENT, "start_date": _DATE, "end_date": _DATE},
        "required": ["patient_id", "start_date", "end_date"],
        "additionalProperties": False,
    }


# Published order is the order tools/list returns.
TOOL_SPECS: dict[str, tuple[str, dict]] = {
    "patient_basic_info": (
        "Retrieves basic patient information (sex, date of birth, allergies, and latest "
        "anthropometric data).",
        {
            "type": "object",
            "properties": {"patient_id": _PATIENT},
            "required": ["patient_id"],
            "additionalProperties": False,
        },
    ),
    "lab_results": (
        "Retrieves clinical laboratory data (e.g., blood and urine tests) within the "
        "specified period.",
        _window_schema(),
    ),
    "bacteria_results": (
        "Retrieves bacterial culture results (e.g., blood, sputum, urine) within the "
        "specified period, including antimicrobial susceptibility.",
        _window_schema(),
    ),
    "antibiotics_treatment": (
        "Retrieves antibiotic treatment records (oral and intravenous) within the specified "
        "period, limited to predefined antibiotics.",
        _window_schema(),
    ),
    "calculate_cockcroft_gault": (
        "Calculates creatinine clearance using the Cockcroft-Gault equation based on the "
        "given parameters.",
        {
            "type": "object",
            "properties": {
                "age": {"type": "integer", "minimum": 18, "description": "Age in years"},
                "sex": {"type": "string", "enum": ["male", "female"]},
                "weight": {"type": "number", "exclusiveMinimum": 0, "description": "kg"},
                "serum_creatinine": {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "description": "mg/dL",
                },
            },
            "required": ["age", "sex", "weight", "serum_creatinine"],
            "additionalProperties": False,
        },
    ),
}


class ToolError(Exception):
    code = "execution_error"


class InvalidParams(ToolError):
    code = "invalid_params"

    def __init__(self, field: str, reason: str):
        super().__init__(f"Invalid argument '{field}': {reason}")
        self.field = field


class ExecutionError(ToolError):
    code = "execution_error"


class UnknownTool(ToolError):
    code = "unknown_tool"

    def __init__(self, name: str):
        super().__init__(f"Unknown tool: {name}")


def render_payload(payload: Any) -> str:
    """Serialize a tool payload as the text the agent sees."""
    return json.dumps(payload, ensure_ascii=False, indent=2)


def _stamp(value: datetime) -> str:
    return value.strftime(TIMESTAMP_FORMAT)


def _parse_date(args: dict, field: str) -> date:
    raw = args.get(field)
    if not isinstance(raw, str):
        raise InvalidParams(field, "expected a YYYY-MM-DD string")
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise InvalidParams(field, f"not a valid date: {raw!r}") from None


def _window(args: dict) -> tuple[str, date, date]:
    pid = args.get("patient_id")
    if not isinstance(pid, str) or not pid:
        raise InvalidParams("patient_id", "expected a non-empty string")
    start = _parse_date(args, "start_date")
    end = _parse_date(args, "end_date")
    if start > end:
        raise InvalidParams("start_date", f"start_date {start} is after end_date {end}")
    return pid, start, end


def _real(args: dict, field: str) -> Decimal:
    raw = args.get(field)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or not math.isfinite(raw):
        raise InvalidParams(field, "expected a finite number")
    if raw <= 0:
        raise InvalidParams(field, "must be greater than 0")
    return Decimal(repr(raw)) if isinstance(raw, float) else Decimal(raw)


def cockcroft_gault_unrounded(age: int, sex: str, weight: Decimal, scr: Decimal) -> Decimal:
    ccr = (Decimal(140 - age) * weight) / (Decimal(72) * scr)
    if sex == "female":
        ccr *= Decimal("0.85")
    return ccr


def round_half_up(value: Decimal, places: str = "0.1") -> Decimal:
    return value.quantize(Decimal(places), rounding=ROUND_HALF_UP)


def cockcroft_gault(age: int, sex: str, weight: float, serum_creatinine: float) -> float:
    """Creatinine clearance in mL/min, rounded half-up to one decimal."""
    args = {"age": age, "sex": sex, "weight": weight, "serum_creatinine": serum_creatinine}
    age, sex, w, scr = _cg_inputs(args)
    return float(round_half_up(cockcroft_gault_unrounded(age, sex, w, scr)))


def _cg_inputs(args: dict) -> tuple[int, str, Decimal, Decimal]:
    age = args.get("age")
    if isinstance(age, float) and age.is_integer():
        age = int(age)
    if isinstance(age, bool) or not isinstance(age, int):
        raise InvalidParams("age", "expected an integer number of years")
    if age < 18:
        raise InvalidParams("age", "must be at least 18")
    if age >= 140:
        raise InvalidParams("age", "must be below 140")
    sex = args.get("sex")
    if sex not in ("male", "female"):
        raise InvalidParams("sex", "expected 'male' or 'female'")
    return age, sex, _real(args, "weight"), _real(args, "serum_creatinine")


@dataclass
class ClinicalTools:
    """Tool implementations over one warehouse. Stateless and reentrant."""

    warehouse: Warehouse
    record_limit: int = DEFAULT_RECORD_LIMIT
    locale: str | None = None

    def __post_init__(self) -> None:
        if self.locale is None:
            self.locale = self.warehouse.profile
        self._dispatch: dict[str, Callable[[dict], Any]] = {
            "patient_basic_info": self.patient_basic_info,
            "lab_results": self.lab_results,
            "bacteria_results": self.bacteria_results,
            "antibiotics_treatment": self.antibiotics_treatment,
            "calculate_cockcroft_gault": self.calculate_cockcroft_gault,
        }

    @property
    def names(self) -> list[str]:
        return list(TOOL_SPECS)

    def call(self, name: str, args: dict) -> Any:
        fn = self._dispatch.get(name)
        if fn is None:
            raise UnknownTool(name)
        try:
            return fn(args)
        except UnknownPatient as exc:
            raise ExecutionError(str(exc)) from exc
        except RecordLimitExceeded as exc:
            raise ExecutionError(str(exc)) from exc

    def patient_basic_info(self, args: dict) -> dict:
        pid = args.get("patient_id")
        if not isinstance(pid, str) or not pid:
            raise InvalidParams("patient_id", "expected a non-empty string")
        patient, latest = self.warehouse.get_patient(pid)
        soma = None
        if latest is not None:
            soma = {
                "somatometry_date": _stamp(latest.measured_at),
                "height": latest.height,
                "weight": latest.weight,
                "body_mass_index": latest.bmi,
            }
        return {
            "personal_info": {
                "sex": patient.sex,
                "date_of_birth": patient.date_of_birth.isoformat(),
            },
            "allergies": list(patient.allergies),
            "latest_somatometry": soma,
        }

    def lab_results(self, args: dict) -> dict:
        pid, start, end = _window(args)
        rows = self.warehouse.query_labs(pid, start, end, limit=self.record_limit)
        out: dict[str, dict[str, str]] = {}
        for r in rows:
            out.setdefault(_stamp(r.collected_at), {})[r.analyte] = r.display
        return out

    def bacteria_results(self, args: dict) -> list:
        pid, start, end = _window(args)
        return [
            {
                "specimen": c.specimen,
                "collected_at": _stamp(c.collected_at),
                "organisms": list(c.organisms),
                "susceptibility": {
                    org: [{"antimicrobial": drug, "result": sir} for drug, sir in rows]
                    for org, rows in c.susceptibilities
                },
            }
            for c in self.warehouse.query_cultures(pid, start, end)
        ]

    def antibiotics_treatment(self, args: dict) -> dict:
        pid, start, end = _window(args)
        oral, iv = [], []
        for a in self.warehouse.query_antibiotics(pid, start, end):
            line = f"{a.date.isoformat()} - {a.short_name} {a.dose_text}"
            (oral if a.route == "oral" else iv).append(line)
        return {
            "antibiotics_found": bool(oral or iv),
            "oral_antibiotics": oral,
            "iv_antibiotics": iv,
        }

    def calculate_cockcroft_gault(self, args: dict) -> dict:
        age, sex, weight, scr = _cg_inputs(args)
        ccr = round_half_up(cockcroft_gault_unrounded(age, sex, weight, scr))
        return {
            "creatinine_clearance": float(ccr),
            "unit": "mL/min",
            "parameters": {
                "age": age,
                "sex": SEX_LABELS.get(self.locale, SEX_LABELS["en"])[sex],
                "weight": args["weight"],
                "serum_creatinine": args["serum_creatinine"],
            },
        }
