"""Gold answers computed straight from the warehouse.

Besides the answer itself, each gold record carries the *evidence* a correct
run has to look at: which dates each retrieval tool must cover and, for the
creatinine-clearance task, the exact calculator inputs. The error classifier
works from that evidence, so a stored run can be re-scored without the
warehouse.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import date
from decimal import Decimal
from typing import Any

from .tasks import TASKS, binding_sex, make_bindings
from .tools import cockcroft_gault_unrounded, round_half_up
from .warehouse import ANALYTE_BY_NAME, Warehouse, lab_value_decimal

VANCOMYCIN = "VCM"


class GoldError(ValueError):
    """The warehouse lacks data a task needs; a generator defect, never a zero."""


@dataclass(frozen=True)
class GoldAnswer:
    task: str
    patient_id: str
    value: Any = None
    excluded: bool = False
    reason: str | None = None
    evidence: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "GoldAnswer":
        return cls(**data)


def _latest_analyte(wh: Warehouse, patient_id: str, key: str, until: date):
    rows = [
        r
        for r in wh.query_labs(patient_id, date.min, until, limit=None)
        if ANALYTE_BY_NAME[r.analyte].key == key
    ]
    return max(rows, key=lambda r: (r.collected_at, r.record_id), default=None)


def wbc_per_microliter(analyte: str, value: float, unit: str) -> int:
    amount = lab_value_decimal(analyte, value)
    if unit == "10^3/µL":
        amount *= 1000
    return int(amount.to_integral_value())


def gold_answer(task: str, patient_id: str, wh: Warehouse) -> GoldAnswer:
    if task not in TASKS:
        raise ValueError(f"unknown task: {task}")
    b = make_bindings(wh, patient_id)
    d = date.fromisoformat(b["intervention_date"])
    start = date.fromisoformat(b["start_date"])
    end = date.fromisoformat(b["end_date"])
    patient, soma = wh.get_patient(patient_id)
    ev: dict[str, Any] = {"patient_id": patient_id, "windows": {}}

    def done(value: Any) -> GoldAnswer:
        return GoldAnswer(task, patient_id, value, evidence=ev)

    if task == "body_weight":
        if soma is None:
            raise GoldError(f"{patient_id}: no somatometry record")
        return done({"weight": soma.weight})

    if task == "lab_data":
        wbc = _latest_analyte(wh, patient_id, "WBC", d)
        if wbc is None:
            raise GoldError(f"{patient_id}: no WBC on or before {d}")
        ev["windows"]["lab_results"] = [wbc.collected_at.date().isoformat()]
        return done({"wbc": wbc_per_microliter(wbc.analyte, wbc.value, wbc.unit)})

    if task == "culture_history":
        blood = [c for c in wh.query_cultures(patient_id, start, end) if c.specimen == "blood"]
        ev["windows"]["bacteria_results"] = sorted({c.collected_at.date().isoformat() for c in blood})
        return done(
            {
                "results": [
                    {"date": c.collected_at.date().isoformat(), "species": list(c.organisms)}
                    for c in blood
                ]
            }
        )

    if task == "antibiotics":
        names: list[str] = []
        for a in wh.query_antibiotics(patient_id, d, d):
            if a.short_name not in names:
                names.append(a.short_name)
        ev["windows"]["antibiotics_treatment"] = [d.isoformat()]
        return done({"antibiotics": names})

    if task == "calculate_ccr":
        if patient.on_dialysis:
            return GoldAnswer(task, patient_id, None, True, "dialysis", ev)
        if soma is None:
            raise GoldError(f"{patient_id}: no somatometry record")
        cre = _latest_analyte(wh, patient_id, "CRE", d)
        if cre is None:
            raise GoldError(f"{patient_id}: no serum creatinine on or before {d}")
        scr = lab_value_decimal(cre.analyte, cre.value)
        sex = binding_sex(b["sex"])
        ccr = round_half_up(
            cockcroft_gault_unrounded(b["age"], sex, Decimal(repr(soma.weight)), scr)
        )
        ev["windows"]["lab_results"] = [cre.collected_at.date().isoformat()]
        ev["cockcroft_gault"] = {
            "age": b["age"],
            "sex": sex,
            "weight": soma.weight,
            "serum_creatinine": float(scr),
        }
        return done({"ccr": float(ccr)})

    # culture_neg_abx
    vcm_days = sorted(
        {a.date for a in wh.query_antibiotics(patient_id, start, end) if a.short_name == VANCOMYCIN}
    )
    if not vcm_days:
        return GoldAnswer(task, patient_id, None, True, "no vancomycin in window", ev)
    v0 = vcm_days[0]
    by_day: dict[date, list[bool]] = {}
    for c in wh.query_cultures(patient_id, start, end):
        if c.specimen == "blood":
            by_day.setdefault(c.collected_at.date(), []).append(c.negative)
    negative_days = [day for day, neg in sorted(by_day.items()) if day >= v0 and all(neg)]
    if not negative_days:
        raise GoldError(f"{patient_id}: no negative blood culture day after vancomycin start")
    d0 = negative_days[0]
    counted = [day for day in vcm_days if day >= d0]
    ev["windows"]["bacteria_results"] = [day.isoformat() for day in sorted(by_day) if v0 <= day <= d0]
    ev["windows"]["antibiotics_treatment"] = sorted({v0.isoformat(), *(x.isoformat() for x in counted)})
    return done({"days_abx_since_first_neg_blood_culture": len(counted)})


def eligible(task: str, patient_id: str, wh: Warehouse) -> bool:
    return not gold_answer(task, patient_id, wh).excluded
