"""Read-only clinical record store: data model, NDJSON I/O and range queries."""

from __future__ import annotations

import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Sequence

JST = timezone(timedelta(hours=9))

TABLE_FILES = (
    "patients.ndjson",
    "somatometry.ndjson",
    "labs.ndjson",
    "cultures.ndjson",
    "antibiotics.ndjson",
)
COHORT_FILE = "cohort.json"

DEFAULT_RECORD_LIMIT = 1000

SPECIMENS = ("blood", "sputum", "urine")
ROUTES = ("oral", "iv")
SEXES = ("male", "female")

DEFAULT_ANTIBIOTICS = (
    "VCM",
    "CTRX",
    "SBT/ABPC",
    "MEPM",
    "TAZ/PIPC",
    "CFPM",
    "CEZ",
    "ABPC",
    "LVFX",
    "DAP",
    "LZD",
)


@dataclass(frozen=True)
class Analyte:
    key: str
    ja: str
    en: str
    unit: str
    decimals: int


# Blood panel first, urinalysis after. Display names are what the tools echo.
ANALYTES = (
    Analyte("WBC", "白血球数（WBC）", "White blood cell count (WBC)", "10^3/µL", 1),
    Analyte("RBC", "赤血球数（RBC）", "Red blood cell count (RBC)", "10^6/µL", 2),
    Analyte("HGB", "ヘモグロビン（Hb）", "Hemoglobin (Hb)", "g/dL", 1),
    Analyte("PLT", "血小板数(PLT)", "Platelet count (PLT)", "10^3/µL", 0),
    Analyte("CRP", "CRP定量", "C-reactive protein (CRP)", "mg/dL", 2),
    Analyte("AST", "AST（GOT）", "AST (GOT)", "U/L", 0),
    Analyte("ALT", "ALT（GPT）", "ALT (GPT)", "U/L", 0),
    Analyte("LDH", "LD（LDH）", "Lactate dehydrogenase (LDH)", "U/L", 0),
    Analyte("ALP", "ALP", "Alkaline phosphatase (ALP)", "U/L", 0),
    Analyte("TBIL", "総ビリルビン", "Total bilirubin", "mg/dL", 1),
    Analyte("BUN", "尿素窒素（UN)", "Urea nitrogen (UN)", "mg/dL", 1),
    Analyte("CRE", "クレアチニン", "Creatinine", "mg/dL", 2),
    Analyte("NA", "ナトリウム", "Sodium", "mEq/L", 0),
    Analyte("K", "カリウム", "Potassium", "mEq/L", 1),
    Analyte("UPRO", "尿蛋白定量", "Urine protein", "mg/dL", 0),
    Analyte("UGLU", "尿糖定量", "Urine glucose", "mg/dL", 0),
    Analyte("UCRE", "尿中クレアチニン", "Urine creatinine", "mg/dL", 1),
    Analyte("UNA", "尿中ナトリウム", "Urine sodium", "mEq/L", 0),
)
BLOOD_PANEL = tuple(a.key for a in ANALYTES if not a.key.startswith("U"))
URINE_PANEL = tuple(a.key for a in ANALYTES if a.key.startswith("U"))

ANALYTE_BY_KEY = {a.key: a for a in ANALYTES}
ANALYTE_BY_NAME = {name: a for a in ANALYTES for name in (a.ja, a.en)}


def analyte_name(key: str, profile: str) -> str:
    a = ANALYTE_BY_KEY[key]
    return a.ja if profile == "ja" else a.en


def format_lab_value(analyte: str, value: float, unit: str) -> str:
    """Render a lab value as ``"<value> <unit>"`` with the catalog's precision."""
    decimals = ANALYTE_BY_NAME[analyte].decimals
    return f"{value:.{decimals}f} {unit}"


def lab_value_decimal(analyte: str, value: float) -> Decimal:
    return Decimal(f"{value:.{ANALYTE_BY_NAME[analyte].decimals}f}")


class WarehouseError(Exception):
    """Raised when warehouse files are missing, malformed or inconsistent."""


class UnknownPatient(LookupError):
    def __init__(self, patient_id: str):
        super().__init__(f"Patient not found: {patient_id}")
        self.patient_id = patient_id


class RecordLimitExceeded(Exception):
    def __init__(self, matched: int, limit: int):
        self.matched = matched
        self.limit = limit
        super().__init__(
            f"Too many items matched ({matched} records). "
            f"Try again with shorter duration or more strict conditions. (max: {limit})"
        )


@dataclass(frozen=True)
class Patient:
    patient_id: str
    sex: str
    date_of_birth: date
    allergies: tuple[str, ...] = ()
    on_dialysis: bool = False


@dataclass(frozen=True)
class Somatometry:
    record_id: int
    patient_id: str
    measured_at: datetime
    height: float | None
    weight: float
    bmi: float | None


@dataclass(frozen=True)
class LabResult:
    record_id: int
    patient_id: str
    collected_at: datetime
    analyte: str
    value: float
    unit: str

    @property
    def display(self) -> str:
        return format_lab_value(self.analyte, self.value, self.unit)


@dataclass(frozen=True)
class CultureResult:
    record_id: int
    patient_id: str
    specimen: str
    collected_at: datetime
    organisms: tuple[str, ...] = ()
    # per organism: ((antimicrobial, "S"|"I"|"R"), ...)
    susceptibilities: tuple[tuple[str, tuple[tuple[str, str], ...]], ...] = ()

    @property
    def negative(self) -> bool:
        return not self.organisms


@dataclass(frozen=True)
class AntibioticAdministration:
    record_id: int
    patient_id: str
    date: date
    route: str
    short_name: str
    dose_text: str


@dataclass(frozen=True)
class Case:
    """One reviewed patient and the date the review started."""

    patient_id: str
    intervention_date: date


def _day(record: Any) -> date:
    if isinstance(record, AntibioticAdministration):
        return record.date
    stamp = record.measured_at if isinstance(record, Somatometry) else record.collected_at
    return stamp.date()


def _sort_key(record: Any) -> tuple:
    if isinstance(record, AntibioticAdministration):
        return (record.patient_id, record.date, record.record_id)
    stamp = record.measured_at if isinstance(record, Somatometry) else record.collected_at
    return (record.patient_id, stamp.date(), stamp, record.record_id)


class _DayIndex:
    """Per-patient records ordered by day, searchable by inclusive date range."""

    def __init__(self, records: Iterable[Any]):
        self._rows: dict[str, list[Any]] = {}
        for r in records:
            self._rows.setdefault(r.patient_id, []).append(r)
        self._days = {
            pid: [_day(r).toordinal() for r in rows] for pid, rows in self._rows.items()
        }

    def between(self, patient_id: str, start: date, end: date) -> list[Any]:
        rows = self._rows.get(patient_id)
        if not rows:
            return []
        days = self._days[patient_id]
        lo = bisect_left(days, start.toordinal())
        hi = bisect_right(days, end.toordinal())
        return rows[lo:hi]

    def all(self, patient_id: str) -> list[Any]:
        return list(self._rows.get(patient_id, ()))


@dataclass(frozen=True, eq=True)
class Warehouse:
    patients: tuple[Patient, ...] = ()
    somatometry: tuple[Somatometry, ...] = ()
    labs: tuple[LabResult, ...] = ()
    cultures: tuple[CultureResult, ...] = ()
    antibiotics: tuple[AntibioticAdministration, ...] = ()
    cases: tuple[Case, ...] = ()
    profile: str = "ja"
    antibiotic_catalog: tuple[str, ...] = DEFAULT_ANTIBIOTICS
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "patients", tuple(sorted(self.patients, key=lambda p: p.patient_id)))
        for name in ("somatometry", "labs", "cultures", "antibiotics"):
            set_(self, name, tuple(sorted(getattr(self, name), key=_sort_key)))
        set_(self, "cases", tuple(sorted(self.cases, key=lambda c: c.patient_id)))
        self._validate()
        self._index["patients"] = {p.patient_id: p for p in self.patients}
        self._index["somatometry"] = _DayIndex(self.somatometry)
        self._index["labs"] = _DayIndex(self.labs)
        self._index["cultures"] = _DayIndex(self.cultures)
        self._index["antibiotics"] = _DayIndex(self.antibiotics)

    def _validate(self) -> None:
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise WarehouseError("duplicate patient_id in patients table")
        born = {p.patient_id: p.date_of_birth for p in self.patients}
        for table in ("somatometry", "labs", "cultures", "antibiotics"):
            seen: set[int] = set()
            for r in getattr(self, table):
                if r.patient_id not in born:
                    raise WarehouseError(
                        f"{table}: record {r.record_id} references unknown patient {r.patient_id}"
                    )
                if r.record_id in seen:
                    raise WarehouseError(f"{table}: duplicate record_id {r.record_id}")
                seen.add(r.record_id)
                if _day(r) <= born[r.patient_id]:
                    raise WarehouseError(
                        f"{table}: record {r.record_id} is dated on or before date_of_birth"
                    )
        for c in self.cases:
            if c.patient_id not in born:
                raise WarehouseError(f"cohort: unknown patient {c.patient_id}")

    @property
    def patient_ids(self) -> list[str]:
        return [p.patient_id for p in self.patients]

    def case(self, patient_id: str) -> Case:
        for c in self.cases:
            if c.patient_id == patient_id:
                return c
        raise UnknownPatient(patient_id)

    def _require(self, patient_id: str) -> Patient:
        try:
            return self._index["patients"][patient_id]
        except KeyError:
            raise UnknownPatient(patient_id) from None

    def get_patient(self, patient_id: str) -> tuple[Patient, Somatometry | None]:
        patient = self._require(patient_id)
        rows = self._index["somatometry"].all(patient_id)
        latest = max(rows, key=lambda s: (s.measured_at, s.record_id), default=None)
        return patient, latest

    def query_labs(
        self, patient_id: str, start: date, end: date, limit: int | None = DEFAULT_RECORD_LIMIT
    ) -> list[LabResult]:
        rows = self._range("labs", patient_id, start, end)
        if limit is not None and len(rows) > limit:
            raise RecordLimitExceeded(len(rows), limit)
        return rows

    def query_cultures(self, patient_id: str, start: date, end: date) -> list[CultureResult]:
        return self._range("cultures", patient_id, start, end)

    def query_antibiotics(
        self, patient_id: str, start: date, end: date
    ) -> list[AntibioticAdministration]:
        return self._range("antibiotics", patient_id, start, end)

    def _range(self, table: str, patient_id: str, start: date, end: date) -> list:
        self._require(patient_id)
        if start > end:
            raise ValueError(f"start date {start} is after end date {end}")
        return self._index[table].between(patient_id, start, end)


# --- serialization -----------------------------------------------------------


def _iso(value: date | datetime) -> str:
    return value.isoformat()


def _record_to_json(record: Any) -> dict:
    if isinstance(record, Patient):
        return {
            "patient_id": record.patient_id,
            "sex": record.sex,
            "date_of_birth": _iso(record.date_of_birth),
            "allergies": list(record.allergies),
            "on_dialysis": record.on_dialysis,
        }
    if isinstance(record, Somatometry):
        return {
            "record_id": record.record_id,
            "patient_id": record.patient_id,
            "measured_at": _iso(record.measured_at),
            "height": record.height,
            "weight": record.weight,
            "bmi": record.bmi,
        }
    if isinstance(record, LabResult):
        return {
            "record_id": record.record_id,
            "patient_id": record.patient_id,
            "collected_at": _iso(record.collected_at),
            "analyte": record.analyte,
            "value": record.value,
            "unit": record.unit,
        }
    if isinstance(record, CultureResult):
        return {
            "record_id": record.record_id,
            "patient_id": record.patient_id,
            "specimen": record.specimen,
            "collected_at": _iso(record.collected_at),
            "organisms": list(record.organisms),
            "susceptibilities": {
                org: [[drug, sir] for drug, sir in rows] for org, rows in record.susceptibilities
            },
        }
    if isinstance(record, AntibioticAdministration):
        return {
            "record_id": record.record_id,
            "patient_id": record.patient_id,
            "date": _iso(record.date),
            "route": record.route,
            "short_name": record.short_name,
            "dose_text": record.dose_text,
        }
    raise TypeError(type(record))


def write_warehouse(wh: Warehouse, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tables = (wh.patients, wh.somatometry, wh.labs, wh.cultures, wh.antibiotics)
    for fname, rows in zip(TABLE_FILES, tables):
        with open(root / fname, "w", encoding="utf-8", newline="\n") as fh:
            for r in rows:
                fh.write(json.dumps(_record_to_json(r), ensure_ascii=False) + "\n")
    cohort = {
        "profile": wh.profile,
        "antibiotic_catalog": list(wh.antibiotic_catalog),
        "cases": [
            {"patient_id": c.patient_id, "intervention_date": _iso(c.intervention_date)}
            for c in wh.cases
        ],
    }
    (root / COHORT_FILE).write_text(
        json.dumps(cohort, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def _parse_datetime(text: str) -> datetime:
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {text!r}")
    return stamp


def _number(value: Any, name: str, *, optional: bool = False) -> float | None:
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number")
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    return float(value)


def _text(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{name} must be a non-empty string")
    return value


def _record_id(row: dict) -> int:
    rid = row["record_id"]
    if isinstance(rid, bool) or not isinstance(rid, int):
        raise ValueError("record_id must be an integer")
    return rid


def _parse_patient(row: dict, _: Sequence[str]) -> Patient:
    if row["sex"] not in SEXES:
        raise ValueError(f"sex must be one of {SEXES}")
    allergies = row.get("allergies", [])
    if not isinstance(allergies, list) or not all(isinstance(a, str) for a in allergies):
        raise ValueError("allergies must be a list of strings")
    if not isinstance(row.get("on_dialysis", False), bool):
        raise ValueError("on_dialysis must be a boolean")
    return Patient(
        patient_id=_text(row["patient_id"], "patient_id"),
        sex=row["sex"],
        date_of_birth=date.fromisoformat(row["date_of_birth"]),
        allergies=tuple(allergies),
        on_dialysis=row.get("on_dialysis", False),
    )


def _parse_somatometry(row: dict, _: Sequence[str]) -> Somatometry:
    weight = _number(row["weight"], "weight")
    if weight <= 0:
        raise ValueError("weight must be positive")
    height = _number(row.get("height"), "height", optional=True)
    bmi = _number(row.get("bmi"), "bmi", optional=True)
    if height is not None and bmi is not None:
        if height <= 0 or abs(weight / (height / 100) ** 2 - bmi) > 0.1:
            raise ValueError("bmi inconsistent with height and weight")
    return Somatometry(
        record_id=_record_id(row),
        patient_id=_text(row["patient_id"], "patient_id"),
        measured_at=_parse_datetime(row["measured_at"]),
        height=height,
        weight=weight,
        bmi=bmi,
    )


def _parse_lab(row: dict, _: Sequence[str]) -> LabResult:
    analyte = ANALYTE_BY_NAME.get(row["analyte"])
    if analyte is None or analyte.unit != row["unit"]:
        raise ValueError(f"analyte/unit not in catalog: {row['analyte']!r} {row['unit']!r}")
    value = _number(row["value"], "value")
    if value < 0:
        raise ValueError("value must be non-negative")
    return LabResult(
        record_id=_record_id(row),
        patient_id=_text(row["patient_id"], "patient_id"),
        collected_at=_parse_datetime(row["collected_at"]),
        analyte=row["analyte"],
        value=value,
        unit=row["unit"],
    )


def _parse_culture(row: dict, _: Sequence[str]) -> CultureResult:
    if row["specimen"] not in SPECIMENS:
        raise ValueError(f"specimen must be one of {SPECIMENS}")
    organisms = row.get("organisms", [])
    if not isinstance(organisms, list) or not all(isinstance(o, str) for o in organisms):
        raise ValueError("organisms must be a list of strings")
    raw = row.get("susceptibilities") or {}
    if not isinstance(raw, dict):
        raise ValueError("susceptibilities must be an object keyed by organism")
    susc = []
    for org, rows in raw.items():
        if org not in organisms:
            raise ValueError(f"susceptibility for organism not isolated: {org!r}")
        pairs = []
        for pair in rows:
            drug, sir = pair
            if sir not in ("S", "I", "R"):
                raise ValueError(f"susceptibility must be S, I or R, got {sir!r}")
            pairs.append((drug, sir))
        susc.append((org, tuple(pairs)))
    return CultureResult(
        record_id=_record_id(row),
        patient_id=_text(row["patient_id"], "patient_id"),
        specimen=row["specimen"],
        collected_at=_parse_datetime(row["collected_at"]),
        organisms=tuple(organisms),
        susceptibilities=tuple(susc),
    )


def _parse_antibiotic(row: dict, catalog: Sequence[str]) -> AntibioticAdministration:
    if row["route"] not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if row["short_name"] not in catalog:
        raise ValueError(f"antibiotic not in catalog: {row['short_name']!r}")
    return AntibioticAdministration(
        record_id=_record_id(row),
        patient_id=_text(row["patient_id"], "patient_id"),
        date=date.fromisoformat(row["date"]),
        route=row["route"],
        short_name=row["short_name"],
        dose_text=str(row["dose_text"]),
    )


_PARSERS = (_parse_patient, _parse_somatometry, _parse_lab, _parse_culture, _parse_antibiotic)


def _read_table(path: Path, parse, catalog: Sequence[str]) -> list:
    if not path.is_file():
        raise WarehouseError(f"missing table file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise ValueError("row is not a JSON object")
                rows.append(parse(row, catalog))
            except (ValueError, KeyError, TypeError) as exc:
                detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise WarehouseError(f"{path.name}:{lineno}: {detail}") from exc
    return rows


def load_warehouse(
    root: str | Path, antibiotic_catalog: Sequence[str] | None = None
) -> Warehouse:
    """Load the five table files (and the optional cohort file) under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise WarehouseError(f"warehouse directory not found: {root}")
    profile = "ja"
    cases: list[Case] = []
    cohort_path = root / COHORT_FILE
    catalog = tuple(antibiotic_catalog or DEFAULT_ANTIBIOTICS)
    if cohort_path.is_file():
        try:
            cohort = json.loads(cohort_path.read_text(encoding="utf-8"))
            profile = cohort.get("profile", profile)
            if antibiotic_catalog is None and "antibiotic_catalog" in cohort:
                catalog = tuple(cohort["antibiotic_catalog"])
            cases = [
                Case(c["patient_id"], date.fromisoformat(c["intervention_date"]))
                for c in cohort.get("cases", [])
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise WarehouseError(f"{COHORT_FILE}: {exc}") from exc
    tables = [_read_table(root / f, p, catalog) for f, p in zip(TABLE_FILES, _PARSERS)]
    return Warehouse(*tables, cases=tuple(cases), profile=profile, antibiotic_catalog=catalog)
