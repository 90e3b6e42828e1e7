"""Hand-built warehouses and an index-free reference for the gold answers."""

from __future__ import annotations

from datetime import date, datetime, time, timedelta
from decimal import ROUND_HALF_UP, Decimal

from ehr_mcp.warehouse import (
    ANALYTE_BY_KEY,
    JST,
    AntibioticAdministration,
    Case,
    CultureResult,
    LabResult,
    Patient,
    Somatometry,
    Warehouse,
    analyte_name,
)

MRSA = "Staphylococcus aureus (MRSA)"
SBT_ABPC_DOSE = "1.5g/V 2.0V １日４回 ６時間毎"
VCM_DOSE = "0.5g/V 3.0V １日１回（ベース）"


def at(day: date, hh: int = 8, mm: int = 0) -> datetime:
    return datetime.combine(day, time(hh, mm), tzinfo=JST)


class Builder:
    """Accumulates records with fresh record ids."""

    def __init__(self, profile: str = "ja"):
        self.profile = profile
        self.patients: list[Patient] = []
        self.soma: list[Somatometry] = []
        self.labs: list[LabResult] = []
        self.cultures: list[CultureResult] = []
        self.abx: list[AntibioticAdministration] = []
        self.cases: list[Case] = []
        self._rid = 0

    def rid(self) -> int:
        self._rid += 1
        return self._rid

    def patient(self, pid, sex="male", born=date(1975, 1, 10), dialysis=False, intervention=None):
        self.patients.append(Patient(pid, sex, born, (), dialysis))
        if intervention:
            self.cases.append(Case(pid, intervention))
        return self

    def weight(self, pid, stamp, kg, height=170.0):
        bmi = round(kg / (height / 100) ** 2, 1)
        self.soma.append(Somatometry(self.rid(), pid, stamp, height, kg, bmi))
        return self

    def lab(self, pid, stamp, key, value):
        a = ANALYTE_BY_KEY[key]
        self.labs.append(LabResult(self.rid(), pid, stamp, analyte_name(key, self.profile), value, a.unit))
        return self

    def culture(self, pid, stamp, *organisms, specimen="blood"):
        self.cultures.append(CultureResult(self.rid(), pid, specimen, stamp, tuple(organisms), ()))
        return self

    def give(self, pid, day, name, dose="", route="iv"):
        self.abx.append(AntibioticAdministration(self.rid(), pid, day, route, name, dose))
        return self

    def build(self) -> Warehouse:
        return Warehouse(
            tuple(self.patients),
            tuple(self.soma),
            tuple(self.labs),
            tuple(self.cultures),
            tuple(self.abx),
            cases=tuple(self.cases),
            profile=self.profile,
        )


def log_warehouse() -> Warehouse:
    """Patients shaped after the published execution logs."""
    b = Builder()
    # weight fetch: latest somatometry 55.4 kg
    b.patient("L001", "female", date(1950, 3, 2), intervention=date(2024, 7, 20))
    b.weight("L001", at(date(2024, 6, 30)), 57.0, 158.0)
    b.weight("L001", at(date(2024, 7, 14), 10, 5), 55.4, 158.0)
    # WBC 2.3 10^3/µL on the intervention day
    b.patient("L002", "male", date(1960, 5, 5), intervention=date(2024, 4, 22))
    b.lab("L002", at(date(2024, 4, 20)), "WBC", 8.1)
    b.lab("L002", at(date(2024, 4, 22), 6, 30), "WBC", 2.3)
    b.lab("L002", at(date(2024, 4, 22), 6, 30), "PLT", 110.0)
    b.lab("L002", at(date(2024, 4, 23)), "WBC", 3.0)
    # antibiotics on one day: three SBT/ABPC lines and one VCM
    b.patient("L003", "male", date(1948, 8, 8), intervention=date(2024, 11, 9))
    b.give("L003", date(2024, 11, 8), "CTRX", "1g/V 2.0V １日１回")
    b.give("L003", date(2024, 11, 9), "SBT/ABPC", SBT_ABPC_DOSE)
    b.give("L003", date(2024, 11, 9), "SBT/ABPC", SBT_ABPC_DOSE)
    b.give("L003", date(2024, 11, 9), "VCM", VCM_DOSE)
    b.give("L003", date(2024, 11, 9), "SBT/ABPC", SBT_ABPC_DOSE)
    # creatinine clearance: 49-year-old man, 77.3 kg, creatinine 0.86 the day before
    b.patient("L004", "male", date(1975, 1, 10), intervention=date(2024, 5, 28))
    b.weight("L004", at(date(2024, 5, 20)), 77.3)
    b.lab("L004", at(date(2024, 5, 27), 7), "CRE", 0.86)
    b.lab("L004", at(date(2024, 5, 27), 7), "BUN", 14.0)
    b.lab("L004", at(date(2024, 5, 28), 9), "UPRO", 0.0)
    return b.build()


def vignette_warehouse() -> Warehouse:
    """Cultures positive on d1, negative on d3; vancomycin d1 through d9."""
    d1 = date(2024, 6, 1)
    b = Builder()
    b.patient("V001", "male", date(1955, 1, 1), intervention=d1 + timedelta(days=1))
    b.culture("V001", at(d1, 9), MRSA)
    b.culture("V001", at(d1, 9, 10), MRSA)
    b.culture("V001", at(d1 + timedelta(days=2), 9))
    b.culture("V001", at(d1 + timedelta(days=2), 9, 10))
    for i in range(9):
        b.give("V001", d1 + timedelta(days=i), "VCM", VCM_DOSE)
    return b.build()


def over_limit_warehouse(n_rows: int, day: date = date(2024, 3, 1)) -> Warehouse:
    """One patient with ``n_rows`` WBC rows, one per minute from ``day`` (spills into following days)."""
    b = Builder()
    b.patient("X001", intervention=day)
    start = at(day, 0, 0)
    for i in range(n_rows):
        b.lab("X001", start + timedelta(minutes=i), "WBC", 5.0)
    return b.build()


# --- reference gold: plain scans over the tables ---------------------------------


def _half_up(x: Decimal) -> Decimal:
    return x.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


def _latest(rows, when):
    best = None
    for r in rows:
        if best is None or (when(r), r.record_id) > (when(best), best.record_id):
            best = r
    return best


def brute_gold(task: str, pid: str, wh: Warehouse) -> tuple[bool, object]:
    """(excluded, value) computed with linear scans only."""
    patient = [p for p in wh.patients if p.patient_id == pid][0]
    d = [c for c in wh.cases if c.patient_id == pid][0].intervention_date
    start, end = d - timedelta(days=30), d + timedelta(days=30)
    soma = _latest([s for s in wh.somatometry if s.patient_id == pid], lambda s: s.measured_at)

    def latest_lab(key):
        names = {ANALYTE_BY_KEY[key].ja, ANALYTE_BY_KEY[key].en}
        rows = [
            r for r in wh.labs
            if r.patient_id == pid and r.analyte in names and r.collected_at.date() <= d
        ]
        return _latest(rows, lambda r: r.collected_at)

    if task == "body_weight":
        return False, {"weight": soma.weight}
    if task == "lab_data":
        r = latest_lab("WBC")
        scale = 1000 if r.unit.startswith("10^3") else 1
        return False, {"wbc": int(_half_up(Decimal(repr(r.value))) * scale)}
    if task == "culture_history":
        rows = sorted(
            (c for c in wh.cultures
             if c.patient_id == pid and c.specimen == "blood" and start <= c.collected_at.date() <= end),
            key=lambda c: (c.collected_at, c.record_id),
        )
        return False, {
            "results": [
                {"date": c.collected_at.date().isoformat(), "species": list(c.organisms)} for c in rows
            ]
        }
    if task == "antibiotics":
        names = []
        for a in sorted(wh.antibiotics, key=lambda a: a.record_id):
            if a.patient_id == pid and a.date == d and a.short_name not in names:
                names.append(a.short_name)
        return False, {"antibiotics": names}
    if task == "calculate_ccr":
        if patient.on_dialysis:
            return True, None
        age = d.year - patient.date_of_birth.year - (
            (d.month, d.day) < (patient.date_of_birth.month, patient.date_of_birth.day)
        )
        cre = latest_lab("CRE")
        ccr = Decimal(140 - age) * Decimal(repr(soma.weight)) / (72 * Decimal(repr(cre.value)))
        if patient.sex == "female":
            ccr *= Decimal("0.85")
        return False, {"ccr": float(_half_up(ccr))}
    if task == "culture_neg_abx":
        vcm_days = sorted(
            {a.date for a in wh.antibiotics
             if a.patient_id == pid and a.short_name == "VCM" and start <= a.date <= end}
        )
        if not vcm_days:
            return True, None
        v0 = vcm_days[0]
        day = v0
        d0 = None
        while day <= end:
            samples = [
                c for c in wh.cultures
                if c.patient_id == pid and c.specimen == "blood" and c.collected_at.date() == day
            ]
            if samples and all(not c.organisms for c in samples):
                d0 = day
                break
            day += timedelta(days=1)
        assert d0 is not None, "vignette lacks a negative culture day"
        return False, {"days_abx_since_first_neg_blood_culture": sum(1 for v in vcm_days if v >= d0)}
    raise ValueError(task)
