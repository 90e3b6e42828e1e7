"""Seeded synthetic cohorts of MRSA-bacteremia patients treated with vancomycin.

Each patient gets a clinical vignette anchored on an intervention date (the
day the infection-control team started reviewing the case):

* admission 90-115 days earlier, with a daily blood panel from admission to
  30 days after the intervention (the intervention day itself sometimes has
  only a urinalysis, so "that day only" lab windows can miss creatinine);
* an MRSA-positive blood culture pair on the onset day, before the
  intervention, and vancomycin started the same day;
* follow-up blood cultures every 2-3 days that stay positive for a while,
  may pass through a mixed day (one bottle positive), then turn negative;
* sputum/urine cultures scattered inside the +/-30 day window;
* 0-3 concurrent antibiotics, some given several times a day.

One patient is on dialysis and one other patient is treated with daptomycin
instead of vancomycin.
"""

from __future__ import annotations

import random
from datetime import date, datetime, time, timedelta

from .warehouse import (
    ANALYTE_BY_KEY,
    BLOOD_PANEL,
    JST,
    URINE_PANEL,
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
CNS = "Staphylococcus epidermidis"

SUSCEPTIBILITY_PANELS = {
    MRSA: (
        ("MPIPC", "R"), ("CEZ", "R"), ("EM", "R"), ("CLDM", None), ("MINO", "S"),
        ("LVFX", "R"), ("ST", "S"), ("VCM", "S"), ("TEIC", "S"), ("LZD", "S"), ("DAP", "S"),
    ),
    CNS: (("MPIPC", "R"), ("CLDM", None), ("VCM", "S"), ("TEIC", "S")),
    "Klebsiella pneumoniae": (
        ("ABPC", "R"), ("SBT/ABPC", None), ("CEZ", "S"), ("CTRX", "S"), ("MEPM", "S"), ("LVFX", "S"),
    ),
    "Escherichia coli": (
        ("ABPC", None), ("CEZ", None), ("CTRX", "S"), ("CFPM", "S"), ("MEPM", "S"), ("LVFX", None),
    ),
    "Enterococcus faecalis": (("ABPC", "S"), ("VCM", "S"), ("LVFX", None)),
}

SPUTUM_FINDINGS = (("Klebsiella pneumoniae",), (MRSA,), (), ("Candida albicans",))
URINE_FINDINGS = (("Escherichia coli",), ("Enterococcus faecalis",), ())

# short name -> (route, administrations per day, ja dose text, en dose text)
REGIMENS = {
    "SBT/ABPC": ("iv", 4, "1.5g/V 2.0V １日４回 ６時間毎", "1.5 g/vial x2.0 vials, 4 times daily, every 6 h"),
    "CTRX": ("iv", 1, "1g/V 2.0V １日１回", "1 g/vial x2.0 vials, once daily"),
    "MEPM": ("iv", 3, "0.5g/V 2.0V １日３回 ８時間毎", "0.5 g/vial x2.0 vials, 3 times daily, every 8 h"),
    "TAZ/PIPC": ("iv", 4, "4.5g/V 1.0V １日４回 ６時間毎", "4.5 g/vial x1.0 vial, 4 times daily, every 6 h"),
    "CFPM": ("iv", 2, "1g/V 1.0V １日２回 １２時間毎", "1 g/vial x1.0 vial, twice daily, every 12 h"),
    "CEZ": ("iv", 3, "1g/V 2.0V １日３回 ８時間毎", "1 g/vial x2.0 vials, 3 times daily, every 8 h"),
    "ABPC": ("iv", 4, "1g/V 2.0V １日４回 ６時間毎", "1 g/vial x2.0 vials, 4 times daily, every 6 h"),
    "LVFX": ("oral", 1, "500mg 1錠 １日１回", "500 mg x1 tablet, once daily"),
}
VCM_DOSE = ("0.5g/V {n}.0V １日１回（ベース）", "0.5 g/vial x{n}.0 vials, once daily (base)")
VCM_LOADING = ("0.5g/V 4.0V 初回負荷", "0.5 g/vial x4.0 vials, loading dose")
DAP_DOSE = ("350mg/V 1.0V １日１回", "350 mg/vial x1.0 vial, once daily")
LZD_ORAL = ("600mg 1錠 １日２回", "600 mg x1 tablet, twice daily")

ALLERGIES = {
    "ja": ("ペニシリン系", "ヨード造影剤", "セフェム系", "NSAIDs"),
    "en": ("penicillins", "iodinated contrast", "cephalosporins", "NSAIDs"),
}

# analyte key -> (low, high) plausible range for the random walk
LAB_RANGES = {
    "WBC": (2.0, 20.0), "RBC": (2.5, 5.5), "HGB": (7.0, 16.0), "PLT": (50, 400),
    "CRP": (0.05, 25.0), "AST": (10, 120), "ALT": (5, 120), "LDH": (120, 450),
    "ALP": (60, 500), "TBIL": (0.2, 3.0), "BUN": (5.0, 60.0), "CRE": (0.45, 2.2),
    "NA": (128, 148), "K": (3.0, 5.6),
    "UPRO": (0, 300), "UGLU": (0, 250), "UCRE": (20.0, 250.0), "UNA": (10, 200),
}
DIALYSIS_CRE = (5.0, 9.5)

INTERVENTION_FIRST = date(2024, 5, 1)
INTERVENTION_SPAN_DAYS = 213  # through 2024-11-30


class _Ids:
    def __init__(self) -> None:
        self._next: dict[str, int] = {}

    def __call__(self, table: str) -> int:
        n = self._next.get(table, 1)
        self._next[table] = n + 1
        return n


def _stamp(day: date, hour: int, minute: int) -> datetime:
    return datetime.combine(day, time(hour, minute), tzinfo=JST)


def _birth_date(rng: random.Random, anchor: date, age: int) -> date:
    anniversary = date(anchor.year - age, anchor.month, min(anchor.day, 28))
    return anniversary - timedelta(days=rng.randint(1, 330))


def _susceptibility(rng: random.Random, organisms: tuple[str, ...]) -> tuple:
    out = []
    for org in organisms:
        panel = SUSCEPTIBILITY_PANELS.get(org)
        if panel is None:
            continue
        out.append((org, tuple((drug, sir or rng.choice("SIR")) for drug, sir in panel)))
    return tuple(out)


def generate_cohort(seed: int, n_patients: int = 8, profile: str = "ja") -> Warehouse:
    """Build a warehouse of ``n_patients`` vignettes; a pure function of its arguments."""
    if n_patients < 1:
        raise ValueError("n_patients must be at least 1")
    if profile not in ("ja", "en"):
        raise ValueError("profile must be 'ja' or 'en'")
    rng = random.Random(seed)
    ids = _Ids()
    dialysis_idx = rng.randrange(n_patients)
    others = [i for i in range(n_patients) if i != dialysis_idx] or [dialysis_idx]
    no_vcm_idx = rng.choice(others)

    patients, soma, labs, cultures, abx, cases = [], [], [], [], [], []
    for i in range(n_patients):
        pid = f"P{i + 1:03d}"
        on_dialysis = i == dialysis_idx
        d = INTERVENTION_FIRST + timedelta(days=rng.randint(0, INTERVENTION_SPAN_DAYS))
        age = rng.randint(45, 90)
        patients.append(
            Patient(
                patient_id=pid,
                sex=rng.choice(("male", "female")),
                date_of_birth=_birth_date(rng, d, age),
                allergies=tuple(sorted(rng.sample(ALLERGIES[profile], rng.choice((0, 0, 1, 2))))),
                on_dialysis=on_dialysis,
            )
        )
        cases.append(Case(pid, d))
        admission = d - timedelta(days=rng.randint(90, 115))
        onset = d - timedelta(days=rng.randint(1, 6))

        soma.extend(_somatometry(rng, ids, pid, admission, d))
        labs.extend(_labs(rng, ids, pid, admission, d, on_dialysis, profile))
        cultures.extend(_cultures(rng, ids, pid, admission, onset, d))
        abx.extend(_antibiotics(rng, ids, pid, onset, no_vcm=i == no_vcm_idx, profile=profile))

    return Warehouse(
        patients=tuple(patients),
        somatometry=tuple(soma),
        labs=tuple(labs),
        cultures=tuple(cultures),
        antibiotics=tuple(abx),
        cases=tuple(cases),
        profile=profile,
    )


def _somatometry(rng, ids, pid, admission, d):
    height = round(rng.uniform(145.0, 185.0), 1)
    weight = rng.uniform(40.0, 90.0)
    span = (d - admission).days - 1
    days = sorted(rng.sample(range(span), rng.randint(1, 3)))
    rows = []
    for offset in days:
        weight = max(30.0, weight + rng.uniform(-2.0, 2.0))
        w = round(weight, 1)
        rows.append(
            Somatometry(
                record_id=ids("somatometry"),
                patient_id=pid,
                measured_at=_stamp(admission + timedelta(days=offset + 1), 10, rng.randint(0, 59)),
                height=height,
                weight=w,
                bmi=round(w / (height / 100) ** 2, 1),
            )
        )
    return rows


def _labs(rng, ids, pid, admission, d, on_dialysis, profile):
    state = {}
    for key, (lo, hi) in LAB_RANGES.items():
        if key == "CRE" and on_dialysis:
            lo, hi = DIALYSIS_CRE
        state[key] = (lo, hi, rng.uniform(lo, hi))

    def draw(key):
        lo, hi, cur = state[key]
        cur = min(hi, max(lo, cur + rng.gauss(0.0, 0.08 * (hi - lo))))
        state[key] = (lo, hi, cur)
        return round(cur, ANALYTE_BY_KEY[key].decimals)

    def panel(keys, stamp):
        return [
            LabResult(
                record_id=ids("labs"),
                patient_id=pid,
                collected_at=stamp,
                analyte=analyte_name(k, profile),
                value=draw(k),
                unit=ANALYTE_BY_KEY[k].unit,
            )
            for k in keys
        ]

    rows = []
    skip_blood_on_intervention = rng.random() < 0.5
    day = admission
    last = d + timedelta(days=30)
    while day <= last:
        if not (day == d and skip_blood_on_intervention):
            rows.extend(panel(BLOOD_PANEL, _stamp(day, 6, rng.randint(0, 59))))
        if day == d or (day - admission).days % 7 == 3:
            rows.extend(panel(URINE_PANEL, _stamp(day, 10, rng.randint(0, 59))))
        day += timedelta(days=1)
    return rows


def _cultures(rng, ids, pid, admission, onset, d):
    rows = []

    def sample(specimen, day, hour, minute, organisms):
        rows.append(
            CultureResult(
                record_id=ids("cultures"),
                patient_id=pid,
                specimen=specimen,
                collected_at=_stamp(day, hour, minute),
                organisms=tuple(organisms),
                susceptibilities=_susceptibility(rng, tuple(organisms)),
            )
        )

    def blood_pair(day, first, second):
        minute = rng.randint(0, 40)
        sample("blood", day, 8, minute, first)
        sample("blood", day, 8, minute + rng.randint(5, 15), second)

    blood_pair(admission, (), ())
    second = (MRSA, CNS) if rng.random() < 0.3 else (MRSA,)
    blood_pair(onset, (MRSA,), second)
    day = onset
    for _ in range(rng.randint(0, 2)):
        day += timedelta(days=rng.randint(2, 3))
        blood_pair(day, (MRSA,), (MRSA,))
    if rng.random() < 0.5:
        day += timedelta(days=rng.randint(2, 3))
        blood_pair(day, (MRSA,), ())
    day += timedelta(days=rng.randint(2, 3))
    blood_pair(day, (), ())
    if rng.random() < 0.5:
        day += timedelta(days=rng.randint(2, 4))
        sample("blood", day, 8, rng.randint(0, 59), ())

    for _ in range(rng.randint(1, 3)):
        when = d + timedelta(days=rng.randint(-25, 25))
        if rng.random() < 0.6:
            sample("sputum", when, 9, rng.randint(0, 59), rng.choice(SPUTUM_FINDINGS))
        else:
            sample("urine", when, 11, rng.randint(0, 59), rng.choice(URINE_FINDINGS))
    return rows


def _antibiotics(rng, ids, pid, onset, *, no_vcm, profile):
    lang = 0 if profile == "ja" else 1
    rows = []

    def give(day, name, route, dose):
        rows.append(
            AntibioticAdministration(
                record_id=ids("antibiotics"),
                patient_id=pid,
                date=day,
                route=route,
                short_name=name,
                dose_text=dose,
            )
        )

    course = rng.randint(14, 24)
    last_day = onset + timedelta(days=course)
    if no_vcm:
        for k in range(course + 1):
            give(onset + timedelta(days=k), "DAP", "iv", DAP_DOSE[lang])
    else:
        vials = rng.choice((2, 3))
        give(onset, "VCM", "iv", VCM_LOADING[lang])
        for k in range(course + 1):
            give(onset + timedelta(days=k), "VCM", "iv", VCM_DOSE[lang].format(n=vials))
    if rng.random() < 0.3:
        for k in range(1, rng.randint(3, 7)):
            give(last_day + timedelta(days=k), "LZD", "oral", LZD_ORAL[lang])

    names = list(REGIMENS)
    for name in rng.sample(names, rng.randint(0, 3)):
        route, per_day, ja, en = REGIMENS[name]
        start = onset - timedelta(days=rng.randint(0, 10))
        for k in range(rng.randint(3, 12)):
            for _ in range(per_day):
                give(start + timedelta(days=k), name, route, ja if lang == 0 else en)
    return rows
