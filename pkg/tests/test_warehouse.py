import json
import shutil
from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehr_mcp.cohort import generate_cohort
from ehr_mcp.warehouse import (
    TABLE_FILES,
    Patient,
    RecordLimitExceeded,
    UnknownPatient,
    Warehouse,
    WarehouseError,
    load_warehouse,
    write_warehouse,
)

from helpers import Builder, at, log_warehouse, over_limit_warehouse


def test_round_trip_equal(tmp_path, cohort42):
    write_warehouse(cohort42, tmp_path)
    assert load_warehouse(tmp_path) == cohort42


def test_write_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_warehouse(generate_cohort(5, 3), a)
    write_warehouse(generate_cohort(5, 3), b)
    for name in (*TABLE_FILES, "cohort.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_get_patient_latest_somatometry(log_wh):
    patient, soma = log_wh.get_patient("L001")
    assert patient.sex == "female"
    assert soma.weight == 55.4


def test_unknown_patient(log_wh):
    with pytest.raises(UnknownPatient, match="Patient not found: NOPE"):
        log_wh.get_patient("NOPE")
    with pytest.raises(UnknownPatient):
        log_wh.query_labs("NOPE", date(2024, 1, 1), date(2024, 1, 2))


def test_inverted_window_rejected(log_wh):
    with pytest.raises(ValueError):
        log_wh.query_cultures("L002", date(2024, 5, 2), date(2024, 5, 1))


def test_record_limit_boundary():
    day, end = date(2024, 3, 1), date(2024, 3, 3)
    assert len(over_limit_warehouse(1000).query_labs("X001", day, end)) == 1000
    with pytest.raises(RecordLimitExceeded) as exc:
        over_limit_warehouse(1001).query_labs("X001", day, end)
    assert exc.value.matched == 1001
    assert str(exc.value) == (
        "Too many items matched (1001 records). "
        "Try again with shorter duration or more strict conditions. (max: 1000)"
    )


def test_record_limit_log_count():
    day = date(2024, 4, 22)
    with pytest.raises(RecordLimitExceeded, match=r"\(2513 records\).*\(max: 1000\)$"):
        over_limit_warehouse(2513, day).query_labs("X001", day, day + timedelta(days=2))


def test_year_start_window_overflows(cohort42):
    # the long-window failure mode has to be reachable on the generated cohort
    case = cohort42.cases[0]
    d = case.intervention_date
    with pytest.raises(RecordLimitExceeded):
        cohort42.query_labs(case.patient_id, date(d.year, 1, 1), d)


def test_dob_invariant():
    b = Builder().patient("A", born=date(2024, 5, 1))
    b.weight("A", at(date(2024, 5, 1)), 60.0)
    with pytest.raises(WarehouseError, match="date_of_birth"):
        b.build()


def test_foreign_key_and_duplicates():
    b = Builder().patient("A")
    b.weight("B", at(date(2024, 5, 1)), 60.0)
    with pytest.raises(WarehouseError, match="unknown patient"):
        b.build()
    with pytest.raises(WarehouseError, match="duplicate patient_id"):
        Warehouse((Patient("A", "male", date(1970, 1, 1)), Patient("A", "male", date(1971, 1, 1))))


def _corrupt(tmp_path, wh, fname, mutate):
    write_warehouse(wh, tmp_path)
    path = tmp_path / fname
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    mutate(rows)
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


@pytest.mark.parametrize(
    "fname, mutate, message",
    [
        ("labs.ndjson", lambda rows: rows[0].update(unit="mg/dL"), "labs.ndjson:1: analyte/unit"),
        ("labs.ndjson", lambda rows: rows[1].update(collected_at="2024-04-22T06:30:00"), "labs.ndjson:2: timestamp without timezone"),
        ("labs.ndjson", lambda rows: rows[0].pop("value"), "labs.ndjson:1: missing field"),
        ("somatometry.ndjson", lambda rows: rows[0].update(bmi=40.0), "bmi inconsistent"),
        ("antibiotics.ndjson", lambda rows: rows[0].update(short_name="XYZ"), "not in catalog"),
        ("antibiotics.ndjson", lambda rows: rows[0].update(route="im"), "route must be"),
        ("patients.ndjson", lambda rows: rows[0].update(sex="x"), "sex must be"),
    ],
)
def test_load_rejects_bad_rows(tmp_path, log_wh, fname, mutate, message):
    _corrupt(tmp_path, log_wh, fname, mutate)
    with pytest.raises(WarehouseError, match=message):
        load_warehouse(tmp_path)


def test_load_rejects_foreign_susceptibility(tmp_path, cohort42):
    def mutate(rows):
        row = next(r for r in rows if r["organisms"])
        row["susceptibilities"] = {"Escherichia coli": [["CEZ", "S"]]}

    _corrupt(tmp_path, cohort42, "cultures.ndjson", mutate)
    with pytest.raises(WarehouseError, match="not isolated"):
        load_warehouse(tmp_path)


def test_load_missing_table(tmp_path, log_wh):
    write_warehouse(log_wh, tmp_path)
    (tmp_path / "cultures.ndjson").unlink()
    with pytest.raises(WarehouseError, match="missing table file"):
        load_warehouse(tmp_path)
    with pytest.raises(WarehouseError, match="not found"):
        load_warehouse(tmp_path / "nowhere")


def test_load_without_cohort_file(tmp_path, log_wh):
    write_warehouse(log_wh, tmp_path)
    (tmp_path / "cohort.json").unlink()
    wh = load_warehouse(tmp_path)
    assert wh.cases == ()
    assert wh.labs == log_wh.labs


def test_tables_sorted_canonically():
    wh = log_warehouse()
    keys = [(r.patient_id, r.collected_at, r.record_id) for r in wh.labs]
    assert keys == sorted(keys)


@settings(max_examples=200)
@given(
    st.integers(0, 400),
    st.integers(0, 120),
    st.integers(0, 120),
)
def test_window_is_union_of_subwindows(offset, len_a, len_b):
    # [s, m] and [m+1, e] partition [s, e]
    wh = _sweep_wh()
    pid = wh.cases[0].patient_id
    s = date(2024, 1, 1) + timedelta(days=offset)
    m = s + timedelta(days=len_a)
    e = m + timedelta(days=len_b + 1)
    whole = wh.query_cultures(pid, s, e)
    parts = wh.query_cultures(pid, s, m) + wh.query_cultures(pid, m + timedelta(days=1), e)
    assert whole == parts
    assert all(s <= c.collected_at.date() <= e for c in whole)
    brute = [c for c in wh.cultures if c.patient_id == pid and s <= c.collected_at.date() <= e]
    assert whole == brute


_SWEEP = {}


def _sweep_wh():
    if "wh" not in _SWEEP:
        _SWEEP["wh"] = generate_cohort(3, 2)
    return _SWEEP["wh"]


def test_copy_of_directory_loads_identically(tmp_path, warehouse_dir, cohort42):
    dst = tmp_path / "copy"
    shutil.copytree(warehouse_dir, dst)
    assert load_warehouse(dst) == cohort42
