import json

import pytest

from ehr_mcp.agent import PROVIDER_ERROR
from ehr_mcp.bench import (
    RunKey,
    build_report,
    load_runs,
    run_benchmark,
    summary_table,
    validate_policy,
)
from ehr_mcp.scoring import ErrorCategory
from ehr_mcp.tasks import TASK_IDS


@pytest.fixture(scope="module")
def oracle_out(tmp_path_factory, cohort42):
    out = tmp_path_factory.mktemp("bench")
    report = run_benchmark(cohort42, "oracle", ("en", "ja"), 2, out_dir=out)
    return out, report


def test_oracle_is_perfect(oracle_out):
    _, report = oracle_out
    for task in TASK_IDS:
        entry = report["tasks"][task]
        for m in entry["metrics"].values():
            assert m["mean"] == 1.0 and m["min"] == 1.0
        assert sum(entry["errors"].values()) == 0
    assert report["errors"] == {c.value: 0 for c in ErrorCategory}
    assert report["run_errors"] == 0


def test_exclusions_in_report(oracle_out):
    _, report = oracle_out
    assert report["excluded"] == {
        "calculate_ccr": {"P002": "dialysis"},
        "culture_neg_abx": {"P001": "no vancomycin in window"},
    }
    assert report["tasks"]["calculate_ccr"]["metrics"]["exact_accuracy"]["n_patients"] == 7
    # 4 tasks x 8 patients + 2 x 7, each in 2 languages x 2 reps
    assert report["run_count"] == (4 * 8 + 2 * 7) * 4


def test_report_replays_from_disk(oracle_out):
    out, report = oracle_out
    docs, manifest = load_runs(out)
    assert build_report(docs, manifest) == report
    assert json.loads((out / "report.json").read_text(encoding="utf-8")) == report
    assert (out / "runs" / "lab_data" / "P003" / "ja-01.json").is_file()
    assert "runs: 184" in (out / "report.txt").read_text(encoding="utf-8")


def test_run_document_shape(oracle_out):
    out, _ = oracle_out
    doc = json.loads((out / "runs" / RunKey("calculate_ccr", "P003", "en", 0).relpath).read_text())
    assert doc["scores"] == {"exact_accuracy": 1.0}
    tools = [s["tool_name"] for s in doc["transcript"]["steps"]]
    assert tools[0] == "patient_basic_info" and tools[-1] == "calculate_cockcroft_gault"
    assert doc["transcript"]["initial_prompt"].startswith("For patient ID P003")


def test_serial_and_parallel_agree(cohort42):
    a = run_benchmark(cohort42, "oracle", ("ja",), 1, jobs=1)
    b = run_benchmark(cohort42, "oracle", ("ja",), 1, jobs=4)
    assert a == b


@pytest.mark.parametrize("category", [c.value for c in ErrorCategory])
def test_fault_sweep_lands_in_one_bucket(cohort42, category):
    report = run_benchmark(cohort42, f"fault:{category}", ("en",), 1, jobs=1)
    assert report["errors"][category] == report["run_count"]
    # a run may keep one metric intact (extra culture entries leave the species mean at 1)
    assert not any(all(v == 1.0 for v in r["scores"].values()) for r in report["runs"])


def test_lab_data_argument_injector_scores_zero(cohort42):
    report = run_benchmark(cohort42, "fault:argument", ("ja",), 2, tasks=("lab_data",), jobs=1)
    entry = report["tasks"]["lab_data"]
    assert entry["metrics"]["exact_accuracy"]["mean"] == 0.0
    assert entry["errors"]["argument"] == entry["runs"] == 16


def test_crashing_client_is_a_run_error(cohort42):
    class Dead:
        def list_tools(self):
            raise ConnectionError("server went away")

        def call_tool(self, name, arguments):
            raise AssertionError

    report = run_benchmark(
        cohort42, "oracle", ("en",), 1, tasks=("body_weight",), jobs=2, client_factory=Dead
    )
    assert report["run_errors"] == report["run_count"] == 8
    assert {r["terminated_by"] for r in report["runs"]} == {PROVIDER_ERROR}
    assert "run errors: 8" in summary_table(report)


def test_policy_names():
    assert validate_policy("fault:interpretation") == "fault:interpretation"
    with pytest.raises(ValueError):
        validate_policy("fault:typo")
    with pytest.raises(ValueError):
        validate_policy("random")


def test_live_policy_needs_provider(cohort42):
    with pytest.raises(ValueError, match="provider"):
        run_benchmark(cohort42, "live", ("en",), 1, tasks=("body_weight",))
