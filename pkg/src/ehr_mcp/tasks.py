"""The six infection-control tasks, their prompts and answer schemas."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, timedelta
from functools import lru_cache
from importlib import resources

from .warehouse import Warehouse

WINDOW_DAYS = 30
LANGUAGES = ("en", "ja")
PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
BINDING_NAMES = frozenset(
    {"patient_id", "intervention_date", "start_date", "end_date", "age", "sex"}
)

_DATE_PATTERN = r"^\d{4}-\d{2}-\d{2}$"


def _object(props: dict) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(props),
        "additionalProperties": False,
    }


@dataclass(frozen=True)
class TaskSpec:
    id: str
    difficulty: str
    bindings: tuple[str, ...]
    answer_schema: dict
    expected_tools: tuple[str, ...]
    metrics: tuple[str, ...] = ("exact_accuracy",)

    def template(self, language: str) -> str:
        return load_template(self.id, language)


TASKS: dict[str, TaskSpec] = {
    t.id: t
    for t in (
        TaskSpec(
            "body_weight",
            "simple",
            ("patient_id",),
            _object({"weight": {"type": "number"}}),
            ("patient_basic_info",),
        ),
        TaskSpec(
            "lab_data",
            "simple",
            ("patient_id", "intervention_date"),
            _object({"wbc": {"type": "integer"}}),
            ("lab_results",),
        ),
        TaskSpec(
            "culture_history",
            "simple",
            ("patient_id", "start_date", "end_date"),
            _object(
                {
                    "results": {
                        "type": "array",
                        "items": _object(
                            {
                                "date": {"type": "string", "pattern": _DATE_PATTERN},
                                "species": {"type": "array", "items": {"type": "string"}},
                            }
                        ),
                    }
                }
            ),
            ("bacteria_results",),
            ("dice_detection", "dice_species_mean"),
        ),
        TaskSpec(
            "antibiotics",
            "simple",
            ("patient_id", "intervention_date"),
            _object({"antibiotics": {"type": "array", "items": {"type": "string"}}}),
            ("antibiotics_treatment",),
            ("dice_detection",),
        ),
        TaskSpec(
            "calculate_ccr",
            "complex",
            ("patient_id", "intervention_date", "age", "sex"),
            _object({"ccr": {"type": "number"}}),
            ("patient_basic_info", "lab_results", "calculate_cockcroft_gault"),
        ),
        TaskSpec(
            "culture_neg_abx",
            "complex",
            ("patient_id", "intervention_date", "start_date", "end_date"),
            _object({"days_abx_since_first_neg_blood_culture": {"type": "integer"}}),
            ("bacteria_results", "antibiotics_treatment"),
        ),
    )
}
TASK_IDS = tuple(TASKS)


class RenderError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_template(task_id: str, language: str) -> str:
    if task_id not in TASKS:
        raise RenderError(f"unknown task: {task_id}")
    if language not in LANGUAGES:
        raise RenderError(f"unknown language: {language}")
    path = resources.files("ehr_mcp") / "prompts" / f"{task_id}.{language}.txt"
    return path.read_text(encoding="utf-8").rstrip("\n")


def fill_template(template: str, bindings: dict) -> str:
    """Substitute ``{name}`` placeholders; JSON braces in the text are left alone."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in BINDING_NAMES:
            raise RenderError(f"unknown placeholder {{{name}}} in template")
        if name not in bindings:
            raise RenderError(f"missing binding: {name}")
        return str(bindings[name])

    return PLACEHOLDER.sub(sub, template)


def render_prompt(task_id: str, language: str, bindings: dict) -> str:
    spec = TASKS.get(task_id)
    if spec is None:
        raise RenderError(f"unknown task: {task_id}")
    missing = [b for b in spec.bindings if b not in bindings]
    if missing:
        raise RenderError(f"missing binding(s) for {task_id}: {', '.join(missing)}")
    return fill_template(spec.template(language), bindings)


def age_on(born: date, day: date) -> int:
    return day.year - born.year - ((day.month, day.day) < (born.month, born.day))


def make_bindings(warehouse: Warehouse, patient_id: str) -> dict:
    """Prompt placeholders for one reviewed patient."""
    case = warehouse.case(patient_id)
    patient, _ = warehouse.get_patient(patient_id)
    d = case.intervention_date
    return {
        "patient_id": patient_id,
        "intervention_date": d.isoformat(),
        "start_date": (d - timedelta(days=WINDOW_DAYS)).isoformat(),
        "end_date": (d + timedelta(days=WINDOW_DAYS)).isoformat(),
        "age": age_on(patient.date_of_birth, d),
        "sex": "M" if patient.sex == "male" else "F",
    }


def binding_sex(value: str) -> str:
    """Map the prompt's M/F marker to the tool's sex enum."""
    return {"M": "male", "F": "female"}.get(value, value)
