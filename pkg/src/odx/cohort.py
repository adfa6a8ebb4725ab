"""Eligibility, cohort classification and cutoff-date alignment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable

from .claims import (
    CodedItem,
    Demographics,
    Encounter,
    PatientRecord,
    Prescription,
    ValidationError,
    is_exposure_diagnosis,
    is_exposure_prescription,
    is_overdose_diagnosis,
)

MIN_AGE = 18
MIN_SPAN_DAYS = 365
MIN_EVENTS = 5
STANDARD_WINDOWS = (7, 30)


class CohortLabel(str, Enum):
    CASE = "Case"
    CONTROL_EXPOSED = "ControlExposed"
    CONTROL_NONEXPOSED = "ControlNonExposed"


OVERDOSE = "overdose"
NO_OVERDOSE = "no-overdose"


@dataclass(frozen=True)
class PredictionWindow:
    days: int

    def __post_init__(self):
        if int(self.days) < 1:
            raise ValidationError(f"window must be >= 1 day, got {self.days}")


@dataclass(frozen=True)
class PredictionInstance:
    enrol_id: str
    cutoff_date: date
    window: PredictionWindow
    history: PatientRecord
    label: str
    cohort: CohortLabel
    split: str | None = None

    @property
    def instance_id(self) -> str:
        return f"{self.enrol_id}:w{self.window.days}"

    @property
    def is_positive(self) -> bool:
        return self.label == OVERDOSE


def check_eligibility(patient: PatientRecord) -> bool:
    dates = patient.event_dates()
    if patient.demographics.age_years < MIN_AGE or not dates:
        return False
    if (max(dates) - min(dates)).days < MIN_SPAN_DAYS:
        return False
    return patient.n_events() >= MIN_EVENTS


def _has_overdose(enc: Encounter) -> bool:
    return any(is_overdose_diagnosis(d) for d in enc.diagnoses)


def classify_cohort(patient: PatientRecord) -> CohortLabel:
    if any(_has_overdose(e) for e in patient.encounters):
        return CohortLabel.CASE
    if any(is_exposure_prescription(rx) for rx in patient.prescriptions) or any(
        is_exposure_diagnosis(d) for e in patient.encounters for d in e.diagnoses
    ):
        return CohortLabel.CONTROL_EXPOSED
    return CohortLabel.CONTROL_NONEXPOSED


def truncate_history(patient: PatientRecord, cutoff: date) -> PatientRecord:
    return replace(
        patient,
        encounters=tuple(e for e in patient.encounters if e.date <= cutoff),
        prescriptions=tuple(rx for rx in patient.prescriptions if rx.fill_date <= cutoff),
    )


def _predecessor_date(patient: PatientRecord, anchor: date) -> date | None:
    # latest encounter dated strictly before the anchor day; a same-day
    # predecessor would put the anchor itself inside the truncated history
    prior = [e.date for e in patient.encounters if e.date < anchor]
    return max(prior) if prior else None


def _window(window) -> PredictionWindow:
    return window if isinstance(window, PredictionWindow) else PredictionWindow(int(window))


def align_case(patient: PatientRecord, window) -> PredictionInstance | None:
    window = _window(window)
    first_od = next((e for e in patient.encounters if _has_overdose(e)), None)
    if first_od is None:
        return None
    cutoff = _predecessor_date(patient, first_od.date)
    if cutoff is None or (first_od.date - cutoff).days > window.days:
        return None
    return PredictionInstance(
        patient.enrol_id, cutoff, window, truncate_history(patient, cutoff), OVERDOSE, CohortLabel.CASE
    )


def align_control(patient: PatientRecord, window, cohort: CohortLabel | None = None):
    window = _window(window)
    if len(patient.encounters) < 2:
        return None
    last = patient.encounters[-1].date
    cutoff = _predecessor_date(patient, last)
    if cutoff is None or (last - cutoff).days > window.days:
        return None
    cohort = cohort or classify_cohort(patient)
    return PredictionInstance(
        patient.enrol_id, cutoff, window, truncate_history(patient, cutoff), NO_OVERDOSE, cohort
    )


@dataclass
class TaskSetSummary:
    window_days: int
    n_patients: int = 0
    n_instances: int = 0
    by_cohort: dict[str, int] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)
    dropped_ids: list[str] = field(default_factory=list)

    @property
    def n_case(self) -> int:
        return self.by_cohort.get(CohortLabel.CASE.value, 0)

    @property
    def n_control(self) -> int:
        return self.n_instances - self.n_case

    def to_dict(self) -> dict:
        return {
            "window_days": self.window_days,
            "n_patients": self.n_patients,
            "n_instances": self.n_instances,
            "n_case": self.n_case,
            "n_control": self.n_control,
            "by_cohort": dict(sorted(self.by_cohort.items())),
            "dropped": dict(sorted(self.dropped.items())),
            "dropped_ids": sorted(self.dropped_ids),
        }


def build_task_set(
    patients: Iterable[PatientRecord],
    window,
    summary: TaskSetSummary | None = None,
    split: str | None = None,
):
    """Align every patient for ``window``; patients that cannot be aligned are dropped and counted."""
    window = _window(window)
    summary = summary if summary is not None else TaskSetSummary(window.days)
    summary.window_days = window.days
    out = []
    for p in patients:
        summary.n_patients += 1
        cohort = classify_cohort(p)
        inst = align_case(p, window) if cohort is CohortLabel.CASE else align_control(p, window, cohort)
        if inst is None:
            summary.dropped[cohort.value] = summary.dropped.get(cohort.value, 0) + 1
            summary.dropped_ids.append(p.enrol_id)
            continue
        summary.by_cohort[cohort.value] = summary.by_cohort.get(cohort.value, 0) + 1
        out.append(replace(inst, split=split) if split else inst)
    out.sort(key=lambda i: i.enrol_id)
    summary.n_instances = len(out)
    return out


# --- instances.jsonl ------------------------------------------------------

def _item_to_json(it: CodedItem) -> list:
    return [it.system.value, it.code]


def patient_to_dict(p: PatientRecord) -> dict:
    return {
        "enrol_id": p.enrol_id,
        "age": p.demographics.age_years,
        "sex": p.demographics.sex.value,
        "encounters": [
            {
                "encounter_id": e.encounter_id,
                "date": e.date.isoformat(),
                "diagnoses": [_item_to_json(i) for i in e.diagnoses],
                "procedures": [_item_to_json(i) for i in e.procedures],
            }
            for e in p.encounters
        ],
        "prescriptions": [
            {
                "fill_date": rx.fill_date.isoformat(),
                "drug_name": rx.drug_name,
                "therapeutic_class": rx.therapeutic_class,
                "strength": rx.strength,
                "route": rx.route,
            }
            for rx in p.prescriptions
        ],
    }


def patient_from_dict(d: dict) -> PatientRecord:
    return PatientRecord(
        enrol_id=d["enrol_id"],
        demographics=Demographics(int(d["age"]), d["sex"]),
        encounters=tuple(
            Encounter(
                e["encounter_id"],
                date.fromisoformat(e["date"]),
                tuple(CodedItem(s, c) for s, c in e["diagnoses"]),
                tuple(CodedItem(s, c) for s, c in e["procedures"]),
            )
            for e in d["encounters"]
        ),
        prescriptions=tuple(
            Prescription(
                date.fromisoformat(rx["fill_date"]),
                rx["drug_name"],
                rx["therapeutic_class"],
                rx.get("strength", ""),
                rx.get("route", ""),
            )
            for rx in d["prescriptions"]
        ),
    )


def instance_to_dict(inst: PredictionInstance) -> dict:
    return {
        "instance_id": inst.instance_id,
        "enrol_id": inst.enrol_id,
        "cutoff_date": inst.cutoff_date.isoformat(),
        "window_days": inst.window.days,
        "label": inst.label,
        "cohort": inst.cohort.value,
        "split": inst.split,
        "history": patient_to_dict(inst.history),
    }


def instance_from_dict(d: dict) -> PredictionInstance:
    return PredictionInstance(
        enrol_id=d["enrol_id"],
        cutoff_date=date.fromisoformat(d["cutoff_date"]),
        window=PredictionWindow(int(d["window_days"])),
        history=patient_from_dict(d["history"]),
        label=d["label"],
        cohort=CohortLabel(d["cohort"]),
        split=d.get("split"),
    )


def write_instances(instances: Iterable[PredictionInstance], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), sort_keys=True) + "\n")
            n += 1
    return n


def read_instances(path: str | Path) -> list[PredictionInstance]:
    with open(path, encoding="utf-8") as fh:
        return [instance_from_dict(json.loads(line)) for line in fh if line.strip()]
