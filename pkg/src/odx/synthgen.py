"""Seeded synthetic claims populations with a planted overdose signal."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path

import numpy as np

from . import catalog
from .claims import (
    DEMOGRAPHICS_COLUMNS,
    DIAGNOSIS_COLUMNS,
    ENCOUNTER_COLUMNS,
    PRESCRIPTION_COLUMNS,
    PROCEDURE_COLUMNS,
    CodedItem,
    Demographics,
    Encounter,
    PatientRecord,
    Prescription,
    Sex,
)

SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


class IntendedLabel(str, Enum):
    CASE = "case"
    CONTROL_EXPOSED = "control-exposed"
    CONTROL_NONEXPOSED = "control-nonexposed"


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_case: int = 300
    n_control: int = 600
    exposed_fraction: float = 0.5
    signal_strength: float = 0.8
    window_days: int = 7
    date_start: date = date(2020, 1, 1)
    date_end: date = date(2022, 12, 31)
    min_span_days: int = 400
    # visit counts: max_visits minus a geometric deficit, clamped to [min_visits, max_visits]
    mean_visits: float = 50.0
    min_visits: int = 5
    max_visits: int = 60
    marker_base_rate: float = 0.08
    marker_boost: float = 0.25
    rx_rate: float = 0.45
    exposure_event_rate: float = 0.06
    non_overdose_t_rate: float = 0.15
    icd9_rate: float = 0.05

    def validate(self) -> None:
        if self.n_case <= 0 or self.n_control <= 0:
            raise ConfigError("n_case and n_control must be positive")
        if not 0.0 <= self.exposed_fraction <= 1.0:
            raise ConfigError("exposed_fraction must lie in [0, 1]")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError("signal_strength must lie in [0, 1]")
        if self.window_days < 1:
            raise ConfigError("window_days must be >= 1")
        total = (self.date_end - self.date_start).days
        if total < 365:
            raise ConfigError("date range must span at least 12 months")
        if self.min_span_days < 365 or self.min_span_days > total:
            raise ConfigError(f"min_span_days must lie in [365, {total}]")
        if not 5 <= self.min_visits <= self.max_visits:
            raise ConfigError("need 5 <= min_visits <= max_visits")
        if not self.min_visits <= self.mean_visits <= self.max_visits:
            raise ConfigError("mean_visits outside [min_visits, max_visits]")
        if self.max_visits > self.min_span_days:
            raise ConfigError("date span too short for the visit count")
        if self.marker_base_rate + self.marker_boost > 1.0:
            raise ConfigError("marker_base_rate + marker_boost must not exceed 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["date_start"] = self.date_start.isoformat()
        d["date_end"] = self.date_end.isoformat()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        data = dict(data)
        for k in ("date_start", "date_end"):
            if isinstance(data.get(k), str):
                data[k] = date.fromisoformat(data[k])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LabeledPopulation:
    split: str
    patients: list[PatientRecord]
    intended_label: dict[str, IntendedLabel] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {lab.value: 0 for lab in IntendedLabel}
        for lab in self.intended_label.values():
            out[lab.value] += 1
        return out


class _Pool:
    def __init__(self, entries):
        self.entries = entries
        w = np.array([e.weight for e in entries], dtype=float)
        self.cdf = np.cumsum(w / w.sum())

    def pick(self, u: float):
        return self.entries[min(int(np.searchsorted(self.cdf, u, side="right")), len(self.entries) - 1)]


_POOLS = {
    name: _Pool(getattr(catalog, name))
    for name in (
        "BACKGROUND_DX", "MARKER_DX", "EXPOSURE_DX", "OVERDOSE_DX", "NON_OVERDOSE_T_DX",
        "BACKGROUND_PX", "MARKER_PX", "OVERDOSE_PX", "BACKGROUND_RX", "MARKER_RX", "EXPOSURE_RX",
    )
}
_ICD9_DX = _Pool(tuple(e for e in catalog.EXPOSURE_DX if e.system.value == "ICD9-DX"))
_ICD10_DX = _Pool(tuple(e for e in catalog.EXPOSURE_DX if e.system.value == "ICD10-DX"))


def _item(entry) -> CodedItem:
    return CodedItem(entry.system, entry.code, entry.description)


def _rx(entry, d: date) -> Prescription:
    return Prescription(d, entry.drug_name, entry.therapeutic_class, entry.strength, entry.route)


def _visit_count(cfg: GeneratorConfig, rng: np.random.Generator) -> int:
    deficit_mean = cfg.max_visits - cfg.mean_visits
    deficit = rng.geometric(1.0 / (deficit_mean + 1.0)) - 1
    return int(np.clip(cfg.max_visits - deficit, cfg.min_visits, cfg.max_visits))


def _generate_patient(cfg: GeneratorConfig, split_index: int, index: int, label: IntendedLabel,
                      exposed: bool) -> PatientRecord:
    # one independent stream per patient; signal_strength never changes the draw sequence
    rng = np.random.default_rng([cfg.seed, split_index, index])
    split = SPLITS[split_index]
    enrol_id = f"{split[:2].upper()}{index:06d}"
    is_case = label is IntendedLabel.CASE

    age = int(rng.integers(18, 86))
    sex = Sex.F if rng.random() < 0.55 else Sex.M
    n_visits = _visit_count(cfg, rng)

    total_days = (cfg.date_end - cfg.date_start).days
    span = int(rng.integers(cfg.min_span_days, total_days + 1))
    start = cfg.date_start + timedelta(days=int(rng.integers(0, total_days - span + 1)))
    last = start + timedelta(days=span)
    final_gap = int(rng.integers(1, cfg.window_days + 1))
    prev = last - timedelta(days=final_gap)
    inner = np.sort(rng.integers(0, (prev - start).days, size=n_visits - 2))
    inner[0] = 0  # first visit pins the span start
    dates = [start + timedelta(days=int(x)) for x in inner] + [prev, last]

    marker_rate = cfg.marker_base_rate + (cfg.signal_strength * cfg.marker_boost if is_case else 0.0)
    # exposure events live strictly before the penultimate visit so they survive truncation
    forced_exposure = int(rng.integers(0, n_visits - 2)) if exposed else -1
    non_od_visit = int(rng.integers(0, n_visits - 1)) if rng.random() < cfg.non_overdose_t_rate else -1

    encounters = []
    scripts = []
    for v, d in enumerate(dates):
        u = rng.random(20)
        dx = [_item(_POOLS["BACKGROUND_DX"].pick(u[0]))]
        if u[1] < 0.75:
            dx.append(_item(_POOLS["BACKGROUND_DX"].pick(u[2])))
        if u[16] < 0.4:
            dx.append(_item(_POOLS["BACKGROUND_DX"].pick(u[17])))
        px = [_item(_POOLS["BACKGROUND_PX"].pick(u[3]))]
        if u[18] < 0.5:
            px.append(_item(_POOLS["BACKGROUND_PX"].pick(u[19])))
        if u[4] < marker_rate:
            dx.append(_item(_POOLS["MARKER_DX"].pick(u[5])))
        if u[6] < marker_rate:
            px.append(_item(_POOLS["MARKER_PX"].pick(u[7])))
        fill = min(d + timedelta(days=int(u[8] * 4)), last)
        if u[9] < cfg.rx_rate:
            scripts.append(_rx(_POOLS["BACKGROUND_RX"].pick(u[10]), fill))
        if u[11] < marker_rate:
            scripts.append(_rx(_POOLS["MARKER_RX"].pick(u[12]), fill))
        if exposed and v < n_visits - 2 and (v == forced_exposure or u[13] < cfg.exposure_event_rate):
            if u[14] < 0.5:
                scripts.append(_rx(_POOLS["EXPOSURE_RX"].pick(u[15]), min(fill, prev)))
            elif u[14] < 0.5 + 0.5 * (1 - cfg.icd9_rate):
                dx.append(_item(_ICD10_DX.pick(u[15])))
            else:
                dx.append(_item(_ICD9_DX.pick(u[15])))
        if v == non_od_visit:
            dx.append(_item(_POOLS["NON_OVERDOSE_T_DX"].pick(u[15])))
        if is_case and v == n_visits - 1:
            dx = [_item(_POOLS["OVERDOSE_DX"].pick(u[15]))] + dx[:1]
            px = [_item(_POOLS["OVERDOSE_PX"].pick(u[0]))]
        # repeated draws of one code collapse to a single line item
        encounters.append(Encounter(f"{enrol_id}-E{v:03d}", d, tuple(dict.fromkeys(dx)), tuple(dict.fromkeys(px))))

    return PatientRecord(enrol_id, Demographics(age, sex), tuple(encounters), tuple(scripts))


def generate_population(config: GeneratorConfig, split: str) -> LabeledPopulation:
    """Generate one split at the configured case/control/exposed composition.

    Cases carry exposure markers at the same rate as controls, so exposure
    alone is not predictive; only the marker pools scaled by
    ``signal_strength`` separate the cohorts.
    """
    config.validate()
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    split_index = SPLITS.index(split)
    n_exposed = int(round(config.exposed_fraction * config.n_control))
    n_case_exposed = int(round(config.exposed_fraction * config.n_case))

    plan: list[tuple[IntendedLabel, bool]] = []
    plan += [(IntendedLabel.CASE, i < n_case_exposed) for i in range(config.n_case)]
    plan += [(IntendedLabel.CONTROL_EXPOSED, True)] * n_exposed
    plan += [(IntendedLabel.CONTROL_NONEXPOSED, False)] * (config.n_control - n_exposed)
    order = np.random.default_rng([config.seed, split_index, 2**31]).permutation(len(plan))

    patients, labels = [], {}
    for index, k in enumerate(order):
        label, exposed = plan[k]
        p = _generate_patient(config, split_index, index, label, exposed)
        patients.append(p)
        labels[p.enrol_id] = label
    return LabeledPopulation(split, patients, labels)


def population_rows(population: LabeledPopulation) -> dict[str, list[tuple]]:
    rows: dict[str, list[tuple]] = {k: [] for k in
                                    ("encounter", "diagnosis", "procedure", "prescription", "demographics", "labels")}
    for p in population.patients:
        rows["demographics"].append((p.enrol_id, p.demographics.age_years, p.demographics.sex.value))
        rows["labels"].append((p.enrol_id, population.split, population.intended_label[p.enrol_id].value))
        for e in p.encounters:
            rows["encounter"].append((p.enrol_id, e.encounter_id, e.date.isoformat()))
            for it in e.diagnoses:
                rows["diagnosis"].append((p.enrol_id, e.encounter_id, it.code, it.system.value))
            for it in e.procedures:
                rows["procedure"].append((p.enrol_id, e.encounter_id, it.code, it.system.value))
        for rx in p.prescriptions:
            rows["prescription"].append(
                (p.enrol_id, rx.fill_date.isoformat(), rx.drug_name, rx.therapeutic_class, rx.strength, rx.route)
            )
    return rows


_HEADERS = {
    "encounter": ENCOUNTER_COLUMNS,
    "diagnosis": DIAGNOSIS_COLUMNS,
    "procedure": PROCEDURE_COLUMNS,
    "prescription": PRESCRIPTION_COLUMNS,
    "demographics": DEMOGRAPHICS_COLUMNS,
    "labels": ("ENROLID", "SPLIT", "INTENDED_LABEL"),
}


def write_population_tables(population: LabeledPopulation, directory: str | Path) -> list[Path]:
    """Write the five claim tables plus the labels.csv sidecar into ``directory``."""
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {directory}: {exc}") from exc
    for name, rows in population_rows(population).items():
        path = directory / f"{name}.csv"
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(_HEADERS[name])
                w.writerows(rows)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def read_labels(directory: str | Path) -> dict[str, IntendedLabel]:
    with open(Path(directory) / "labels.csv", newline="", encoding="utf-8") as fh:
        return {r["ENROLID"]: IntendedLabel(r["INTENDED_LABEL"]) for r in csv.DictReader(fh)}
