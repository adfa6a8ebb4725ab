"""Claims domain types, code rules and ingestion of the raw claim tables."""
from __future__ import annotations

import csv
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping


class ValidationError(ValueError):
    """Input rejected by a contract check."""


class CodeSystem(str, Enum):
    ICD9_DX = "ICD9-DX"
    ICD10_DX = "ICD10-DX"
    ICD9_PCS = "ICD9-PCS"
    CPT = "CPT"
    THERA_CLASS = "THERA-CLASS"
    NDC_NAME = "NDC-NAME"

    @property
    def is_icd(self) -> bool:
        return self in (CodeSystem.ICD9_DX, CodeSystem.ICD10_DX, CodeSystem.ICD9_PCS)

    @property
    def is_diagnosis(self) -> bool:
        return self in (CodeSystem.ICD9_DX, CodeSystem.ICD10_DX)


class Sex(str, Enum):
    F = "F"
    M = "M"
    U = "U"


def normalize_code(raw: str, system: CodeSystem) -> str:
    """Canonical form of a code: trimmed, uppercased, and dot-free for ICD systems."""
    if raw is None or not str(raw).strip():
        raise ValidationError("empty code")
    code = str(raw).strip().upper()
    if CodeSystem(system).is_icd:
        code = code.replace(".", "")
    if not code:
        raise ValidationError(f"code {raw!r} is empty once normalized")
    return code


@dataclass(frozen=True, order=True)
class CodedItem:
    system: CodeSystem
    code: str
    description: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "system", CodeSystem(self.system))
        object.__setattr__(self, "code", normalize_code(self.code, self.system))


@dataclass(frozen=True)
class Encounter:
    encounter_id: str
    date: date
    diagnoses: tuple[CodedItem, ...] = ()
    procedures: tuple[CodedItem, ...] = ()

    def __post_init__(self):
        # canonical item order keeps parsing independent of source row order
        object.__setattr__(self, "diagnoses", tuple(sorted(self.diagnoses)))
        object.__setattr__(self, "procedures", tuple(sorted(self.procedures)))

    @property
    def sort_key(self) -> tuple[date, str]:
        return (self.date, self.encounter_id)


@dataclass(frozen=True)
class Prescription:
    fill_date: date
    drug_name: str
    therapeutic_class: str
    strength: str = ""
    route: str = ""

    @property
    def sort_key(self) -> tuple:
        return (self.fill_date, self.drug_name, self.therapeutic_class, self.strength, self.route)


@dataclass(frozen=True)
class Demographics:
    age_years: int
    sex: Sex = Sex.U

    def __post_init__(self):
        if self.age_years < 0:
            raise ValidationError(f"negative age: {self.age_years}")
        object.__setattr__(self, "sex", Sex(self.sex))


@dataclass(frozen=True)
class PatientRecord:
    enrol_id: str
    demographics: Demographics
    encounters: tuple[Encounter, ...] = ()
    prescriptions: tuple[Prescription, ...] = ()

    def __post_init__(self):
        ids = [e.encounter_id for e in self.encounters]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate encounter_id for patient {self.enrol_id}")
        object.__setattr__(self, "encounters", tuple(sorted(self.encounters, key=lambda e: e.sort_key)))
        object.__setattr__(
            self, "prescriptions", tuple(sorted(self.prescriptions, key=lambda p: p.sort_key))
        )

    def event_dates(self) -> list[date]:
        return [e.date for e in self.encounters] + [p.fill_date for p in self.prescriptions]

    def n_events(self) -> int:
        """Diagnoses + procedures + prescription fills."""
        return sum(len(e.diagnoses) + len(e.procedures) for e in self.encounters) + len(
            self.prescriptions
        )


# --- code rules ---------------------------------------------------------

_OVERDOSE_ICD9_PREFIXES = ("965", "968", "969", "970", "E850", "E853", "E854", "E858")
_EXPOSURE_ICD9_PREFIXES = ("3040", "3042", "3044", "3047", "3055", "3056", "3057", "3058")
_EXPOSURE_ICD10_PREFIXES = ("F11", "F14", "F15")
_NON_OVERDOSE_INTENT = ("5", "6")  # adverse effect, underdosing
_INTENT_POS = 5  # 0-based, dotless: T40 2 X <intent> A

EXPOSURE_CLASSES = (
    "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents",
    "Analgesics \u2013 Opioid",
)
_DASHES = re.compile("[‐‑‒–—−]")
_SPACES = re.compile(r"\s+")


def _stem_in_poisoning_range(code: str) -> bool:
    if len(code) < 3 or code[0] != "T" or not code[1:3].isdigit():
        return False
    return 36 <= int(code[1:3]) <= 50


def is_overdose_diagnosis(item: CodedItem) -> bool:
    code = item.code
    if item.system is CodeSystem.ICD10_DX:
        if not _stem_in_poisoning_range(code):
            return False
        # a code too short to carry an intent character stays inclusive
        return not (len(code) > _INTENT_POS and code[_INTENT_POS] in _NON_OVERDOSE_INTENT)
    if item.system is CodeSystem.ICD9_DX:
        return code.startswith(_OVERDOSE_ICD9_PREFIXES)
    return False


def is_exposure_diagnosis(item: CodedItem) -> bool:
    if item.system is CodeSystem.ICD10_DX:
        return item.code.startswith(_EXPOSURE_ICD10_PREFIXES)
    if item.system is CodeSystem.ICD9_DX:
        return item.code.startswith(_EXPOSURE_ICD9_PREFIXES)
    return False


def normalize_class_name(name: str) -> str:
    """Trim, collapse internal whitespace and fold dash variants to '-'."""
    return _SPACES.sub(" ", _DASHES.sub("-", name or "")).strip()


_EXPOSURE_CLASS_SET = frozenset(normalize_class_name(c) for c in EXPOSURE_CLASSES)


def is_exposure_prescription(rx: Prescription) -> bool:
    return normalize_class_name(rx.therapeutic_class) in _EXPOSURE_CLASS_SET


# --- ingestion ----------------------------------------------------------

ENCOUNTER_COLUMNS = ("ENROLID", "ENCOUNTERID", "SVCDATE")
DIAGNOSIS_COLUMNS = ("ENROLID", "ENCOUNTERID", "DIAG_CD", "DIAG_SYS")
PROCEDURE_COLUMNS = ("ENROLID", "ENCOUNTERID", "PROC_CD", "PROC_SYS")
PRESCRIPTION_COLUMNS = ("ENROLID", "FILLDATE", "DRUGNAME", "THERCLS", "STRENGTH", "ROUTE")
DEMOGRAPHICS_COLUMNS = ("ENROLID", "AGE", "SEX")

TABLE_FILES = {
    "encounter": ("encounter.csv", ENCOUNTER_COLUMNS),
    "diagnosis": ("diagnosis.csv", DIAGNOSIS_COLUMNS),
    "procedure": ("procedure.csv", PROCEDURE_COLUMNS),
    "prescription": ("prescription.csv", PRESCRIPTION_COLUMNS),
    "demographics": ("demographics.csv", DEMOGRAPHICS_COLUMNS),
}


@dataclass
class Rejection:
    table: str
    row: dict
    reason: str


@dataclass
class IngestReport:
    rows_read: dict[str, int] = field(default_factory=dict)
    rejections: list[Rejection] = field(default_factory=list)

    def reject(self, table: str, row: Mapping, reason: str) -> None:
        self.rejections.append(Rejection(table, dict(row), reason))

    def to_dict(self) -> dict:
        counts: dict[str, int] = defaultdict(int)
        for r in self.rejections:
            counts[r.table] += 1
        return {
            "rows_read": dict(sorted(self.rows_read.items())),
            "rejected": dict(sorted(counts.items())),
            "rejections": [
                {"table": r.table, "reason": r.reason, "row": r.row} for r in self.rejections
            ],
        }


def parse_date(text: str) -> date:
    return date.fromisoformat(str(text).strip())


def parse_claims_tables(
    diagnosis_rows: Iterable[Mapping],
    procedure_rows: Iterable[Mapping],
    encounter_rows: Iterable[Mapping],
    prescription_rows: Iterable[Mapping],
    demographics_rows: Iterable[Mapping] | None = None,
    report: IngestReport | None = None,
) -> list[PatientRecord]:
    """Join the raw claim tables into per-patient longitudinal records.

    Diagnosis and procedure rows attach to encounters through (ENROLID,
    ENCOUNTERID). Rows with a dangling encounter reference or an unparseable
    date are rejected one by one and logged to ``report``; the rest of the
    patient's history is kept. Patients without a demographics row get age 0
    and sex ``U``. Output is sorted by enrol id.
    """
    report = report if report is not None else IngestReport()

    encounters: dict[tuple[str, str], date] = {}
    n = 0
    for row in encounter_rows:
        n += 1
        key = (str(row["ENROLID"]), str(row["ENCOUNTERID"]))
        try:
            d = parse_date(row["SVCDATE"])
        except (ValueError, TypeError):
            report.reject("encounter", row, "malformed date")
            continue
        if key in encounters:
            report.reject("encounter", row, "duplicate encounter id")
            continue
        encounters[key] = d
    report.rows_read["encounter"] = n

    items: dict[tuple[str, str], dict[str, list[CodedItem]]] = defaultdict(
        lambda: {"dx": [], "px": []}
    )
    for table, rows, code_col, sys_col, slot in (
        ("diagnosis", diagnosis_rows, "DIAG_CD", "DIAG_SYS", "dx"),
        ("procedure", procedure_rows, "PROC_CD", "PROC_SYS", "px"),
    ):
        n = 0
        for row in rows:
            n += 1
            key = (str(row["ENROLID"]), str(row["ENCOUNTERID"]))
            if key not in encounters:
                report.reject(table, row, "dangling encounter id")
                continue
            try:
                item = CodedItem(CodeSystem(row[sys_col]), row[code_col])
            except (ValueError, ValidationError) as exc:
                report.reject(table, row, f"bad code: {exc}")
                continue
            items[key][slot].append(item)
        report.rows_read[table] = n

    scripts: dict[str, list[Prescription]] = defaultdict(list)
    n = 0
    for row in prescription_rows:
        n += 1
        try:
            d = parse_date(row["FILLDATE"])
        except (ValueError, TypeError):
            report.reject("prescription", row, "malformed date")
            continue
        scripts[str(row["ENROLID"])].append(
            Prescription(
                fill_date=d,
                drug_name=row["DRUGNAME"],
                therapeutic_class=row["THERCLS"],
                strength=row.get("STRENGTH") or "",
                route=row.get("ROUTE") or "",
            )
        )
    report.rows_read["prescription"] = n

    demo: dict[str, Demographics] = {}
    if demographics_rows is not None:
        n = 0
        for row in demographics_rows:
            n += 1
            try:
                demo[str(row["ENROLID"])] = Demographics(int(row["AGE"]), Sex(row["SEX"] or "U"))
            except (ValueError, ValidationError) as exc:
                report.reject("demographics", row, f"bad demographics: {exc}")
        report.rows_read["demographics"] = n

    by_patient: dict[str, list[Encounter]] = defaultdict(list)
    for (pid, eid), d in encounters.items():
        slots = items.get((pid, eid), {"dx": [], "px": []})
        by_patient[pid].append(Encounter(eid, d, tuple(slots["dx"]), tuple(slots["px"])))

    patients = []
    for pid in sorted(set(by_patient) | set(scripts) | set(demo)):
        patients.append(
            PatientRecord(
                enrol_id=pid,
                demographics=demo.get(pid, Demographics(0, Sex.U)),
                encounters=tuple(by_patient.get(pid, ())),
                prescriptions=tuple(scripts.get(pid, ())),
            )
        )
    return patients


def _read_csv(path: Path, columns: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in columns if c not in (reader.fieldnames or ())]
            if missing:
                raise ValidationError(f"{path}: missing columns {missing}")
            return list(reader)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def read_claims_directory(directory: str | Path, report: IngestReport | None = None):
    """Load the five claim CSVs from ``directory`` and parse them."""
    directory = Path(directory)
    tables = {}
    for name, (fname, cols) in TABLE_FILES.items():
        path = directory / fname
        if name == "prescription" and not path.exists():
            tables[name] = []
            continue
        tables[name] = _read_csv(path, cols)
    return parse_claims_tables(
        tables["diagnosis"],
        tables["procedure"],
        tables["encounter"],
        tables["prescription"],
        tables["demographics"],
        report=report,
    )
