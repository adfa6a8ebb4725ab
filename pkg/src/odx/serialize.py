"""Prompt rendering: detailed/summarized visit formats in code or descriptive text."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .catalog import dictionary_payload
from .claims import CodeSystem, Encounter, Prescription, ValidationError
from .cohort import PredictionInstance
from .tokens import estimate_tokens

TEMPLATE_VERSION = "v1"
DEFAULT_MAX_VISITS = 30


class PromptFormat(str, Enum):
    DETAILED_DESCRIPTIVE = "DetailedDescriptive"
    DETAILED_CODE = "DetailedCode"
    SUMMARIZED_DESCRIPTIVE = "SummarizedDescriptive"
    SUMMARIZED_CODE = "SummarizedCode"

    @property
    def detailed(self) -> bool:
        return self in (PromptFormat.DETAILED_DESCRIPTIVE, PromptFormat.DETAILED_CODE)

    @property
    def descriptive(self) -> bool:
        return self in (PromptFormat.DETAILED_DESCRIPTIVE, PromptFormat.SUMMARIZED_DESCRIPTIVE)

    @property
    def slug(self) -> str:
        return {
            "DetailedDescriptive": "detailed_descriptive",
            "DetailedCode": "detailed_code",
            "SummarizedDescriptive": "summarized_descriptive",
            "SummarizedCode": "summarized_code",
        }[self.value]


@dataclass(frozen=True)
class FieldMask:
    diagnoses: bool = True
    procedures: bool = True
    prescriptions: bool = True

    def __post_init__(self):
        if not (self.diagnoses or self.procedures or self.prescriptions):
            raise ValidationError("field mask must enable at least one field")

    @classmethod
    def parse(cls, text: str) -> "FieldMask":
        """Parse ``"dx,proc,rx"``-style lists; ``"all"`` enables everything."""
        parts = {p.strip().lower() for p in text.split(",") if p.strip()}
        if parts == {"all"}:
            return cls()
        unknown = parts - {"dx", "proc", "rx"}
        if unknown:
            raise ValidationError(f"unknown mask fields: {sorted(unknown)}")
        return cls("dx" in parts, "proc" in parts, "rx" in parts)

    @property
    def name(self) -> str:
        return ",".join(
            n for n, on in (("dx", self.diagnoses), ("proc", self.procedures), ("rx", self.prescriptions)) if on
        )


ALL_FIELDS = FieldMask()


class CodeDictionary:
    """Code and field-name lookups; unknown entries fall back to the raw value."""

    def __init__(self, codes: dict | None = None, fields: dict | None = None):
        self.codes: dict[tuple[str, str], str] = {}
        for system, table in (codes or {}).items():
            for code, text in table.items():
                self.codes[(CodeSystem(system).value, code)] = text
        self.fields: dict[str, str] = dict(fields or {})
        self._reverse = {(s, text): code for (s, code), text in self.codes.items()}

    def describe(self, system, code: str) -> str:
        return self.codes.get((CodeSystem(system).value, code), code)

    def encode(self, system, text: str) -> str:
        """Reverse lookup from description to code; unknown text is echoed."""
        return self._reverse.get((CodeSystem(system).value, text), text)

    def label(self, field_name: str) -> str:
        return self.fields.get(field_name, field_name)

    @classmethod
    def from_json(cls, data: dict) -> "CodeDictionary":
        return cls(data.get("codes"), data.get("fields"))

    @classmethod
    def load(cls, path: str | Path) -> "CodeDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def default(cls) -> "CodeDictionary":
        return cls.from_json(dictionary_payload())


@lru_cache(maxsize=1)
def default_dictionary() -> CodeDictionary:
    return CodeDictionary.default()


@dataclass(frozen=True)
class PromptDocument:
    instance_id: str
    format: PromptFormat
    instruction: str
    body: str
    token_estimate: int
    visits_included: int
    window_days: int

    @property
    def prompt_text(self) -> str:
        return self.instruction + "\n\n" + self.body

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "format": self.format.value,
            "window_days": self.window_days,
            "token_estimate": self.token_estimate,
            "visits_included": self.visits_included,
            "instruction": self.instruction,
            "body": self.body,
            "prompt_text": self.prompt_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptDocument":
        return cls(
            d["instance_id"],
            PromptFormat(d["format"]),
            d["instruction"],
            d["body"],
            int(d["token_estimate"]),
            int(d["visits_included"]),
            int(d["window_days"]),
        )


# --- templates ----------------------------------------------------------

@lru_cache(maxsize=None)
def _template_text(name: str, templates_dir: str | None) -> str | None:
    if templates_dir is not None:
        path = Path(templates_dir) / name
        return path.read_text(encoding="utf-8") if path.exists() else None
    res = resources.files("odx").joinpath("templates").joinpath(TEMPLATE_VERSION).joinpath(name)
    return res.read_text(encoding="utf-8") if res.is_file() else None


def load_instruction(fmt: PromptFormat, window_days: int, templates_dir: str | Path | None = None) -> str:
    """Instruction text for ``fmt``; a window-specific file wins over the generic one."""
    tdir = str(templates_dir) if templates_dir is not None else None
    for name in (f"{fmt.slug}.w{window_days}.txt", f"{fmt.slug}.txt"):
        text = _template_text(name, tdir)
        if text is not None:
            return text.format(window_days=window_days).strip()
    raise FileNotFoundError(f"no instruction template for {fmt.value}")


# --- history selection --------------------------------------------------

def select_span(instance: PredictionInstance, max_visits: int) -> tuple[tuple[Encounter, ...], tuple[Prescription, ...]]:
    """Last ``max_visits`` encounters and the fills dated inside their span."""
    if max_visits < 1:
        raise ValidationError("max_visits must be >= 1")
    encounters = instance.history.encounters
    if not encounters:
        raise ValidationError(f"{instance.instance_id}: empty history")
    included = encounters[-max_visits:]
    lo, hi = included[0].date, instance.cutoff_date
    scripts = tuple(rx for rx in instance.history.prescriptions if lo <= rx.fill_date <= hi)
    return included, scripts


class FeatureKey(NamedTuple):
    feature_type: str
    value: str


PRIMARY_DX = "primary-dx"
SECONDARY_DX = "secondary-dx"
PROCEDURE = "procedure"
DRUG_NAME = "drug-name"
THERA_CLASS = "thera-class-strength-route"
FEATURE_TYPES = (PRIMARY_DX, SECONDARY_DX, PROCEDURE, DRUG_NAME, THERA_CLASS)


def encounter_keys(enc: Encounter, mask: FieldMask = ALL_FIELDS) -> list[FeatureKey]:
    keys = []
    if mask.diagnoses:
        for i, d in enumerate(enc.diagnoses):
            keys.append(FeatureKey(PRIMARY_DX if i == 0 else SECONDARY_DX, f"{d.system.value}:{d.code}"))
    if mask.procedures:
        keys.extend(FeatureKey(PROCEDURE, f"{p.system.value}:{p.code}") for p in enc.procedures)
    return keys


def prescription_keys(rx: Prescription, mask: FieldMask = ALL_FIELDS) -> list[FeatureKey]:
    if not mask.prescriptions:
        return []
    return [
        FeatureKey(DRUG_NAME, rx.drug_name),
        FeatureKey(THERA_CLASS, f"{rx.therapeutic_class}|{rx.strength}|{rx.route}"),
    ]


def summarize_history(instance: PredictionInstance, max_visits: int = DEFAULT_MAX_VISITS,
                      mask: FieldMask = ALL_FIELDS) -> dict[FeatureKey, int]:
    """Occurrence counts per feature key over the last ``max_visits`` visits, keys sorted."""
    encounters, scripts = select_span(instance, max_visits)
    counts: Counter = Counter()
    for e in encounters:
        counts.update(encounter_keys(e, mask))
    for rx in scripts:
        counts.update(prescription_keys(rx, mask))
    return dict(sorted(counts.items()))


# --- rendering ----------------------------------------------------------

_SUMMARY_LABELS = {
    PRIMARY_DX: ("PDX", "primary diagnosis"),
    SECONDARY_DX: ("SDX", "secondary diagnosis"),
    PROCEDURE: ("PROC_CD", "procedure"),
    DRUG_NAME: ("NDCNUM", "drug name"),
    THERA_CLASS: ("THERCLS", "therapeutic class, strength and route"),
}
_SEX_TEXT = {"F": "female", "M": "male", "U": "unknown"}


def _demographics(instance: PredictionInstance, descriptive: bool, d: CodeDictionary) -> dict:
    demo = instance.history.demographics
    if descriptive:
        return {d.label("AGE"): demo.age_years, d.label("SEX"): _SEX_TEXT[demo.sex.value]}
    return {"AGE": demo.age_years, "SEX": demo.sex.value}


def _detailed_body(instance, encounters, scripts, descriptive: bool, mask: FieldMask, d: CodeDictionary) -> str:
    def name(field_name):
        return d.label(field_name) if descriptive else field_name

    def value(item):
        return d.describe(item.system, item.code) if descriptive else item.code

    doc: dict = {name("DEMOGRAPHICS"): _demographics(instance, descriptive, d)}
    if mask.diagnoses or mask.procedures:
        visits = []
        for e in encounters:
            v = {name("SVCDATE"): e.date.isoformat()}
            if mask.diagnoses:
                v[name("DIAG_CD")] = [value(i) for i in e.diagnoses]
            if mask.procedures:
                v[name("PROC_CD")] = [value(i) for i in e.procedures]
            visits.append(v)
        doc[name("ENCOUNTERS")] = visits
    if mask.prescriptions:
        doc[name("PRESCRIPTIONS")] = [
            {
                name("FILLDATE"): rx.fill_date.isoformat(),
                name("NDCNUM"): rx.drug_name if descriptive else d.encode(CodeSystem.NDC_NAME, rx.drug_name),
                name("THERCLS"): (
                    rx.therapeutic_class if descriptive
                    else d.encode(CodeSystem.THERA_CLASS, rx.therapeutic_class)
                ),
                name("STRENGTH"): rx.strength,
                name("ROUTE"): rx.route,
            }
            for rx in scripts
        ]
    return _dump_document(doc)


def _compact(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def _dump_document(doc: dict) -> str:
    # one JSON object per line for list entries keeps the body readable and short
    lines = ["{"]
    items = list(doc.items())
    for n, (key, value) in enumerate(items):
        tail = "," if n < len(items) - 1 else ""
        if isinstance(value, list):
            lines.append(f" {_compact(key)}: [")
            lines += [f"  {_compact(v)}{',' if i < len(value) - 1 else ''}" for i, v in enumerate(value)]
            lines.append(f" ]{tail}")
        else:
            lines.append(f" {_compact(key)}: {_compact(value)}{tail}")
    lines.append("}")
    return "\n".join(lines)


def _summary_key_text(key: FeatureKey, descriptive: bool, d: CodeDictionary) -> str:
    compact, readable = _SUMMARY_LABELS[key.feature_type]
    if key.feature_type in (PRIMARY_DX, SECONDARY_DX, PROCEDURE):
        system, code = key.value.split(":", 1)
        return f"{readable}: {d.describe(system, code)}" if descriptive else f"{compact} {code}"
    if key.feature_type == THERA_CLASS:
        if descriptive:
            return f"{readable}: {key.value.replace('|', ', ')}"
        cls, rest = key.value.split("|", 1)
        return f"{compact} {d.encode(CodeSystem.THERA_CLASS, cls)}|{rest}"
    if descriptive:
        return f"{readable}: {key.value}"
    return f"{compact} {d.encode(CodeSystem.NDC_NAME, key.value)}"


def _summary_body(instance, counts: dict[FeatureKey, int], descriptive: bool, d: CodeDictionary) -> str:
    lines = [f"{k}: {v}" for k, v in _demographics(instance, descriptive, d).items()]
    lines += [f"{_summary_key_text(k, descriptive, d)} = {n}" for k, n in counts.items()]
    return "\n".join(lines)


def render_prompt(
    instance: PredictionInstance,
    fmt: PromptFormat,
    max_visits: int = DEFAULT_MAX_VISITS,
    mask: FieldMask = ALL_FIELDS,
    dictionary: CodeDictionary | None = None,
    templates_dir: str | Path | None = None,
) -> PromptDocument:
    fmt = PromptFormat(fmt)
    if not isinstance(mask, FieldMask):
        raise ValidationError("mask must be a FieldMask")
    d = dictionary if dictionary is not None else default_dictionary()
    encounters, scripts = select_span(instance, max_visits)
    if fmt.detailed:
        body = _detailed_body(instance, encounters, scripts, fmt.descriptive, mask, d)
    else:
        body = _summary_body(instance, summarize_history(instance, max_visits, mask), fmt.descriptive, d)
    instruction = load_instruction(fmt, instance.window.days, templates_dir)
    doc = PromptDocument(
        instance_id=instance.instance_id,
        format=fmt,
        instruction=instruction,
        body=body,
        token_estimate=0,
        visits_included=len(encounters),
        window_days=instance.window.days,
    )
    return PromptDocument(**{**doc.__dict__, "token_estimate": estimate_tokens(instruction + body)})


def write_prompts(documents, path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps(doc.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_prompts(path: str | Path) -> list[PromptDocument]:
    with open(path, encoding="utf-8") as fh:
        return [PromptDocument.from_dict(json.loads(line)) for line in fh if line.strip()]
