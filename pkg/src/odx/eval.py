"""Metrics, subgroup accuracy, visit-limit sweep, field ablation and cost."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .claims import ValidationError
from .cohort import NO_OVERDOSE, OVERDOSE, CohortLabel, PredictionInstance
from .prediction import Prediction
from .serialize import ALL_FIELDS, DEFAULT_MAX_VISITS, FieldMask, PromptDocument, PromptFormat, render_prompt

VISIT_LIMITS = (5, 10, 20, 30, 40)
ABLATION_MASKS = (
    FieldMask(True, False, False),
    FieldMask(False, True, False),
    FieldMask(False, False, True),
    FieldMask(True, True, False),
    FieldMask(True, False, True),
    FieldMask(False, True, True),
    FieldMask(True, True, True),
)
ERRORS_AS_NEGATIVE = "negative"
ERRORS_EXCLUDED = "exclude"
EXPOSED = "exposed"
NON_EXPOSED = "non-exposed"

Predictor = Callable[[Sequence[PromptDocument]], Sequence[Prediction]]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[bool, bool]]) -> "ConfusionMatrix":
        """``pairs`` of (predicted positive, actually positive)."""
        tp = fp = tn = fn = 0
        for pred, gold in pairs:
            if pred and gold:
                tp += 1
            elif pred:
                fp += 1
            elif gold:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class EvalReport:
    precision: float | None
    recall: float | None
    specificity: float | None
    f1: float | None
    confusion: ConfusionMatrix
    subgroup_accuracy: dict[str, float | None] = field(default_factory=dict)
    n_errors: int = 0
    error_policy: str = ERRORS_AS_NEGATIVE

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, **extra) -> "EvalReport":
        p = _ratio(cm.tp, cm.tp + cm.fp)
        r = _ratio(cm.tp, cm.tp + cm.fn)
        spec = _ratio(cm.tn, cm.tn + cm.fp)
        if p is None or r is None:
            f1 = None
        elif p + r == 0:
            f1 = 0.0
        else:
            f1 = 2 * p * r / (p + r)
        return cls(p, r, spec, f1, cm, **extra)

    def percentages(self) -> dict[str, float | None]:
        return {k: None if v is None else round(100 * v, 2) for k, v in self.metric_items()}

    def metric_items(self):
        return (("precision", self.precision), ("recall", self.recall),
                ("specificity", self.specificity), ("f1", self.f1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["percent"] = self.percentages()
        return d


def _check_policy(policy: str) -> None:
    if policy not in (ERRORS_AS_NEGATIVE, ERRORS_EXCLUDED):
        raise ValidationError(f"unknown error policy {policy!r}")


def _aligned(predictions: Sequence[Prediction], gold: Mapping[str, str]) -> list[tuple[Prediction, str]]:
    ids = [p.instance_id for p in predictions]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate instance ids among predictions")
    if set(ids) != set(gold):
        missing = sorted(set(gold) - set(ids))[:3]
        extra = sorted(set(ids) - set(gold))[:3]
        raise ValidationError(f"prediction ids do not match gold ids (missing {missing}, unexpected {extra})")
    for label in gold.values():
        if label not in (OVERDOSE, NO_OVERDOSE):
            raise ValidationError(f"unknown gold label {label!r}")
    return [(p, gold[p.instance_id]) for p in predictions]


def _scored(pairs, policy):
    # failed predictions count as negative or drop out, per policy
    for p, g in pairs:
        if p.failed and policy == ERRORS_EXCLUDED:
            continue
        yield p.is_positive, g == OVERDOSE


def subgroup_accuracy(
    predictions: Sequence[Prediction],
    gold: Mapping[str, str],
    cohort_tags: Mapping[str, str | CohortLabel],
    error_policy: str = ERRORS_AS_NEGATIVE,
) -> dict[str, float | None]:
    """Share of controls predicted no-overdose, split by exposure."""
    _check_policy(error_policy)
    groups = {CohortLabel.CONTROL_EXPOSED: EXPOSED, CohortLabel.CONTROL_NONEXPOSED: NON_EXPOSED}
    right = {EXPOSED: 0, NON_EXPOSED: 0}
    total = {EXPOSED: 0, NON_EXPOSED: 0}
    for p, g in _aligned(predictions, gold):
        if p.instance_id not in cohort_tags:
            raise ValidationError(f"{p.instance_id}: no cohort tag")
        name = groups.get(CohortLabel(cohort_tags[p.instance_id]))
        if name is None or (p.failed and error_policy == ERRORS_EXCLUDED):
            continue
        total[name] += 1
        right[name] += int(not p.is_positive)
    return {k: _ratio(right[k], total[k]) for k in (EXPOSED, NON_EXPOSED)}


def compute_metrics(
    predictions: Sequence[Prediction],
    gold: Mapping[str, str],
    cohort_tags: Mapping[str, str | CohortLabel] | None = None,
    error_policy: str = ERRORS_AS_NEGATIVE,
) -> EvalReport:
    _check_policy(error_policy)
    pairs = _aligned(predictions, gold)
    cm = ConfusionMatrix.from_pairs(_scored(pairs, error_policy))
    report = EvalReport.from_confusion(
        cm, n_errors=sum(p.failed for p, _ in pairs), error_policy=error_policy
    )
    if cohort_tags is not None:
        report.subgroup_accuracy = subgroup_accuracy(predictions, gold, cohort_tags, error_policy)
    return report


# --- cost -------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    input_price_per_1k_tokens: float = 0.0025
    output_price_per_1k_tokens: float = 0.01
    assumed_output_tokens: int = 5

    def __post_init__(self):
        if self.input_price_per_1k_tokens < 0 or self.output_price_per_1k_tokens < 0:
            raise ValidationError("prices must be non-negative")
        if self.assumed_output_tokens < 0:
            raise ValidationError("assumed_output_tokens must be non-negative")

    def instance_cost(self, input_tokens: int) -> float:
        return (input_tokens / 1000 * self.input_price_per_1k_tokens
                + self.assumed_output_tokens / 1000 * self.output_price_per_1k_tokens)


def estimate_cost(documents: Sequence[PromptDocument], cost_model: CostModel = CostModel()) -> float:
    """Mean USD per instance."""
    if not documents:
        return 0.0
    return math.fsum(cost_model.instance_cost(d.token_estimate) for d in documents) / len(documents)


def format_usd(value: float) -> str:
    return f"${value:.4f}"


# --- drivers -------------------------------------------------------------------

class SweepError(RuntimeError):
    def __init__(self, cell: str, cause: Exception):
        super().__init__(f"{cell}: {cause}")
        self.cell = cell


@dataclass
class TableRow:
    name: str
    report: EvalReport
    mean_tokens: float
    min_tokens: int
    max_tokens: int
    mean_visits: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mean_tokens": round(self.mean_tokens, 4),
            "min_tokens": self.min_tokens,
            "max_tokens": self.max_tokens,
            "mean_visits": round(self.mean_visits, 4),
            "report": self.report.to_dict(),
        }


def _gold(instances: Sequence[PredictionInstance]) -> tuple[dict, dict]:
    return ({i.instance_id: i.label for i in instances}, {i.instance_id: i.cohort for i in instances})


def evaluate_cell(name, predictor: Predictor, instances, fmt, max_visits, mask, dictionary=None,
                  templates_dir=None, error_policy=ERRORS_AS_NEGATIVE) -> TableRow:
    try:
        docs = [render_prompt(i, fmt, max_visits, mask, dictionary, templates_dir) for i in instances]
        preds = list(predictor(docs))
        gold, tags = _gold(instances)
        report = compute_metrics(preds, gold, tags, error_policy)
    except Exception as exc:
        raise SweepError(name, exc) from exc
    tokens = [d.token_estimate for d in docs]
    return TableRow(name, report, sum(tokens) / len(tokens), min(tokens), max(tokens),
                    sum(d.visits_included for d in docs) / len(docs))


def run_visits_sweep(predictor: Predictor, instances: Sequence[PredictionInstance],
                     visit_limits: Sequence[int] = VISIT_LIMITS,
                     fmt=PromptFormat.DETAILED_DESCRIPTIVE, mask: FieldMask = ALL_FIELDS,
                     dictionary=None, templates_dir=None,
                     error_policy: str = ERRORS_AS_NEGATIVE) -> list[TableRow]:
    if not instances:
        raise ValidationError("sweep needs at least one instance")
    return [
        evaluate_cell(f"max_visits={n}", predictor, instances, fmt, n, mask, dictionary,
                      templates_dir, error_policy)
        for n in visit_limits
    ]


def run_field_ablation(predictor: Predictor, instances: Sequence[PredictionInstance],
                       fmt=PromptFormat.DETAILED_DESCRIPTIVE, max_visits: int = DEFAULT_MAX_VISITS,
                       dictionary=None, templates_dir=None,
                       error_policy: str = ERRORS_AS_NEGATIVE) -> list[TableRow]:
    if not instances:
        raise ValidationError("ablation needs at least one instance")
    return [
        evaluate_cell(mask.name, predictor, instances, fmt, max_visits, mask, dictionary,
                      templates_dir, error_policy)
        for mask in ABLATION_MASKS
    ]


# --- rendering ------------------------------------------------------------------

METRIC_HEADERS = ("Precision", "Recall", "Specificity", "F1-score")


def _pct(v: float | None) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def format_table(rows: Sequence[tuple[str, EvalReport]], first_header: str = "Model",
                 extra: Mapping[str, Sequence[str]] | None = None) -> str:
    """Plain-text table with P/R/Spec/F1 as percentages, two decimals."""
    extra = extra or {}
    headers = [first_header, *METRIC_HEADERS, *extra]
    body = []
    for i, (name, rep) in enumerate(rows):
        body.append([name, *(_pct(v) for _, v in rep.metric_items()), *(col[i] for col in extra.values())])
    widths = [max(len(str(r[c])) for r in [headers, *body]) for c in range(len(headers))]

    def fmt_row(r):
        # names left-aligned, numbers right-aligned
        return "  ".join(str(v).ljust(w) if c == 0 else str(v).rjust(w) for c, (v, w) in enumerate(zip(r, widths)))

    lines = [fmt_row(headers), "  ".join("-" * w for w in widths)]
    lines += [fmt_row(r) for r in body]
    return "\n".join(lines)


def table_rows_text(rows: Sequence[TableRow], first_header: str) -> str:
    return format_table(
        [(r.name, r.report) for r in rows], first_header,
        {"Tokens": [f"{r.mean_tokens:.2f}" for r in rows]},
    )


def write_report(payload: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
