"""Prediction records shared by the tree baselines, the LLM client and evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from .claims import ValidationError
from .cohort import NO_OVERDOSE, OVERDOSE

LABELS = (OVERDOSE, NO_OVERDOSE)


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    label: str | None
    score: float | None = None
    raw_response: str | None = None
    error: str | None = None  # set when no label could be obtained

    def __post_init__(self):
        if self.label is None and self.error is None:
            raise ValidationError(f"{self.instance_id}: prediction needs a label or an error")
        if self.label is not None and self.label not in LABELS:
            raise ValidationError(f"{self.instance_id}: unknown label {self.label!r}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"{self.instance_id}: score {self.score} outside [0, 1]")

    @property
    def failed(self) -> bool:
        return self.label is None

    @property
    def is_positive(self) -> bool:
        return self.label == OVERDOSE

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(d["instance_id"], d.get("label"), d.get("score"), d.get("raw_response"), d.get("error"))


def write_predictions(preds: Iterable[Prediction], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_predictions(path: str | Path) -> list[Prediction]:
    with open(path, encoding="utf-8") as fh:
        return [Prediction.from_dict(json.loads(line)) for line in fh if line.strip()]
