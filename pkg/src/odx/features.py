"""Frequency-thresholded feature vocabulary and sparse count vectors."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .claims import ValidationError
from .cohort import PredictionInstance
from .serialize import (
    ALL_FIELDS,
    DEFAULT_MAX_VISITS,
    FeatureKey,
    FieldMask,
    encounter_keys,
    prescription_keys,
    select_span,
    summarize_history,
)

DEFAULT_MIN_SUPPORT = 50


class SplitLeakError(ValidationError):
    """Raised when non-training instances reach vocabulary construction."""


@dataclass
class Vocabulary:
    keys: list[FeatureKey]
    min_support: int = DEFAULT_MIN_SUPPORT
    index: dict[FeatureKey, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.keys = [FeatureKey(*k) for k in self.keys]
        self.index = {k: i for i, k in enumerate(self.keys)}
        if len(self.index) != len(self.keys):
            raise ValidationError("duplicate vocabulary keys")

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key) -> bool:
        return key in self.index

    def to_dict(self) -> dict:
        return {"min_support": self.min_support, "keys": [list(k) for k in self.keys]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls([FeatureKey(t, v) for t, v in d["keys"]], int(d["min_support"]))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class FeatureVector:
    counts: dict[int, int]
    dimension: int

    def __post_init__(self):
        for pos, n in self.counts.items():
            if not 0 <= pos < self.dimension or n < 1:
                raise ValidationError(f"bad sparse entry {pos}:{n} (dimension {self.dimension})")

    def dense(self, dtype=np.float32) -> np.ndarray:
        out = np.zeros(self.dimension, dtype=dtype)
        for pos, n in self.counts.items():
            out[pos] = n
        return out

    def total(self) -> int:
        return sum(self.counts.values())


def support_counts(instances: Iterable[PredictionInstance], max_visits: int = DEFAULT_MAX_VISITS,
                   mask: FieldMask = ALL_FIELDS) -> Counter:
    """Per-key count of visits containing the key.

    Each prescription fill is its own unit: fills are not tied to an
    encounter in the claims schema.
    """
    support: Counter = Counter()
    for inst in instances:
        encounters, scripts = select_span(inst, max_visits)
        for e in encounters:
            support.update(set(encounter_keys(e, mask)))
        for rx in scripts:
            support.update(set(prescription_keys(rx, mask)))
    return support


def build_vocabulary(
    train_instances: Sequence[PredictionInstance],
    min_support: int = DEFAULT_MIN_SUPPORT,
    max_visits: int = DEFAULT_MAX_VISITS,
    shards: int = 1,
) -> Vocabulary:
    train_instances = list(train_instances)
    if not train_instances:
        raise ValidationError("cannot build a vocabulary from an empty training set")
    leaked = sorted({i.split for i in train_instances if i.split not in (None, "train")})
    if leaked:
        raise SplitLeakError(f"vocabulary input contains non-training splits: {leaked}")
    # counting is a sum of per-shard counters, so shard boundaries never matter
    step = max(1, -(-len(train_instances) // max(1, shards)))
    support: Counter = Counter()
    for lo in range(0, len(train_instances), step):
        support += support_counts(train_instances[lo:lo + step], max_visits)
    keys = sorted(k for k, n in support.items() if n >= min_support)
    return Vocabulary(keys, min_support)


def vectorize(instance: PredictionInstance, vocab: Vocabulary, max_visits: int = DEFAULT_MAX_VISITS,
              mask: FieldMask = ALL_FIELDS) -> FeatureVector:
    counts = {}
    for key, n in summarize_history(instance, max_visits, mask).items():
        pos = vocab.index.get(key)
        if pos is not None:
            counts[pos] = n
    return FeatureVector(dict(sorted(counts.items())), len(vocab))


def to_matrix(vectors: Sequence[FeatureVector], dimension: int | None = None) -> np.ndarray:
    if dimension is None:
        dimension = vectors[0].dimension if vectors else 0
    X = np.zeros((len(vectors), dimension), dtype=np.float32)
    for row, v in enumerate(vectors):
        if v.dimension != dimension:
            raise ValidationError(f"vector dimension {v.dimension} != {dimension}")
        for pos, n in v.counts.items():
            X[row, pos] = n
    return X


# --- vectors.txt: "<instance_id>\t<pos>:<count> <pos>:<count> ..." ------

def write_vectors(rows: Iterable[tuple[str, FeatureVector]], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for instance_id, vec in rows:
            cells = " ".join(f"{p}:{c}" for p, c in sorted(vec.counts.items()))
            fh.write(f"{instance_id}\t{cells}\n")
            n += 1
    return n


def read_vectors(path: str | Path, dimension: int) -> list[tuple[str, FeatureVector]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            instance_id, _, cells = line.partition("\t")
            counts = {}
            for cell in cells.split():
                p, c = cell.split(":")
                counts[int(p)] = int(c)
            out.append((instance_id, FeatureVector(counts, dimension)))
    return out
