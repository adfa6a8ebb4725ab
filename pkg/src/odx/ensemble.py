"""Random forest and gradient-boosted trees with validation grid search."""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .claims import ValidationError
from .cohort import NO_OVERDOSE, OVERDOSE
from .features import FeatureVector, to_matrix
from .prediction import Prediction
from .trees import GINI, NEWTON, Tree, bin_matrix, grow_tree

MODEL_FORMAT_VERSION = 1
THRESHOLD = 0.5


class TrainingError(ValueError):
    pass


class EnsembleKind(str, Enum):
    RANDOM_FOREST = "random-forest"
    GRADIENT_BOOSTED = "gradient-boosted"


@dataclass
class HyperGrid:
    n_trees: list[int]
    max_depth: list[int]
    min_leaf: list[int] = field(default_factory=lambda: [1])
    learning_rate: list[float] = field(default_factory=lambda: [0.1])

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_leaf", "learning_rate"):
            values = getattr(self, name)
            if not values:
                raise ValidationError(f"grid list {name!r} is empty")
        if min(self.n_trees) < 1 or min(self.max_depth) < 0 or min(self.min_leaf) < 1:
            raise ValidationError("grid values out of range")

    def points(self) -> list[dict]:
        # declared order: earlier lists vary slowest
        return [
            {"n_trees": t, "max_depth": d, "min_leaf": m, "learning_rate": r}
            for t, d, m, r in itertools.product(self.n_trees, self.max_depth, self.min_leaf, self.learning_rate)
        ]

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf, "learning_rate": self.learning_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperGrid":
        return cls(**{k: list(v) for k, v in d.items()})


def default_grid(kind) -> HyperGrid:
    if EnsembleKind(kind) is EnsembleKind.RANDOM_FOREST:
        return HyperGrid(n_trees=[100, 300], max_depth=[8, 16], min_leaf=[1, 5])
    return HyperGrid(n_trees=[100, 300], max_depth=[3, 6], learning_rate=[0.1, 0.3])


@dataclass
class TreeEnsembleModel:
    kind: EnsembleKind
    trees: list[Tree]
    hyperparameters: dict
    dimension: int
    base_score: float = 0.0
    seed: int = 0
    grid_index: int = 0
    validation_f1: float | None = None
    vocab_digest: str | None = None

    def __post_init__(self):
        self.kind = EnsembleKind(self.kind)
        if not self.trees:
            raise ValidationError("an ensemble needs at least one tree")
        for t in self.trees:
            if t.max_feature() >= self.dimension:
                raise ValidationError("tree splits on a feature outside the model dimension")

    def decision_scores(self, X: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dimension:
            raise ValidationError(f"expected {self.dimension} features, got shape {X.shape}")
        if self.kind is EnsembleKind.RANDOM_FOREST:
            votes = np.zeros(X.shape[0])
            for t in self.trees:
                votes += t.apply(X, use_numba) >= THRESHOLD
            return votes / len(self.trees)
        margin = np.full(X.shape[0], self.base_score)
        rate = float(self.hyperparameters["learning_rate"])
        for t in self.trees:
            margin += rate * t.apply(X, use_numba)
        return 1.0 / (1.0 + np.exp(-margin))

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "hyperparameters": self.hyperparameters,
            "dimension": self.dimension,
            "base_score": self.base_score,
            "seed": self.seed,
            "grid_index": self.grid_index,
            "validation_f1": self.validation_f1,
            "vocab_digest": self.vocab_digest,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsembleModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model format {d.get('format_version')!r}")
        return cls(
            kind=d["kind"],
            trees=[Tree.from_dict(t) for t in d["trees"]],
            hyperparameters=d["hyperparameters"],
            dimension=int(d["dimension"]),
            base_score=float(d["base_score"]),
            seed=int(d["seed"]),
            grid_index=int(d["grid_index"]),
            validation_f1=d.get("validation_f1"),
            vocab_digest=d.get("vocab_digest"),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsembleModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _balanced_weights(y: np.ndarray) -> np.ndarray:
    n, n_pos = len(y), int(y.sum())
    w_pos = n / (2.0 * n_pos)
    w_neg = n / (2.0 * (n - n_pos))
    return np.where(y > 0, w_pos, w_neg)


def _tree_seed(seed: int, i: int) -> int:
    return int(np.random.default_rng([seed, i]).integers(1, 2**31 - 1))


def _fit_forest(X, y, params, seed, use_numba):
    n, d = X.shape
    X = bin_matrix(X)
    w = _balanced_weights(y)
    max_features = max(1, int(round(math.sqrt(d))))
    trees = []
    for i in range(params["n_trees"]):
        rng = np.random.default_rng([seed, i])
        boot = np.sort(rng.integers(0, n, size=n))
        trees.append(grow_tree(
            X, w, w * y, boot, max_depth=params["max_depth"], min_leaf=params["min_leaf"],
            max_features=max_features, mode=GINI, seed=_tree_seed(seed, i), use_numba=use_numba,
        ))
    return trees, 0.0


def _fit_boosting(X, y, params, seed, use_numba, lam=1.0):
    w = _balanced_weights(y)
    pos = float((w * y).sum())
    base = math.log(pos / float((w * (1 - y)).sum()))
    margin = np.full(len(y), base)
    rate = float(params["learning_rate"])
    Xb = bin_matrix(X)
    trees = []
    for i in range(params["n_trees"]):
        p = 1.0 / (1.0 + np.exp(-margin))
        g = w * (p - y)
        h = w * p * (1.0 - p)
        t = grow_tree(Xb, h, g, max_depth=params["max_depth"], min_leaf=params["min_leaf"],
                      mode=NEWTON, lam=lam, seed=_tree_seed(seed, i), use_numba=use_numba)
        trees.append(t)
        margin += rate * t.apply(X, use_numba)
    return trees, base


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.asarray(X, dtype=np.float64)
    X = list(X)
    if X and isinstance(X[0], FeatureVector):
        return to_matrix(X).astype(np.float64)
    return np.asarray(X, dtype=np.float64)


def _as_labels(y) -> np.ndarray:
    out = []
    for v in y:
        if isinstance(v, str):
            if v not in (OVERDOSE, NO_OVERDOSE):
                raise ValidationError(f"unknown label {v!r}")
            out.append(1.0 if v == OVERDOSE else 0.0)
        else:
            out.append(1.0 if v else 0.0)
    return np.asarray(out, dtype=np.float64)


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float | None:
    tp = float(np.sum((y_true > 0) & (y_pred > 0)))
    fp = float(np.sum((y_true <= 0) & (y_pred > 0)))
    fn = float(np.sum((y_true > 0) & (y_pred <= 0)))
    if tp == 0.0:
        return 0.0 if fn > 0 or fp > 0 else None
    return 2 * tp / (2 * tp + fp + fn)


def train_ensemble(
    kind,
    train_vectors,
    train_labels,
    grid: HyperGrid | None,
    valid_vectors,
    valid_labels,
    seed: int = 0,
    *,
    parallelism: int = 1,
    vocab_digest: str | None = None,
    use_numba: bool | None = None,
) -> TreeEnsembleModel:
    """Fit one model per grid point and keep the best by validation F1.

    Ties go to the earlier grid point. An undefined F1 (no positives at all)
    ranks below every defined value.
    """
    kind = EnsembleKind(kind)
    grid = grid or default_grid(kind)
    X, y = _as_matrix(train_vectors), _as_labels(train_labels)
    Xv, yv = _as_matrix(valid_vectors), _as_labels(valid_labels)
    if X.shape[0] != len(y) or Xv.shape[0] != len(yv):
        raise ValidationError("vectors and labels differ in length")
    if X.shape[1] != Xv.shape[1]:
        raise ValidationError(f"train has {X.shape[1]} features, valid has {Xv.shape[1]}")
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    fit = _fit_forest if kind is EnsembleKind.RANDOM_FOREST else _fit_boosting
    points = grid.points()

    def run(i):
        params = points[i]
        trees, base = fit(X, y, params, seed, use_numba)
        model = TreeEnsembleModel(kind, trees, params, X.shape[1], base, seed, i, None, vocab_digest)
        f1 = f1_score(yv, model.decision_scores(Xv, use_numba) >= THRESHOLD)
        model.validation_f1 = f1
        return model

    if parallelism > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            models = list(pool.map(run, range(len(points))))
    else:
        models = [run(i) for i in range(len(points))]
    best = models[0]
    for m in models[1:]:
        if (m.validation_f1 if m.validation_f1 is not None else -1.0) > (
            best.validation_f1 if best.validation_f1 is not None else -1.0
        ):
            best = m
    return best


def predict_ensemble(model: TreeEnsembleModel, vector, instance_id: str = "") -> Prediction:
    if isinstance(vector, FeatureVector):
        if vector.dimension != model.dimension:
            raise ValidationError(f"vector dimension {vector.dimension} != model dimension {model.dimension}")
        row = vector.dense(np.float64)[None, :]
    else:
        row = np.asarray(vector, dtype=np.float64).reshape(1, -1)
    score = float(model.decision_scores(row)[0])
    return Prediction(instance_id, OVERDOSE if score >= THRESHOLD else NO_OVERDOSE, score)


def predict_many(model: TreeEnsembleModel, instance_ids: Sequence[str], vectors) -> list[Prediction]:
    X = _as_matrix(vectors)
    scores = model.decision_scores(X)
    return [
        Prediction(i, OVERDOSE if s >= THRESHOLD else NO_OVERDOSE, float(s))
        for i, s in zip(instance_ids, scores)
    ]
