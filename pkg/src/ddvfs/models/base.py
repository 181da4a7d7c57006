from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import FeatureVector, InvalidArgument, SchemaError
from ..ingest import EncodedMatrix, EncodingMeta

MODEL_FORMAT = "ddvfs-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class GBTConfig:
    iterations: int = 1200
    depth: int = 4
    learning_rate: float = 0.1
    l2_leaf_reg: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")
        if self.depth < 1:
            raise InvalidArgument("depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise InvalidArgument("learning_rate must lie in (0, 1]")
        if self.l2_leaf_reg < 0:
            raise InvalidArgument("l2_leaf_reg must be >= 0")


@dataclass(frozen=True)
class Tree:
    """Binary regression tree stored as preorder node arrays.

    Leaves have ``feature == -1``. Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)

    def to_nodes(self) -> list[list]:
        return [[int(f), float(t), float(v)]
                for f, t, v in zip(self.feature, self.threshold, self.value)]

    @classmethod
    def from_nodes(cls, nodes: Sequence[Sequence]) -> "Tree":
        n = len(nodes)
        feature = np.array([int(x[0]) for x in nodes], dtype=np.int64)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)

        def walk(i: int) -> int:
            # returns the index one past the subtree rooted at i
            if feature[i] < 0:
                return i + 1
            left[i] = i + 1
            right[i] = walk(i + 1)
            return walk(right[i])

        if n and walk(0) != n:
            raise SchemaError("malformed preorder tree")
        return cls(feature,
                   np.array([float(x[1]) for x in nodes]),
                   np.array([float(x[2]) for x in nodes]),
                   left, right)


@dataclass(frozen=True)
class FittedModel:
    kind: str
    target: str
    columns: tuple[str, ...]
    intercept: float
    coef: np.ndarray | None = None
    trees: tuple[Tree, ...] = ()
    learning_rate: float = 1.0
    config: GBTConfig | None = None
    encoding: EncodingMeta | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "target": self.target,
            "columns": list(self.columns),
            "intercept": float(self.intercept),
            "info": self.info,
        }
        if self.kind in ("ols", "lasso"):
            out["coefficients"] = {c: float(b) for c, b in zip(self.columns, self.coef)}
        else:
            out["learning_rate"] = self.learning_rate
            out["config"] = vars(self.config) if self.config else None
            out["trees"] = [t.to_nodes() for t in self.trees]
        if self.encoding is not None:
            out["encoding"] = self.encoding.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
            raise SchemaError("not a version-1 model file")
        columns = tuple(data["columns"])
        encoding = EncodingMeta.from_dict(data["encoding"]) if data.get("encoding") else None
        common = dict(kind=data["kind"], target=data["target"], columns=columns,
                      intercept=float(data["intercept"]), encoding=encoding, info=data.get("info", {}))
        if data["kind"] in ("ols", "lasso"):
            coefs = data["coefficients"]
            return cls(coef=np.array([float(coefs[c]) for c in columns]), **common)
        config = GBTConfig(**data["config"]) if data.get("config") else None
        trees = tuple(Tree.from_nodes(nodes) for nodes in data["trees"])
        return cls(trees=trees, learning_rate=float(data["learning_rate"]), config=config, **common)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FittedModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _tree_outputs(trees: Sequence[Tree], X: np.ndarray) -> np.ndarray:
    """Leaf value of every tree for every row, shape (n_rows, n_trees)."""
    n = X.shape[0]
    if not trees:
        return np.zeros((n, 0))
    width = max(len(t) for t in trees)
    T = len(trees)
    feature = np.full((T, width), -1, dtype=np.int64)
    threshold = np.zeros((T, width))
    value = np.zeros((T, width))
    left = np.zeros((T, width), dtype=np.int64)
    right = np.zeros((T, width), dtype=np.int64)
    for i, t in enumerate(trees):
        m = len(t)
        feature[i, :m], threshold[i, :m], value[i, :m] = t.feature, t.threshold, t.value
        left[i, :m], right[i, :m] = t.left, t.right
    tree_ids = np.arange(T)[None, :]
    node = np.zeros((n, T), dtype=np.int64)
    rows = np.arange(n)[:, None]
    while True:
        feat = feature[tree_ids, node]
        internal = feat >= 0
        if not internal.any():
            break
        x = X[rows, np.where(internal, feat, 0)]
        go_left = x <= threshold[tree_ids, node]
        nxt = np.where(go_left, left[tree_ids, node], right[tree_ids, node])
        node = np.where(internal, nxt, node)
    return value[tree_ids, node]


def raw_predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if model.kind in ("ols", "lasso"):
        return model.intercept + X @ model.coef
    outputs = _tree_outputs(model.trees, X)
    return model.intercept + model.learning_rate * outputs.sum(axis=1)


def _finish(model: FittedModel, y_hat: np.ndarray) -> np.ndarray:
    if model.target == "energy":
        y_hat = np.maximum(y_hat, 0.0)
    return y_hat


def predict(model: FittedModel, rows: EncodedMatrix) -> np.ndarray:
    """One prediction per row; energy predictions are clamped at zero."""
    if tuple(rows.columns) != tuple(model.columns):
        for i, (got, want) in enumerate(zip(rows.columns, model.columns)):
            if got != want:
                raise InvalidArgument(f"column {i} is {got!r}, model expects {want!r}")
        raise InvalidArgument(
            f"column count {len(rows.columns)} differs from model's {len(model.columns)}")
    return _finish(model, raw_predict(model, rows.values))


def predict_features(model: FittedModel, features: Sequence[FeatureVector]) -> np.ndarray:
    """Encode raw feature vectors with the model's own encoding, then predict."""
    if model.encoding is None:
        raise InvalidArgument("model carries no encoding metadata")
    X, _ = model.encoding.transform(features)
    if model.encoding.columns != model.columns:
        idx = [model.encoding.columns.index(c) for c in model.columns]
        X = X[:, idx]
    return _finish(model, raw_predict(model, X))
