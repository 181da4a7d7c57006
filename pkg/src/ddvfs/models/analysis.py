from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..core import InvalidArgument, rmse
from ..ingest import EncodedMatrix
from .base import GBTConfig, predict
from .gbt import fit_gbt, staged_predict

DEFAULT_GRID = {
    "depth": [2, 4, 6],
    "l2_leaf_reg": [1.0, 3.0, 5.0],
    "iterations": [400, 800, 1200],
    "learning_rate": [0.03, 0.1],
}


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple[tuple[str, float], ...]
    full_rmse: float

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise InvalidArgument("importance entries must be sorted descending")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def score(self, name: str) -> float:
        return dict(self.entries)[name]

    def rank(self, name: str) -> int:
        """1-based position in the ranking."""
        return self.names.index(name) + 1


def _rmse(y, y_hat) -> float:
    return rmse(list(map(float, y)), list(map(float, y_hat)))


def grid_search(train: EncodedMatrix, validation: EncodedMatrix,
                grid: Mapping[str, Sequence] | None = None,
                seed: int = 0) -> tuple[GBTConfig, float, list[tuple[GBTConfig, float]]]:
    """Exhaustive search; returns (best config, its validation RMSE, all results).

    Ties go to fewer iterations, then smaller depth, larger l2_leaf_reg,
    smaller learning_rate. Iteration counts that share the other settings
    are scored from one fit using staged predictions, which equals fitting
    each count separately.
    """
    grid = dict(DEFAULT_GRID if grid is None else grid)
    for key in ("depth", "l2_leaf_reg", "iterations", "learning_rate"):
        if not grid.get(key):
            raise InvalidArgument(f"grid needs at least one value for {key!r}")
    results = []
    iterations = sorted({int(i) for i in grid["iterations"]})
    for depth, l2, lr in itertools.product(grid["depth"], grid["l2_leaf_reg"], grid["learning_rate"]):
        top = GBTConfig(iterations=iterations[-1], depth=int(depth), learning_rate=float(lr),
                        l2_leaf_reg=float(l2), seed=seed)
        model = fit_gbt(train, top)
        staged = staged_predict(model, validation.values, iterations)
        for it in iterations:
            cfg = GBTConfig(iterations=it, depth=int(depth), learning_rate=float(lr),
                            l2_leaf_reg=float(l2), seed=seed)
            results.append((cfg, _rmse(validation.target, staged[it])))
    best_cfg, best_rmse = min(
        results, key=lambda r: (r[1], r[0].iterations, r[0].depth, -r[0].l2_leaf_reg, r[0].learning_rate))
    return best_cfg, best_rmse, results


def _test_rmse(train: EncodedMatrix, test: EncodedMatrix, config: GBTConfig) -> float:
    model = fit_gbt(train, config)
    return _rmse(test.target, predict(model, test))


def feature_importance(train: EncodedMatrix, test: EncodedMatrix,
                       base_config: GBTConfig) -> ImportanceReport:
    """Drop-column importance: test RMSE without a feature minus full-model test RMSE."""
    if len(train.columns) < 2:
        raise InvalidArgument("feature importance needs at least two features")
    full = _test_rmse(train, test, base_config)
    scores = []
    for name in train.columns:
        without = _test_rmse(train.drop(name), test.drop(name), base_config)
        scores.append((name, without - full))
    scores.sort(key=lambda e: (-e[1], e[0]))
    return ImportanceReport(tuple(scores), full)


def threshold_analysis(train: EncodedMatrix, test: EncodedMatrix, importance: ImportanceReport,
                       base_config: GBTConfig, ks: Sequence[int] | None = None) -> list[tuple[int, float]]:
    """Test RMSE when training on the top-k features by importance, for each k."""
    ranked = importance.names
    if set(ranked) != set(train.columns):
        raise InvalidArgument("importance report covers a different feature universe")
    ks = range(1, len(ranked) + 1) if ks is None else ks
    curve = []
    for k in ks:
        keep = ranked[:k]
        curve.append((k, _test_rmse(train.select(keep), test.select(keep), base_config)))
    return curve
