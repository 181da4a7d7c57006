"""K-means over default-clock profiles and correlated-application lookup.

An application profiled only at the default clock is placed in the nearest
cluster; its stand-in is the cluster-mate whose default-clock execution time
is closest. That stand-in's per-clock records then feed the predictors.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .core import Dataset, FeatureVector, InvalidArgument, ProfileRecord
from .ingest import _text_stream, format_real

MAX_LLOYD_ITERATIONS = 300
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class KMeansModel:
    """Fitted clustering.

    ``centroids`` are in input units over ``columns``; distances are taken
    after z-scoring with ``mean``/``std`` (identity when not normalizing).
    Columns without variance are listed in ``dropped`` and ignored.
    """

    k: int
    columns: tuple[str, ...]
    centroids: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    labels: np.ndarray
    wsse: float
    trace: tuple[float, ...]
    dropped: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.centroids.shape[0] != self.k:
            raise InvalidArgument("centroid count must equal k")
        if not np.all(np.isfinite(self.centroids)):
            raise InvalidArgument("centroids must be finite")

    def _scaled(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def assign(self, X: np.ndarray) -> np.ndarray:
        """Nearest-centroid label for each row of ``X`` (columns as in ``columns``)."""
        d2 = _sq_dists(self._scaled(np.atleast_2d(X)), self._scaled(self.centroids))
        return np.argmin(d2, axis=1)

    def vector(self, features: FeatureVector) -> np.ndarray:
        try:
            return np.array([features.numeric[c] for c in self.columns], dtype=float)
        except KeyError as exc:
            raise InvalidArgument(f"feature {exc.args[0]!r} missing from query") from None

    def to_dict(self) -> dict:
        return {
            "format": "ddvfs-kmeans",
            "version": 1,
            "k": self.k,
            "columns": list(self.columns),
            "centroids": self.centroids.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "labels": self.labels.tolist(),
            "wsse": self.wsse,
            "trace": list(self.trace),
            "dropped": list(self.dropped),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KMeansModel":
        if data.get("format") != "ddvfs-kmeans" or data.get("version") != 1:
            raise InvalidArgument("not a version-1 k-means file")
        return cls(int(data["k"]), tuple(data["columns"]), np.array(data["centroids"], dtype=float),
                   np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float),
                   np.array(data["labels"], dtype=np.int64), float(data["wsse"]),
                   tuple(data["trace"]), tuple(data["dropped"]), tuple(data["warnings"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KMeansModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class CorrelationResult:
    query_app: str
    cluster_label: int
    matched_app: str
    time_delta_s: float
    singleton: bool = False


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _as_matrix(points, columns):
    if isinstance(points, np.ndarray) or (len(points) and not isinstance(points[0], FeatureVector)):
        X = np.asarray(points, dtype=float)
        if X.ndim != 2:
            raise InvalidArgument("points must form a 2-D array")
        names = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InvalidArgument("column names do not match point width")
        return X, names
    if not points:
        raise InvalidArgument("no points to cluster")
    names = tuple(columns) if columns is not None else tuple(points[0].numeric)
    for i, fv in enumerate(points):
        if set(fv.numeric) != set(points[0].numeric):
            raise InvalidArgument(f"point {i} has a different feature set")
    return np.array([[fv.numeric[c] for c in names] for fv in points], dtype=float), names


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int):
    """Returns (centroids, labels, wsse trace). One trace entry per assignment step."""
    k = centroids.shape[0]
    labels = None
    trace = []
    for _ in range(max_iter):
        d2 = _sq_dists(X, centroids)
        new = np.argmin(d2, axis=1)
        # an empty cluster takes the point farthest from its own centroid
        for j in range(k):
            if not np.any(new == j):
                cost = d2[np.arange(len(X)), new]
                donors = np.bincount(new, minlength=k)[new] > 1
                cost = np.where(donors, cost, -1.0)
                far = int(np.argmax(cost))
                new[far] = j
                d2[far, j] = 0.0
                centroids[j] = X[far]
        trace.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centroids[j] = X[labels == j].mean(axis=0)
    final = float(_sq_dists(X, centroids)[np.arange(len(X)), labels].sum())
    return centroids, labels, trace, final


def fit_kmeans(points, k: int, seed: int = 0, normalize: bool = True,
               columns: Sequence[str] | None = None, init: np.ndarray | None = None) -> KMeansModel:
    """Lloyd's algorithm from a seeded k-means++ start.

    ``points`` is either a list of FeatureVectors (numeric features are used)
    or an (n, p) array. Columns are z-scored when ``normalize`` is set.
    ``init`` overrides the seeding with explicit starting centroids (input units).
    """
    X, names = _as_matrix(points, columns)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgument(f"k must lie in [1, {n}], got {k}")
    std = X.std(axis=0)
    live = std > 0
    dropped = tuple(c for c, ok in zip(names, live) if not ok)
    warnings = (f"zero-variance columns dropped from distance: {', '.join(dropped)}",) if dropped else ()
    if not live.any():
        live = np.ones(X.shape[1], dtype=bool)
    X, names, std = X[:, live], tuple(c for c, ok in zip(names, live) if ok), std[live]
    mean = X.mean(axis=0) if normalize else np.zeros(X.shape[1])
    scale = np.where(std > 0, std, 1.0) if normalize else np.ones(X.shape[1])
    Z = (X - mean) / scale
    if init is not None:
        start = (np.asarray(init, dtype=float)[:, live] - mean) / scale
    else:
        start = _kmeanspp(Z, k, np.random.default_rng(seed))
    centroids, labels, trace, wsse = _lloyd(Z, start, MAX_LLOYD_ITERATIONS)
    return KMeansModel(k, names, centroids * scale + mean, mean, scale, labels, wsse,
                       tuple(trace), dropped, warnings)


def elbow(ks: Sequence[int], wsse: Sequence[float]) -> int:
    """k whose (k, WSSE) point lies farthest from the chord joining the curve ends.

    Both axes are rescaled to [0, 1] first. Ties go to the smaller k.
    """
    ks = list(ks)
    if len(ks) < 3:
        return ks[0]
    x = np.asarray(ks, dtype=float)
    y = np.asarray(wsse, dtype=float)
    x = (x - x[0]) / (x[-1] - x[0])
    span = y.max() - y.min()
    if span <= 0:
        return ks[0]
    y = (y - y.min()) / span
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    dist = np.abs(dy * (x - x[0]) - dx * (y - y[0])) / np.hypot(dx, dy)
    return ks[int(np.argmax(dist))]


def select_k(points, k_range: Sequence[int], seed: int = 0, restarts: int = DEFAULT_RESTARTS,
             normalize: bool = True) -> tuple[int, list[tuple[int, float]], dict[int, KMeansModel]]:
    """Elbow choice of k; returns (k, [(k, best WSSE)], best model per k).

    Every k runs the same ``restarts`` seeds. From the second k on, one extra
    run starts from the previous k's best centroids plus the point farthest
    from them, so the best WSSE never rises with k.
    """
    X, names = _as_matrix(points, None)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > X.shape[0]:
        raise InvalidArgument(f"k_range must lie within [1, {X.shape[0]}]")
    best: dict[int, KMeansModel] = {}
    prev = None
    for k in ks:
        runs = [fit_kmeans(X, k, seed=int(s), normalize=normalize, columns=names)
                for s in np.random.SeedSequence(seed).generate_state(restarts)]
        if prev is not None and prev.k < k:
            runs.append(fit_kmeans(X, k, normalize=normalize, columns=names,
                                   init=_grow_init(X, names, prev, k)))
        prev = min(runs, key=lambda m: m.wsse)
        best[k] = prev
    curve = [(k, best[k].wsse) for k in ks]
    return elbow(ks, [w for _, w in curve]), curve, best


def _grow_init(X: np.ndarray, names, model: KMeansModel, k: int) -> np.ndarray:
    full = np.zeros((k, X.shape[1]))
    live = [names.index(c) for c in model.columns]
    cents = np.zeros((model.k, X.shape[1]))
    cents[:, live] = model.centroids
    # dropped columns are constant, so any row supplies their value
    dead = [j for j in range(X.shape[1]) if j not in live]
    cents[:, dead] = X[0, dead]
    full[:model.k] = cents
    for j in range(model.k, k):
        d2 = _sq_dists(model._scaled(X[:, live]), model._scaled(full[:j, live])).min(axis=1)
        full[j] = X[int(np.argmax(d2))]
    return full


def default_records(catalog: Dataset) -> list[ProfileRecord]:
    """Each app's record at the device default clock, in first-appearance order."""
    out = []
    for app in catalog.app_ids():
        rec = catalog.at_clock(app, catalog.device.default_clock)
        if rec is not None:
            out.append(rec)
    return out


def correlate(model: KMeansModel, catalog: Dataset, query: ProfileRecord) -> CorrelationResult:
    """Pick the catalog app standing in for ``query``.

    The query joins its nearest cluster; the match is the cluster-mate with
    the smallest default-clock time difference (ties by app_id). When the
    cluster holds no other app, the globally closest app by time is used and
    ``singleton`` is set.
    """
    if query.clock != catalog.device.default_clock:
        raise InvalidArgument("query must be profiled at the device default clock")
    candidates = [r for r in default_records(catalog) if r.app_id != query.app_id]
    if not candidates:
        raise InvalidArgument("catalog has no other application at the default clock")
    label = int(model.assign(model.vector(query.features))[0])
    cand_labels = model.assign(np.array([model.vector(r.features) for r in candidates]))
    mates = [r for r, lab in zip(candidates, cand_labels) if lab == label]
    pool = mates or candidates
    best = min(pool, key=lambda r: (abs(query.time_s - r.time_s), r.app_id))
    return CorrelationResult(query.app_id, label, best.app_id, abs(query.time_s - best.time_s),
                             singleton=not mates)


def correlate_all(model: KMeansModel, catalog: Dataset) -> list[CorrelationResult]:
    return [correlate(model, catalog, rec) for rec in default_records(catalog)]


def write_correlations_csv(results: Sequence[CorrelationResult], dest: str | os.PathLike | IO) -> None:
    fh, cleanup = _text_stream(dest, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["app_id", "cluster_label", "matched_app", "time_delta_s", "singleton"])
        for r in results:
            writer.writerow([r.query_app, r.cluster_label, r.matched_app, format_real(r.time_delta_s),
                             int(r.singleton)])
    finally:
        cleanup()
