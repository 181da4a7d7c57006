"""Profiling CSV I/O, train/test splitting and categorical encoding.

CSV schema: a header row ``app_id,sm_clock,mem_clock,energy_ws,time_s``
followed by one column per feature. Reals are written with 9 significant
digits so that ``write_csv(parse_csv(f))`` reproduces ``f`` byte for byte.
Categorical columns hold the level names ``none``, ``low``, ``mid``, ``high``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .core import (
    CATEGORICAL_LEVELS,
    ClockSet,
    Dataset,
    DeviceSpec,
    FeatureVector,
    InvalidArgument,
    ParseError,
    ProfileRecord,
    SchemaError,
    UniquenessError,
)

MANDATORY_COLUMNS = ("app_id", "sm_clock", "mem_clock", "energy_ws", "time_s")
CLOCK_FEATURES = ("sm_clock", "mem_clock")
TARGETS = {"energy": "energy_ws", "time": "time_s"}


def format_real(value: float) -> str:
    return format(float(value), ".9g")


def _text_stream(source, mode: str):
    """Returns (text stream, cleanup callable)."""
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, mode, encoding="utf-8", newline="")
        return fh, fh.close
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), lambda: None
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        return wrapper, lambda: (wrapper.flush(), wrapper.detach())
    return source, lambda: None


def parse_csv(source: str | os.PathLike | bytes | IO, device: DeviceSpec) -> Dataset:
    """Read a profiling CSV into a Dataset, keeping file order."""
    fh, cleanup = _text_stream(source, "r")
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: header row missing") from None
        for column in MANDATORY_COLUMNS:
            if column not in header:
                raise SchemaError(f"missing mandatory column {column!r}")
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names in header")
        index = {name: i for i, name in enumerate(header)}
        feature_columns = [h for h in header if h not in MANDATORY_COLUMNS]
        categorical: set[str] | None = None
        records = []
        seen: set[tuple[str, ClockSet]] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", line_no)
            if categorical is None:
                categorical = {f for f in feature_columns if row[index[f]] in CATEGORICAL_LEVELS}
            try:
                clock = ClockSet(int(row[index["sm_clock"]]), int(row[index["mem_clock"]]))
            except ValueError as exc:
                raise ParseError(f"bad clock value: {exc}", line_no) from None
            energy = _real(row[index["energy_ws"]], "energy_ws", line_no)
            time_s = _real(row[index["time_s"]], "time_s", line_no)
            numeric = {"sm_clock": float(clock.sm_clock), "mem_clock": float(clock.mem_clock)}
            levels = {}
            for name in feature_columns:
                cell = row[index[name]]
                if cell == "":
                    raise ParseError(f"missing value for feature {name!r}", line_no)
                if name in categorical:
                    if cell not in CATEGORICAL_LEVELS:
                        raise ParseError(f"feature {name!r}: {cell!r} is not a categorical level", line_no)
                    levels[name] = cell
                else:
                    numeric[name] = _real(cell, name, line_no)
            app_id = row[index["app_id"]]
            key = (app_id, clock)
            if key in seen:
                raise UniquenessError(f"line {line_no}: duplicate record for app {app_id!r} at {clock}")
            seen.add(key)
            if not device.supports(clock):
                raise ParseError(f"{clock} is not supported by device {device.name!r}", line_no)
            try:
                record = ProfileRecord(app_id, clock, FeatureVector(numeric, levels), energy, time_s)
            except InvalidArgument as exc:
                raise ParseError(str(exc), line_no) from None
            records.append(record)
    finally:
        cleanup()
    return Dataset(records, device)


def _real(cell: str, name: str, line_no: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{name}: {cell!r} is not a number", line_no) from None
    if not math.isfinite(value):
        raise ParseError(f"{name}: non-finite value {cell!r}", line_no)
    return value


def write_csv(dataset: Dataset, dest: str | os.PathLike | IO) -> None:
    numeric = [n for n in dataset.numeric_names if n not in CLOCK_FEATURES]
    categorical = list(dataset.categorical_names)
    fh, cleanup = _text_stream(dest, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(MANDATORY_COLUMNS) + numeric + categorical)
        for r in dataset.records:
            writer.writerow(
                [r.app_id, r.clock.sm_clock, r.clock.mem_clock,
                 format_real(r.energy_ws), format_real(r.time_s)]
                + [format_real(r.features.numeric[n]) for n in numeric]
                + [r.features.categorical[n] for n in categorical]
            )
    finally:
        cleanup()


def to_csv_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_csv(dataset, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "fraction"
    test_fraction: float | None = 0.3
    held_out_app: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode == "fraction":
            if self.held_out_app is not None:
                raise InvalidArgument("held_out_app is only valid in leave_one_app_out mode")
            if self.test_fraction is None or not 0 < self.test_fraction < 1:
                raise InvalidArgument("test_fraction must lie in (0, 1)")
        elif self.mode == "leave_one_app_out":
            if self.held_out_app is None:
                raise InvalidArgument("leave_one_app_out needs held_out_app")
            object.__setattr__(self, "test_fraction", None)
        else:
            raise InvalidArgument(f"unknown split mode {self.mode!r}")

    @classmethod
    def fraction(cls, test_fraction: float = 0.3, seed: int = 0) -> "SplitSpec":
        return cls("fraction", test_fraction, None, seed)

    @classmethod
    def leave_one_app_out(cls, app_id: str, seed: int = 0) -> "SplitSpec":
        return cls("leave_one_app_out", None, app_id, seed)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition into (train, test); both keep the dataset's record order."""
    n = len(dataset)
    if n == 0:
        raise InvalidArgument("cannot split an empty dataset")
    if spec.mode == "leave_one_app_out":
        if spec.held_out_app not in set(dataset.app_ids()):
            raise InvalidArgument(f"unknown app {spec.held_out_app!r}")
        test = [r for r in dataset.records if r.app_id == spec.held_out_app]
        train = [r for r in dataset.records if r.app_id != spec.held_out_app]
        return dataset.subset(train), dataset.subset(test)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(math.floor(n * (1.0 - spec.test_fraction) + 0.5))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (dataset.subset(dataset.records[i] for i in train_idx),
            dataset.subset(dataset.records[i] for i in test_idx))


# ---------------------------------------------------------------------------
# Ordered target statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodingMeta:
    """Everything needed to re-encode new rows identically.

    ``stats[feature][level] = (target_sum, count)`` over the full training set.
    """

    target: str
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    prior_weight: float
    prior: float
    seed: int
    stats: dict[str, dict[str, tuple[float, int]]] = field(default_factory=dict)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.numeric + self.categorical

    def level_value(self, feature: str, level: str) -> tuple[float, bool]:
        """Encoded value for a level, and whether it was unseen in training."""
        hit = self.stats[feature].get(level)
        if hit is None:
            return self.prior, True
        total, count = hit
        return (total + self.prior_weight * self.prior) / (count + self.prior_weight), False

    def transform(self, features: Sequence[FeatureVector]) -> tuple[np.ndarray, list[tuple[int, str]]]:
        """Encode with full-training statistics; returns (values, unseen cells)."""
        values = np.empty((len(features), len(self.columns)))
        unseen = []
        for i, fv in enumerate(features):
            for j, name in enumerate(self.numeric):
                values[i, j] = fv.numeric[name]
            for j, name in enumerate(self.categorical, start=len(self.numeric)):
                values[i, j], missing = self.level_value(name, fv.categorical[name])
                if missing:
                    unseen.append((i, name))
        return values, unseen

    def to_dict(self) -> dict:
        return {
            "format": "ddvfs-encoding",
            "version": 1,
            "target": self.target,
            "numeric": list(self.numeric),
            "categorical": list(self.categorical),
            "prior_weight": self.prior_weight,
            "prior": self.prior,
            "seed": self.seed,
            "stats": {f: {lvl: [s, c] for lvl, (s, c) in sorted(levels.items())}
                      for f, levels in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncodingMeta":
        if data.get("format") != "ddvfs-encoding" or data.get("version") != 1:
            raise SchemaError("not a version-1 encoding sidecar")
        return cls(
            target=data["target"],
            numeric=tuple(data["numeric"]),
            categorical=tuple(data["categorical"]),
            prior_weight=float(data["prior_weight"]),
            prior=float(data["prior"]),
            seed=int(data["seed"]),
            stats={f: {lvl: (float(s), int(c)) for lvl, (s, c) in levels.items()}
                   for f, levels in data["stats"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EncodingMeta":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class EncodedMatrix:
    records: tuple[ProfileRecord, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    target: np.ndarray
    target_name: str
    meta: EncodingMeta
    unseen: tuple[tuple[int, str], ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def select(self, columns: Iterable[str]) -> "EncodedMatrix":
        """Column subset, kept in this matrix's column order."""
        wanted = set(columns)
        unknown = wanted - set(self.columns)
        if unknown:
            raise InvalidArgument(f"unknown columns: {sorted(unknown)}")
        idx = [j for j, c in enumerate(self.columns) if c in wanted]
        return EncodedMatrix(self.records, tuple(self.columns[j] for j in idx),
                             self.values[:, idx], self.target, self.target_name, self.meta, self.unseen)

    def drop(self, column: str) -> "EncodedMatrix":
        return self.select(c for c in self.columns if c != column)

    def with_values(self, values: np.ndarray) -> "EncodedMatrix":
        return EncodedMatrix(self.records, self.columns, np.asarray(values, dtype=float),
                             self.target, self.target_name, self.meta, self.unseen)


def target_values(records: Sequence[ProfileRecord], target: str) -> np.ndarray:
    try:
        attr = TARGETS[target]
    except KeyError:
        raise InvalidArgument(f"target must be one of {sorted(TARGETS)}, got {target!r}") from None
    return np.array([getattr(r, attr) for r in records], dtype=float)


def encode(train: Dataset, apply_to: Dataset, target: str, prior_weight: float = 1.0,
           seed: int = 0, prior: float | None = None) -> tuple[EncodedMatrix, EncodedMatrix]:
    """Ordered target-statistics encoding of categorical features.

    Training rows are visited in one seeded permutation; each categorical
    cell encodes as ``(sum of earlier same-level targets + w * prior) /
    (earlier same-level count + w)``. ``prior`` defaults to the training
    target mean. ``apply_to`` rows use the full training statistics.
    """
    if prior_weight <= 0:
        raise InvalidArgument("prior_weight must be positive")
    if len(train) == 0:
        raise InvalidArgument("cannot encode against an empty training set")
    if len(apply_to) and (set(train.numeric_names) != set(apply_to.numeric_names)
                          or set(train.categorical_names) != set(apply_to.categorical_names)):
        raise SchemaError("feature universes of train and apply_to differ")
    y = target_values(train.records, target)
    prior_value = float(y.mean()) if prior is None else float(prior)
    numeric = tuple(train.numeric_names)
    categorical = tuple(train.categorical_names)
    n, p = len(train), len(numeric) + len(categorical)

    values = np.empty((n, p))
    for i, rec in enumerate(train.records):
        for j, name in enumerate(numeric):
            values[i, j] = rec.features.numeric[name]

    order = np.random.default_rng(seed).permutation(n)
    stats: dict[str, dict[str, tuple[float, int]]] = {}
    for j, name in enumerate(categorical, start=len(numeric)):
        running: dict[str, list] = {}
        for i in order:
            level = train.records[i].features.categorical[name]
            total, count = running.setdefault(level, [0.0, 0])
            values[i, j] = (total + prior_weight * prior_value) / (count + prior_weight)
            running[level][0] += y[i]
            running[level][1] += 1
        stats[name] = {lvl: (float(s), int(c)) for lvl, (s, c) in running.items()}

    meta = EncodingMeta(target, numeric, categorical, float(prior_weight), prior_value, seed, stats)
    train_matrix = EncodedMatrix(train.records, meta.columns, values, y, target, meta)
    applied, unseen = meta.transform([r.features for r in apply_to.records])
    applied = applied.reshape(len(apply_to), p)
    apply_matrix = EncodedMatrix(apply_to.records, meta.columns, applied,
                                 target_values(apply_to.records, target), target, meta, tuple(unseen))
    return train_matrix, apply_matrix
