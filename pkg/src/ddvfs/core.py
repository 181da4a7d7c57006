"""Shared domain types, unit conventions and the RMSE metric.

Units are fixed across the package: frequency in MHz, power in W,
energy in W·s and time in s. Field names carry the unit suffix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

CATEGORICAL_LEVELS = ("none", "low", "mid", "high")


class InvalidArgument(ValueError):
    pass


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UniquenessError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ClockSet:
    """One (core, memory) application-clock pair.

    Ordering is by ``(mem_clock, sm_clock)``, the catalog order.
    """

    mem_clock: int
    sm_clock: int

    def __init__(self, sm_clock: int, mem_clock: int):
        object.__setattr__(self, "sm_clock", int(sm_clock))
        object.__setattr__(self, "mem_clock", int(mem_clock))
        if self.sm_clock <= 0 or self.mem_clock <= 0:
            raise InvalidArgument(f"clock frequencies must be positive: {self}")

    def __repr__(self) -> str:
        return f"ClockSet(sm_clock={self.sm_clock}, mem_clock={self.mem_clock})"

    def as_tuple(self) -> tuple[int, int]:
        return (self.sm_clock, self.mem_clock)


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    supported_clocks: tuple[ClockSet, ...]
    default_clock: ClockSet
    max_clock: ClockSet
    static_power_w: float

    def __post_init__(self):
        clocks = tuple(self.supported_clocks)
        object.__setattr__(self, "supported_clocks", clocks)
        if not clocks:
            raise InvalidArgument("device must support at least one clock")
        if len(set(clocks)) != len(clocks):
            raise InvalidArgument(f"duplicate clocks in device {self.name!r}")
        members = frozenset(clocks)
        object.__setattr__(self, "_members", members)
        if self.default_clock not in members:
            raise InvalidArgument(f"default clock {self.default_clock} not supported")
        if self.max_clock not in members:
            raise InvalidArgument(f"max clock {self.max_clock} not supported")
        top = max(clocks, key=lambda c: (c.sm_clock, c.mem_clock))
        if top != self.max_clock:
            raise InvalidArgument(f"max clock must be {top}, got {self.max_clock}")
        if not math.isfinite(self.static_power_w) or self.static_power_w < 0:
            raise InvalidArgument("static_power_w must be finite and nonnegative")

    def supports(self, clock: ClockSet) -> bool:
        return clock in self._members  # type: ignore[attr-defined]

    def require(self, clock: ClockSet) -> None:
        if not self.supports(clock):
            raise InvalidArgument(f"{clock} is not in the catalog of {self.name!r}")


def _is_utilisation_name(name: str) -> bool:
    return name == "sm" or name.endswith("_utilisation") or name.endswith("_efficiency")


@dataclass(frozen=True)
class FeatureVector:
    numeric: Mapping[str, float] = field(default_factory=dict)
    categorical: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        numeric = {str(k): float(v) for k, v in self.numeric.items()}
        categorical = {str(k): str(v) for k, v in self.categorical.items()}
        for name, value in numeric.items():
            if not math.isfinite(value):
                raise InvalidArgument(f"feature {name!r} is not finite: {value}")
            if _is_utilisation_name(name) and not 0.0 <= value <= 100.0:
                raise InvalidArgument(f"feature {name!r} outside [0, 100]: {value}")
        for name, level in categorical.items():
            if level not in CATEGORICAL_LEVELS:
                raise InvalidArgument(f"feature {name!r} has unknown level {level!r}")
        overlap = set(numeric) & set(categorical)
        if overlap:
            raise InvalidArgument(f"features both numeric and categorical: {sorted(overlap)}")
        object.__setattr__(self, "numeric", numeric)
        object.__setattr__(self, "categorical", categorical)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.numeric) + tuple(self.categorical)


@dataclass(frozen=True)
class ProfileRecord:
    app_id: str
    clock: ClockSet
    features: FeatureVector
    energy_ws: float
    time_s: float

    def __post_init__(self):
        if not (math.isfinite(self.energy_ws) and self.energy_ws >= 0):
            raise InvalidArgument(f"energy_ws must be finite and >= 0, got {self.energy_ws}")
        if not (math.isfinite(self.time_s) and self.time_s > 0):
            raise InvalidArgument(f"time_s must be finite and > 0, got {self.time_s}")
        for name, attr in (("sm_clock", "sm_clock"), ("mem_clock", "mem_clock")):
            if name in self.features.numeric and self.features.numeric[name] != getattr(self.clock, attr):
                raise InvalidArgument(f"feature {name} disagrees with record clock {self.clock}")

    @property
    def key(self) -> tuple[str, ClockSet]:
        return (self.app_id, self.clock)


class Dataset:
    """Profiling records over one device, with a frozen feature universe."""

    def __init__(self, records: Iterable[ProfileRecord], device: DeviceSpec):
        self.records: tuple[ProfileRecord, ...] = tuple(records)
        self.device = device
        seen = set()
        for i, rec in enumerate(self.records):
            if rec.key in seen:
                raise UniquenessError(f"duplicate record for app {rec.app_id!r} at {rec.clock} (index {i})")
            seen.add(rec.key)
            if not device.supports(rec.clock):
                raise InvalidArgument(f"record {i} clock {rec.clock} not in catalog of {device.name!r}")
        if self.records:
            first = self.records[0].features
            numeric, categorical = tuple(first.numeric), tuple(first.categorical)
            for i, rec in enumerate(self.records[1:], start=1):
                if (set(rec.features.numeric) != set(numeric)
                        or set(rec.features.categorical) != set(categorical)):
                    raise SchemaError(f"record {i} ({rec.app_id}) has a different feature set")
        else:
            numeric, categorical = (), ()
        self.numeric_names: tuple[str, ...] = numeric
        self.categorical_names: tuple[str, ...] = categorical

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.device == other.device and self.records == other.records

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.numeric_names + self.categorical_names

    def app_ids(self) -> list[str]:
        """Distinct app ids in first-appearance order."""
        return list(dict.fromkeys(r.app_id for r in self.records))

    def for_app(self, app_id: str) -> list[ProfileRecord]:
        return [r for r in self.records if r.app_id == app_id]

    def subset(self, records: Iterable[ProfileRecord]) -> "Dataset":
        return Dataset(records, self.device)

    def at_clock(self, app_id: str, clock: ClockSet) -> ProfileRecord | None:
        for r in self.records:
            if r.app_id == app_id and r.clock == clock:
                return r
        return None


@dataclass(frozen=True)
class Job:
    app_id: str
    arrival_s: float
    deadline_s: float
    default_profile: ProfileRecord

    def __post_init__(self):
        if not self.arrival_s >= 0:
            raise InvalidArgument(f"arrival_s must be >= 0, got {self.arrival_s}")
        if not self.deadline_s > 0:
            raise InvalidArgument(f"deadline_s must be > 0, got {self.deadline_s}")

    @property
    def absolute_deadline_s(self) -> float:
        return self.arrival_s + self.deadline_s


@dataclass(frozen=True)
class Workload:
    jobs: tuple[Job, ...]
    device: DeviceSpec

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(self.jobs))
        for job in self.jobs:
            if job.default_profile.clock != self.device.default_clock:
                raise InvalidArgument(
                    f"job {job.app_id!r} default profile is not at the device default clock")


def rmse(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """Root mean square error between observed and predicted values."""
    if len(observed) != len(predicted):
        raise InvalidArgument(f"length mismatch: {len(observed)} observed vs {len(predicted)} predicted")
    if len(observed) == 0:
        raise InvalidArgument("rmse of empty input")
    total = 0.0
    for y, y_hat in zip(observed, predicted):
        y, y_hat = float(y), float(y_hat)
        if not (math.isfinite(y) and math.isfinite(y_hat)):
            raise InvalidArgument("rmse inputs must be finite")
        total += (y - y_hat) ** 2
    return math.sqrt(total / len(observed))


def clock_catalog(device: DeviceSpec) -> list[ClockSet]:
    """Supported clocks in ascending (mem_clock, sm_clock) order."""
    return sorted(device.supported_clocks)


# Tesla P100 application clocks: one memory clock, 62 core clocks in [544, 1328].
P100_SM_CLOCKS = (
    544, 569, 582, 594, 607, 620, 632, 645, 658, 670, 683, 696, 708, 721, 734,
    746, 759, 772, 784, 797, 810, 822, 835, 847, 860, 873, 885, 898, 911, 923,
    936, 949, 961, 974, 987, 999, 1012, 1025, 1037, 1050, 1063, 1075, 1088,
    1101, 1113, 1126, 1139, 1151, 1164, 1177, 1189, 1202, 1215, 1227, 1240,
    1252, 1265, 1278, 1290, 1303, 1316, 1328,
)


def p100_like(static_power_w: float = 30.0) -> DeviceSpec:
    clocks = tuple(ClockSet(sm, 715) for sm in P100_SM_CLOCKS)
    return DeviceSpec(
        name="p100-like",
        supported_clocks=clocks,
        default_clock=ClockSet(1189, 715),
        max_clock=ClockSet(1328, 715),
        static_power_w=static_power_w,
    )


def gtx980_like(static_power_w: float = 20.0) -> DeviceSpec:
    """Four memory clocks, 87 core clocks in [135, 1428]; 267 pairs in total."""
    core = sorted({round(135 + i * (1428 - 135) / 86) for i in range(87)})
    clocks = []
    for mem in (3505, 3304, 810):
        clocks.extend(ClockSet(sm, mem) for sm in core)
    # the lowest memory clock only pairs with the bottom of the core range
    clocks.extend(ClockSet(sm, 324) for sm in core[:6])
    return DeviceSpec(
        name="gtx980-like",
        supported_clocks=tuple(clocks),
        default_clock=ClockSet(min(core, key=lambda f: abs(f - 1126)), 3505),
        max_clock=ClockSet(1428, 3505),
        static_power_w=static_power_w,
    )
