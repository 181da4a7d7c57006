"""Workload generation, deadline-aware clock selection and baseline policies.

The data-driven policy walks jobs in earliest-deadline-first order. For each
job it predicts energy and time at every supported clock and picks the
cheapest clock whose predicted time fits the remaining deadline budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .clustering import KMeansModel, correlate
from .core import (
    ClockSet,
    Dataset,
    DeviceSpec,
    FeatureVector,
    InvalidArgument,
    Job,
    ProfileRecord,
    Workload,
    clock_catalog,
)
from .models import FittedModel, predict_features
from .synthdata import SyntheticGPU

TEXT_SEMANTICS = "text_semantics"
LITERAL_PSEUDOCODE = "literal_pseudocode"
MODES = (TEXT_SEMANTICS, LITERAL_PSEUDOCODE)
OBJECTIVES = ("energy", "power")

SCHEDULED = "scheduled"
REJECTED = "rejected_infeasible"
ERROR = "error"


class PolicyKind(str, enum.Enum):
    D_DVFS = "d_dvfs"
    DEFAULT_CLOCK = "default_clock"
    MAX_CLOCK = "max_clock"
    ORACLE = "oracle"


class MissingData(Exception):
    """Raised by a predictor that has no data to predict a job from."""


@dataclass(frozen=True)
class ScheduleDecision:
    job: Job
    job_index: int
    chosen_clock: ClockSet | None
    predicted_energy_ws: float | None
    predicted_time_s: float | None
    status: str
    budget_s: float | None = None
    fallback: bool = False
    matched_app: str | None = None
    message: str = ""

    def __post_init__(self):
        if (self.status == SCHEDULED) != (self.chosen_clock is not None):
            raise InvalidArgument("a decision is scheduled exactly when it carries a clock")


@dataclass(frozen=True)
class WorkloadGenConfig:
    arrival_range: tuple[float, float] = (1.0, 50.0)
    deadline_factor_range: tuple[float, float] = (1.0, 2.0)
    distribution: str = "truncated_normal"
    seed: int = 0
    jobs_per_app: int = 1

    def __post_init__(self):
        for name in ("arrival_range", "deadline_factor_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi and math.isfinite(hi)):
                raise InvalidArgument(f"{name} must satisfy 0 < low <= high")
        if self.distribution not in ("truncated_normal", "uniform"):
            raise InvalidArgument(f"unknown distribution {self.distribution!r}")
        if self.jobs_per_app < 1:
            raise InvalidArgument("jobs_per_app must be >= 1")


def _sample(rng: np.random.Generator, lo: float, hi: float, distribution: str) -> float:
    if lo == hi:
        return float(lo)
    if distribution == "uniform":
        return float(rng.uniform(lo, hi))
    mid, sd = 0.5 * (lo + hi), (hi - lo) / 4.0
    while True:
        x = float(rng.normal(mid, sd))
        if lo <= x <= hi:
            return x


def generate_workload(profiles: Sequence[ProfileRecord], device: DeviceSpec,
                      config: WorkloadGenConfig) -> Workload:
    """One job per default-clock profile (times ``jobs_per_app``).

    Arrival is drawn from ``arrival_range``; the relative deadline is the
    default-clock time scaled by a factor from ``deadline_factor_range``.
    """
    rng = np.random.default_rng(config.seed)
    jobs = []
    for _ in range(config.jobs_per_app):
        for prof in profiles:
            if prof.clock != device.default_clock:
                raise InvalidArgument(f"profile for {prof.app_id!r} is not at the default clock")
            arrival = _sample(rng, *config.arrival_range, config.distribution)
            factor = _sample(rng, *config.deadline_factor_range, config.distribution)
            jobs.append(Job(prof.app_id, arrival, factor * prof.time_s, prof))
    return Workload(tuple(jobs), device)


class Predictor(Protocol):
    def predict(self, job: Job, clocks: Sequence[ClockSet]) -> tuple[np.ndarray, np.ndarray, str | None]:
        """(energy per clock, time per clock, app whose data was used)."""


class TruthPredictor:
    """Exact predictions straight from the synthetic ground truth."""

    def __init__(self, gpu: SyntheticGPU):
        self.gpu = gpu

    def predict(self, job, clocks):
        if job.app_id not in self.gpu.archetypes:
            raise MissingData(f"no ground truth for {job.app_id!r}")
        pairs = [self.gpu.measure(job.app_id, c) for c in clocks]
        return np.array([e for e, _ in pairs]), np.array([t for _, t in pairs]), job.app_id


def nearest_record(records: Sequence[ProfileRecord], clock: ClockSet) -> ProfileRecord:
    """Record closest to ``clock``: memory clock first, then core clock, then lower core clock."""
    return min(records, key=lambda r: (abs(r.clock.mem_clock - clock.mem_clock),
                                       abs(r.clock.sm_clock - clock.sm_clock), r.clock.sm_clock))


def features_at(record: ProfileRecord, clock: ClockSet) -> FeatureVector:
    numeric = dict(record.features.numeric)
    if "sm_clock" in numeric:
        numeric["sm_clock"] = float(clock.sm_clock)
    if "mem_clock" in numeric:
        numeric["mem_clock"] = float(clock.mem_clock)
    return FeatureVector(numeric, dict(record.features.categorical))


class ModelPredictor:
    """Learned predictions from the correlated application's profile.

    The job's default-clock profile is matched to a catalog app by
    clustering; that app's record nearest each target clock, with its clock
    features set to the target clock, is fed to the energy and time models.
    """

    def __init__(self, energy_model: FittedModel, time_model: FittedModel, catalog: Dataset,
                 clustering: KMeansModel):
        if energy_model.target != "energy" or time_model.target != "time":
            raise InvalidArgument("expected an energy model and a time model")
        self.energy_model = energy_model
        self.time_model = time_model
        self.catalog = catalog
        self.clustering = clustering
        self._cache: dict = {}

    def predict(self, job, clocks):
        key = (job.app_id, job.default_profile.time_s, tuple(clocks))
        hit = self._cache.get(key)
        if hit is None:
            try:
                match = correlate(self.clustering, self.catalog, job.default_profile).matched_app
            except InvalidArgument as exc:
                raise MissingData(str(exc)) from None
            records = self.catalog.for_app(match)
            if not records:
                raise MissingData(f"correlated app {match!r} has no records")
            feats = [features_at(nearest_record(records, c), c) for c in clocks]
            hit = (predict_features(self.energy_model, feats),
                   np.maximum(predict_features(self.time_model, feats), 0.0), match)
            self._cache[key] = hit
        return hit


def select_clock(clocks: Sequence[ClockSet], energy: np.ndarray, time: np.ndarray, budget: float,
                 mode: str = TEXT_SEMANTICS, objective: str = "energy") -> int | None:
    """Index of the chosen clock, or None when no clock fits ``budget``.

    ``text_semantics`` minimises the objective over every clock whose
    predicted time is within budget (ties: lower time, then lower core and
    memory clock). ``literal_pseudocode`` scans the clock list once and
    accepts a clock only if it beats the best objective so far and is no
    slower than the last accepted clock.
    """
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    if objective not in OBJECTIVES:
        raise InvalidArgument(f"unknown objective {objective!r}")
    value = energy if objective == "energy" else energy / time
    if mode == TEXT_SEMANTICS:
        feasible = [i for i in range(len(clocks)) if time[i] <= budget]
        if not feasible:
            return None
        return min(feasible, key=lambda i: (value[i], time[i], clocks[i].sm_clock, clocks[i].mem_clock))
    chosen, best, max_time = None, math.inf, budget
    for i in range(len(clocks)):
        if value[i] < best and time[i] <= max_time:
            chosen, best, max_time = i, value[i], time[i]
    return chosen


def _edf_key(item: tuple[int, Job]):
    idx, job = item
    return (job.absolute_deadline_s, job.arrival_s, job.app_id, idx)


def _edf_loop(workload: Workload, decide: Callable[[int, Job, float], ScheduleDecision],
              advance: Callable[[ScheduleDecision], float]) -> list[ScheduleDecision]:
    """Earliest-deadline-first event loop on a single serial device.

    The queue is re-sorted after every job, so any job that arrived while
    the previous one ran competes on deadline. ``decide`` gets the current
    time; ``advance`` returns how long the decided job occupies the device.
    """
    pending = sorted(enumerate(workload.jobs), key=lambda it: (it[1].arrival_s, it[0]))
    now = 0.0
    out = []
    while pending:
        ready = [it for it in pending if it[1].arrival_s <= now]
        if not ready:
            now = pending[0][1].arrival_s
            continue
        idx, job = min(ready, key=_edf_key)
        pending.remove((idx, job))
        decision = decide(idx, job, now)
        out.append(decision)
        if decision.status == SCHEDULED:
            now += advance(decision)
    return out


def schedule_d_dvfs(workload: Workload, predictor: Predictor, mode: str = TEXT_SEMANTICS,
                    objective: str = "energy", fallback: bool = False, serial: bool = True,
                    execute: Callable[[ScheduleDecision], float] | None = None) -> list[ScheduleDecision]:
    """Deadline-aware data-driven clock selection.

    With ``serial`` the budget is what remains of the absolute deadline at
    selection time; otherwise each job gets its full relative deadline.
    ``execute`` returns a scheduled job's actual run time; without it the
    clock advances by the predicted time. ``fallback`` runs otherwise
    rejected jobs at their fastest predicted clock.
    """
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    clocks = clock_catalog(workload.device)

    def decide(idx: int, job: Job, now: float) -> ScheduleDecision:
        # measured from arrival so a job picked on arrival gets exactly its deadline
        budget = job.deadline_s - (now - job.arrival_s) if serial else job.deadline_s
        try:
            energy, time, match = predictor.predict(job, clocks)
        except MissingData as exc:
            return ScheduleDecision(job, idx, None, None, None, ERROR, budget, message=str(exc))
        i = select_clock(clocks, energy, time, budget, mode, objective)
        used_fallback = False
        if i is None and fallback:
            i = min(range(len(clocks)), key=lambda j: (time[j], energy[j], clocks[j].sm_clock))
            used_fallback = True
        if i is None:
            return ScheduleDecision(job, idx, None, None, None, REJECTED, budget, matched_app=match)
        return ScheduleDecision(job, idx, clocks[i], float(energy[i]), float(time[i]), SCHEDULED,
                                budget, used_fallback, match)

    return _edf_loop(workload, decide, execute or (lambda d: d.predicted_time_s))


def schedule_baseline(workload: Workload, kind: PolicyKind | str,
                      execute: Callable[[ScheduleDecision], float] | None = None) -> list[ScheduleDecision]:
    """Every job at the device default or maximum clock, in the same EDF order.

    Without ``execute`` the clock advances by each job's default-clock time.
    """
    kind = PolicyKind(kind)
    if kind == PolicyKind.DEFAULT_CLOCK:
        clock = workload.device.default_clock
    elif kind == PolicyKind.MAX_CLOCK:
        clock = workload.device.max_clock
    else:
        raise InvalidArgument(f"{kind.value} is not a fixed-clock baseline")

    def decide(idx: int, job: Job, now: float) -> ScheduleDecision:
        return ScheduleDecision(job, idx, clock, None, None, SCHEDULED, job.absolute_deadline_s - now)

    return _edf_loop(workload, decide, execute or (lambda d: d.job.default_profile.time_s))


def oracle_per_job(job: Job, device: DeviceSpec, truth: SyntheticGPU, job_index: int = 0) -> ScheduleDecision:
    """Brute-force optimum for one job in isolation: least true energy within its deadline."""
    best = None
    for clock in device.supported_clocks:
        energy, time = truth.measure(job.app_id, clock)
        if time > job.deadline_s:
            continue
        key = (energy, time, clock.sm_clock, clock.mem_clock)
        if best is None or key < best[0]:
            best = (key, clock, energy, time)
    if best is None:
        return ScheduleDecision(job, job_index, None, None, None, REJECTED, job.deadline_s)
    _, clock, energy, time = best
    return ScheduleDecision(job, job_index, clock, energy, time, SCHEDULED, job.deadline_s)


def schedule_oracle(workload: Workload, truth: SyntheticGPU,
                    execute: Callable[[ScheduleDecision], float] | None = None) -> list[ScheduleDecision]:
    """Per-job oracle decisions emitted in EDF order."""

    def decide(idx: int, job: Job, now: float) -> ScheduleDecision:
        return oracle_per_job(job, workload.device, truth, idx)

    return _edf_loop(workload, decide, execute or (lambda d: d.predicted_time_s))
