"""Serial execution of schedule decisions against the synthetic ground truth."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import IO, Callable, Sequence

from .core import InvalidArgument, Job
from .ingest import _text_stream, format_real
from .scheduler import ERROR, REJECTED, SCHEDULED, ScheduleDecision
from .synthdata import SyntheticGPU


@dataclass(frozen=True)
class JobOutcome:
    """Result of one decision. Rejected and errored jobs never start (times are None)."""

    job: Job
    decision: ScheduleDecision
    actual_time_s: float
    actual_energy_ws: float
    start_s: float | None
    finish_s: float | None
    deadline_met: bool
    completion_ratio: float | None


@dataclass(frozen=True)
class SimulationReport:
    policy: str
    outcomes: tuple[JobOutcome, ...]
    total_energy_ws: float
    mean_energy_ws: float
    miss_count: int
    rejected_count: int
    error_count: int = 0

    @property
    def executed(self) -> list[JobOutcome]:
        return [o for o in self.outcomes if o.decision.status == SCHEDULED]

    def job_keys(self) -> list[tuple]:
        return sorted((o.job.app_id, o.job.arrival_s, o.job.deadline_s) for o in self.outcomes)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "total_energy_ws": self.total_energy_ws,
            "mean_energy_ws": self.mean_energy_ws,
            "miss_count": self.miss_count,
            "rejected_count": self.rejected_count,
            "error_count": self.error_count,
            "jobs": len(self.outcomes),
            "outcomes": [_outcome_row(o) for o in self.outcomes],
        }


def truth_executor(truth: SyntheticGPU) -> Callable[[ScheduleDecision], float]:
    """Run-time callback for the schedulers: the true time at the chosen clock."""
    return lambda d: truth.time(d.job.app_id, d.chosen_clock)


def simulate(decisions: Sequence[ScheduleDecision], truth: SyntheticGPU, policy: str = "") -> SimulationReport:
    """Run scheduled jobs one at a time in decision order.

    A job starts at the later of its arrival and the previous finish. Time
    and energy come from the ground truth at the chosen clock. Waiting in
    the queue costs no energy.
    """
    for d in decisions:
        if d.status == SCHEDULED:
            truth.archetype(d.job.app_id)
            truth.device.require(d.chosen_clock)
    outcomes = []
    previous_finish = 0.0
    total = 0.0
    misses = 0
    for d in decisions:
        job = d.job
        if d.status != SCHEDULED:
            outcomes.append(JobOutcome(job, d, 0.0, 0.0, None, None, False, None))
            continue
        energy, time = truth.measure(job.app_id, d.chosen_clock)
        start = max(job.arrival_s, previous_finish)
        finish = start + time
        met = finish <= job.absolute_deadline_s
        misses += not met
        total += energy
        previous_finish = finish
        outcomes.append(JobOutcome(job, d, time, energy, start, finish, met,
                                   (finish - job.arrival_s) / job.deadline_s))
    executed = sum(d.status == SCHEDULED for d in decisions)
    return SimulationReport(policy, tuple(outcomes), total, total / executed if executed else 0.0, misses,
                            sum(d.status == REJECTED for d in decisions),
                            sum(d.status == ERROR for d in decisions))


def savings(a: float, b: float) -> float:
    """Percent energy saved by total ``a`` relative to total ``b``."""
    return (b - a) / b * 100.0 if b else 0.0


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[dict, ...]
    savings: dict[tuple[str, str], float]

    def to_dict(self) -> dict:
        return {
            "policies": list(self.rows),
            "savings_pct": [{"policy": a, "versus": b, "savings_pct": v}
                            for (a, b), v in sorted(self.savings.items())],
        }


def compare_totals(rows: Sequence[dict]) -> ComparisonTable:
    """Pairwise savings from per-policy summary rows (each with ``policy`` and ``total_energy_ws``)."""
    table = {}
    for ra in rows:
        for rb in rows:
            if ra["policy"] != rb["policy"]:
                table[(ra["policy"], rb["policy"])] = savings(ra["total_energy_ws"], rb["total_energy_ws"])
    return ComparisonTable(tuple(rows), table)


def compare(reports: Sequence[SimulationReport]) -> ComparisonTable:
    if not reports:
        raise InvalidArgument("nothing to compare")
    keys = reports[0].job_keys()
    names = [r.policy for r in reports]
    if len(set(names)) != len(names):
        raise InvalidArgument("policy names must be distinct")
    for r in reports[1:]:
        if r.job_keys() != keys:
            raise InvalidArgument(f"report {r.policy!r} covers a different workload")
    rows = [{"policy": r.policy, "total_energy_ws": r.total_energy_ws, "mean_energy_ws": r.mean_energy_ws,
             "miss_count": r.miss_count, "rejected_count": r.rejected_count, "error_count": r.error_count}
            for r in reports]
    return compare_totals(rows)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format_real(value)
    return str(value)


def _outcome_row(o: JobOutcome) -> dict:
    d = o.decision
    return {
        "job_index": d.job_index,
        "app_id": o.job.app_id,
        "arrival_s": o.job.arrival_s,
        "deadline_s": o.job.deadline_s,
        "status": d.status,
        "fallback": d.fallback,
        "matched_app": d.matched_app,
        "sm_clock": d.chosen_clock.sm_clock if d.chosen_clock else None,
        "mem_clock": d.chosen_clock.mem_clock if d.chosen_clock else None,
        "predicted_energy_ws": d.predicted_energy_ws,
        "predicted_time_s": d.predicted_time_s,
        "actual_energy_ws": o.actual_energy_ws,
        "actual_time_s": o.actual_time_s,
        "start_s": o.start_s,
        "finish_s": o.finish_s,
        "deadline_met": o.deadline_met,
        "completion_ratio": o.completion_ratio,
    }


OUTCOME_COLUMNS = (
    "job_index", "app_id", "arrival_s", "deadline_s", "status", "fallback", "matched_app",
    "sm_clock", "mem_clock", "predicted_energy_ws", "predicted_time_s", "actual_energy_ws",
    "actual_time_s", "start_s", "finish_s", "deadline_met", "completion_ratio")


def write_outcomes_csv(report: SimulationReport, dest: str | os.PathLike | IO) -> None:
    fh, cleanup = _text_stream(dest, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTCOME_COLUMNS)
        for o in report.outcomes:
            row = _outcome_row(o)
            writer.writerow([_cell(row[c]) for c in OUTCOME_COLUMNS])
    finally:
        cleanup()


LONG_METRICS = ("actual_energy_ws", "actual_time_s", "completion_ratio", "sm_clock", "mem_clock")


def write_long_csv(reports: Sequence[SimulationReport], dest: str | os.PathLike | IO) -> None:
    """Plot-ready rows ``policy,app,metric,value``; rejected jobs are skipped."""
    fh, cleanup = _text_stream(dest, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "app", "metric", "value"])
        for r in reports:
            for o in r.executed:
                row = _outcome_row(o)
                for metric in LONG_METRICS:
                    writer.writerow([r.policy, o.job.app_id, metric, _cell(row[metric])])
            writer.writerow([r.policy, "ALL", "total_energy_ws", _cell(r.total_energy_ws)])
            writer.writerow([r.policy, "ALL", "mean_energy_ws", _cell(r.mean_energy_ws)])
    finally:
        cleanup()


def write_comparison_csv(table: ComparisonTable, dest: str | os.PathLike | IO) -> None:
    fh, cleanup = _text_stream(dest, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        policies = [r["policy"] for r in table.rows]
        writer.writerow(["policy", "total_energy_ws", "mean_energy_ws", "miss_count", "rejected_count",
                         "error_count"] + [f"savings_vs_{p}_pct" for p in policies])
        for r in table.rows:
            cells = [r["policy"]] + [_cell(r[k]) for k in ("total_energy_ws", "mean_energy_ws", "miss_count",
                                                           "rejected_count", "error_count")]
            cells += ["" if p == r["policy"] else _cell(table.savings[(r["policy"], p)]) for p in policies]
            writer.writerow(cells)
    finally:
        cleanup()


def report_json(report: SimulationReport, extra: dict | None = None) -> str:
    data = report.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, sort_keys=True, indent=1) + "\n"
