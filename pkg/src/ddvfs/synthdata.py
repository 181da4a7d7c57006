"""Synthetic ground-truth GPU.

Each application archetype has a roofline execution-time law and a
stepwise-voltage power law. Together they give energy-vs-clock curves
with plateaus, sawtooth pockets at voltage steps and, for stall-heavy
archetypes, interior minima. The same functions act as the measurement
oracle for the scheduler, the simulator and the acceptance checks.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ClockSet,
    Dataset,
    DeviceSpec,
    FeatureVector,
    InvalidArgument,
    ProfileRecord,
    clock_catalog,
)

# Fraction of peak core switching activity that persists while the SMs wait
# on memory or stalls; keeps core power clock-dependent when time saturates.
IDLE_ACTIVITY = 0.3

DEFAULT_VOLTAGES = (0.85, 0.95, 1.05, 1.15)
# Step boundaries as fractions of the core clock range; voltage rises faster near the top.
DEFAULT_STEP_FRACTIONS = (0.0, 0.3, 0.6, 0.85)

N_DISTRACTORS = 12


@dataclass(frozen=True)
class AppArchetype:
    app_id: str
    compute_work: float
    memory_work: float
    stall_s: float
    power_coeff_core: float
    power_coeff_mem: float
    noise_seed: int
    noise_level: float = 0.02

    def __post_init__(self):
        values = (self.compute_work, self.memory_work, self.stall_s,
                  self.power_coeff_core, self.power_coeff_mem, self.noise_level)
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgument(f"archetype {self.app_id!r} has non-finite parameters")
        if self.compute_work <= 0:
            raise InvalidArgument("compute_work must be positive")
        if min(self.memory_work, self.stall_s, self.power_coeff_core, self.power_coeff_mem) < 0:
            raise InvalidArgument("work, stall and power coefficients must be nonnegative")
        if not 0 <= self.noise_level <= 0.02:
            raise InvalidArgument("noise_level must lie in [0, 0.02]")


@dataclass(frozen=True)
class VoltageTable:
    """Stepwise voltage: ``steps[i] = (threshold_mhz, volts)`` applies from the threshold up."""

    steps: tuple[tuple[int, float], ...]

    def __post_init__(self):
        steps = tuple((int(t), float(v)) for t, v in self.steps)
        if not steps:
            raise InvalidArgument("voltage table needs at least one step")
        for (t0, v0), (t1, v1) in zip(steps, steps[1:]):
            if t1 <= t0 or v1 <= v0:
                raise InvalidArgument("voltage thresholds and voltages must be strictly increasing")
        object.__setattr__(self, "steps", steps)

    def voltage(self, sm_clock: int) -> float:
        volts = None
        for threshold, v in self.steps:
            if sm_clock >= threshold:
                volts = v
            else:
                break
        if volts is None:
            raise InvalidArgument(f"sm_clock {sm_clock} below the first voltage threshold")
        return volts

    def check_covers(self, device: DeviceSpec) -> None:
        lowest = min(c.sm_clock for c in device.supported_clocks)
        if self.steps[0][0] > lowest:
            raise InvalidArgument(f"voltage table does not cover sm_clock {lowest}")


def default_voltage_table(device: DeviceSpec) -> VoltageTable:
    lo = min(c.sm_clock for c in device.supported_clocks)
    hi = max(c.sm_clock for c in device.supported_clocks)
    thresholds = sorted({lo + round(f * (hi - lo)) for f in DEFAULT_STEP_FRACTIONS})
    return VoltageTable(tuple(zip(thresholds, DEFAULT_VOLTAGES[-len(thresholds):])))


def _roofline(app: AppArchetype, clock: ClockSet) -> tuple[float, float, float]:
    compute_s = app.compute_work / clock.sm_clock
    memory_s = app.memory_work / clock.mem_clock
    return compute_s, memory_s, max(compute_s, memory_s) + app.stall_s


@lru_cache(maxsize=None)
def _unit_noise(seed: int, sm_clock: int, mem_clock: int, stream: int) -> float:
    """Deterministic uniform draw in [-1, 1] keyed by (seed, clock, stream)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, sm_clock, mem_clock, stream])
    return float(rng.uniform(-1.0, 1.0))


def utilisation(app: AppArchetype, clock: ClockSet) -> tuple[float, float]:
    """Core and memory activity fractions (u_c, u_m) from the roofline balance."""
    compute_s, memory_s, busy_s = _roofline(app, clock)
    u_core = IDLE_ACTIVITY + (1.0 - IDLE_ACTIVITY) * compute_s / busy_s
    u_mem = memory_s / busy_s
    return u_core, u_mem


def true_time(app: AppArchetype, clock: ClockSet, device: DeviceSpec) -> float:
    device.require(clock)
    _, _, busy_s = _roofline(app, clock)
    eps = app.noise_level * _unit_noise(app.noise_seed, clock.sm_clock, clock.mem_clock, 0)
    return busy_s * (1.0 + eps)


def true_power(app: AppArchetype, clock: ClockSet, voltage_table: VoltageTable,
               device: DeviceSpec) -> float:
    device.require(clock)
    u_core, u_mem = utilisation(app, clock)
    volts = voltage_table.voltage(clock.sm_clock)
    core_w = app.power_coeff_core * clock.sm_clock * volts ** 2 * u_core
    mem_w = app.power_coeff_mem * clock.mem_clock * u_mem
    return device.static_power_w + core_w + mem_w


def true_energy(app: AppArchetype, clock: ClockSet, voltage_table: VoltageTable,
                device: DeviceSpec) -> float:
    return true_power(app, clock, voltage_table, device) * true_time(app, clock, device)


def level_of(fraction: float) -> str:
    if fraction < 0.01:
        return "none"
    if fraction < 0.5:
        return "low"
    if fraction < 0.75:
        return "mid"
    return "high"


def distractor_names() -> list[str]:
    return [f"noise_{i:02d}" for i in range(N_DISTRACTORS)]


def emit_features(app: AppArchetype, clock: ClockSet, device: DeviceSpec) -> FeatureVector:
    """Profiler-style counters for one run of ``app`` at ``clock``.

    Counts scale with the work parameters, throughputs with work over the
    noiseless busy time, and the ``noise_*`` columns depend only on the
    archetype seed and the clock.
    """
    device.require(clock)
    cw, mw = app.compute_work, app.memory_work
    compute_s, memory_s, busy_s = _roofline(app, clock)
    u_core, u_mem = utilisation(app, clock)
    active = compute_s / busy_s
    stall_frac = app.stall_s / busy_s
    mem_ratio = mw / (cw + mw)
    dp_share = min(1.0, app.power_coeff_core / 0.15)

    def jitter(stream: int) -> float:
        return 1.0 + 0.02 * _unit_noise(app.noise_seed, clock.sm_clock, clock.mem_clock, stream)

    def pct(x: float) -> float:
        return min(100.0, max(0.0, 100.0 * x))

    numeric = {
        "sm": 100.0 * u_core,
        "sm_clock": float(clock.sm_clock),
        "mem_clock": float(clock.mem_clock),
        "ipc": 4.0 * active * (1.0 - 0.5 * mem_ratio) * jitter(1),
        "l2_tex_read_hit_rate": pct(1.0 - 0.8 * mem_ratio),
        "l2_tex_read_transactions": 1e4 * (0.5 * cw + 2.0 * mw),
        "tex_cache_throughput": 300.0 * cw / busy_s * jitter(2),
        "tex_cache_transactions": 3e3 * cw,
        "flop_dp_efficiency": pct(active * dp_share),
        "shared_load_throughput": 200.0 * cw / busy_s * jitter(3),
        "stall_exec_dependency": pct(0.4 * active * (1.0 - mem_ratio)),
        "stall_inst_fetch": pct(0.3 * stall_frac),
        "eligible_warps_per_cycle": 8.0 * active * jitter(4),
        "stall_constant_memory_dependency": pct(0.2 * stall_frac),
        "pcie_total_data_transmitted": 1e6 * (0.1 * mw + 50.0 * app.stall_s),
        "dram_read_transactions": 6e3 * mw,
        "dram_read_bytes": 32 * 6e3 * mw,
        "issue_slots": 1e5 * cw,
        "l2_tex_write_throughput": 1e3 * (0.4 * mw + 0.05 * cw) / busy_s * jitter(5),
        "inst_bit_convert": 10.0 * cw,
        "l2_global_load_bytes": 32e4 * (0.3 * cw + 0.6 * mw),
        "gld_requested_throughput": 1e3 * (0.3 * cw + 0.6 * mw) / busy_s * jitter(6),
        "pcie_total_data_received": 1e6 * (0.2 * mw + 30.0 * app.stall_s),
        "dram_write_transactions": 4e3 * mw,
        "inst_executed_shared_loads": 2e3 * cw,
        "gst_efficiency": pct(1.0 - 0.5 * mem_ratio),
        "inst_replay_overhead": 0.1 + 0.5 * mem_ratio,
        "inst_executed_shared_stores": 1e3 * cw,
        "l2_read_throughput": 1e3 * (0.5 * cw + 2.0 * mw) / busy_s * jitter(7),
        "gst_throughput": 400.0 * mw / busy_s * jitter(8),
        "warp_execution_efficiency": pct(0.6 + 0.4 * (1.0 - stall_frac)),
        "local_store_throughput": 50.0 * app.stall_s / busy_s * jitter(9),
        "gld_efficiency": pct(0.5 + 0.5 * (1.0 - mem_ratio)),
        "global_store_requests": 1e3 * (0.4 * mw + 0.02 * cw),
        "stall_memory_throttle": pct(0.3 * u_mem),
        "inst_fp_32": 5e4 * cw,
    }
    for i, name in enumerate(distractor_names()):
        numeric[name] = 50.0 + 50.0 * _unit_noise(app.noise_seed, clock.sm_clock, clock.mem_clock, 100 + i)
    categorical = {
        "dram_utilisation": level_of(u_mem),
        "double_precision_fu_utilisation": level_of(active * dp_share),
        "tex_utilisation": level_of(active * (1.0 - mem_ratio)),
    }
    return FeatureVector(numeric, categorical)


class SyntheticGPU:
    """Ground truth for one device: archetypes, voltage table and cached measurements."""

    def __init__(self, archetypes: Iterable[AppArchetype], device: DeviceSpec,
                 voltage_table: VoltageTable | None = None):
        self.archetypes = {a.app_id: a for a in archetypes}
        self.device = device
        self.voltage_table = voltage_table or default_voltage_table(device)
        self.voltage_table.check_covers(device)
        self._cache: dict[tuple[str, ClockSet], tuple[float, float]] = {}

    def archetype(self, app_id: str) -> AppArchetype:
        try:
            return self.archetypes[app_id]
        except KeyError:
            raise InvalidArgument(f"no synthetic archetype for app {app_id!r}") from None

    def measure(self, app_id: str, clock: ClockSet) -> tuple[float, float]:
        """(energy_ws, time_s) for one run."""
        key = (app_id, clock)
        hit = self._cache.get(key)
        if hit is None:
            app = self.archetype(app_id)
            time_s = true_time(app, clock, self.device)
            power_w = true_power(app, clock, self.voltage_table, self.device)
            hit = (power_w * time_s, time_s)
            self._cache[key] = hit
        return hit

    def time(self, app_id: str, clock: ClockSet) -> float:
        return self.measure(app_id, clock)[1]

    def energy(self, app_id: str, clock: ClockSet) -> float:
        return self.measure(app_id, clock)[0]

    def profile(self, app_id: str, clock: ClockSet) -> ProfileRecord:
        energy_ws, time_s = self.measure(app_id, clock)
        features = emit_features(self.archetype(app_id), clock, self.device)
        return ProfileRecord(app_id, clock, features, energy_ws, time_s)

    def default_profile(self, app_id: str) -> ProfileRecord:
        return self.profile(app_id, self.device.default_clock)

    def dataset(self, stride: int = 2) -> Dataset:
        return generate_dataset(list(self.archetypes.values()), self.device, stride, self.voltage_table)


def generate_dataset(archetypes: Sequence[AppArchetype], device: DeviceSpec, stride: int = 2,
                     voltage_table: VoltageTable | None = None) -> Dataset:
    """One record per archetype at every ``stride``-th catalog clock."""
    if not archetypes:
        raise InvalidArgument("at least one archetype is required")
    if stride < 1:
        raise InvalidArgument("stride must be a positive integer")
    table = voltage_table or default_voltage_table(device)
    clocks = clock_catalog(device)[::stride]
    records = []
    for app in archetypes:
        for clock in clocks:
            time_s = true_time(app, clock, device)
            energy_ws = true_power(app, clock, table, device) * time_s
            records.append(ProfileRecord(app.app_id, clock, emit_features(app, clock, device),
                                         energy_ws, time_s))
    return Dataset(records, device)


# Five families: particle filters with the SYRK kernels, myocyte with
# lavaMD, Backprop with ATAX, the GEMM-like Polybench kernels, and 2MM alone.
_DEFAULT_SUITE = (
    ("particlefilter_naive", 225.0, 75.0, 0.15, 0.090, 0.050),
    ("particlefilter_float", 200.0, 70.0, 0.1375, 0.085, 0.050),
    ("myocyte", 600.0, 37.5, 0.075, 0.120, 0.030),
    ("lavaMD", 675.0, 45.0, 0.0625, 0.130, 0.030),
    ("Backprop", 75.0, 275.0, 0.05, 0.070, 0.080),
    ("SYRK", 250.0, 87.5, 0.125, 0.095, 0.055),
    ("SYR2K", 287.5, 95.0, 0.15, 0.100, 0.055),
    ("GEMM", 900.0, 225.0, 0.0125, 0.130, 0.050),
    ("COVAR", 800.0, 250.0, 0.02, 0.120, 0.050),
    ("CORR", 825.0, 262.5, 0.025, 0.120, 0.050),
    ("ATAX", 87.5, 312.5, 0.0375, 0.075, 0.085),
    ("2MM", 1500.0, 375.0, 0.0125, 0.140, 0.060),
)


def default_suite() -> list[AppArchetype]:
    return [
        AppArchetype(app_id, cw, mw, stall, kc, km, noise_seed=1000 + i)
        for i, (app_id, cw, mw, stall, kc, km) in enumerate(_DEFAULT_SUITE)
    ]


# ---------------------------------------------------------------------------
# Config files (INI). Device file:
#
#   [device]
#   name = p100-like
#   static_power_w = 30
#   default_clock = 1189:715          ; sm:mem
#   max_clock = 1328:715
#   clocks = 544:715, 569:715, ...
#   [voltage]                         ; optional, default table otherwise
#   steps = 544:0.85, 779:0.95, ...   ; threshold_mhz:volts
#
# Suite file: one [app.<id>] section per archetype with the AppArchetype fields.
# ---------------------------------------------------------------------------

_ARCHETYPE_FLOATS = ("compute_work", "memory_work", "stall_s", "power_coeff_core",
                     "power_coeff_mem", "noise_level")


def _clock(text: str) -> ClockSet:
    sm, mem = text.strip().split(":")
    return ClockSet(int(sm), int(mem))


def load_device(path: str | Path) -> tuple[DeviceSpec, VoltageTable]:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    sec = parser["device"]
    device = DeviceSpec(
        name=sec["name"],
        supported_clocks=tuple(_clock(c) for c in sec["clocks"].split(",")),
        default_clock=_clock(sec["default_clock"]),
        max_clock=_clock(sec["max_clock"]),
        static_power_w=sec.getfloat("static_power_w"),
    )
    if parser.has_section("voltage"):
        steps = []
        for item in parser["voltage"]["steps"].split(","):
            threshold, volts = item.strip().split(":")
            steps.append((int(threshold), float(volts)))
        table = VoltageTable(tuple(steps))
    else:
        table = default_voltage_table(device)
    return device, table


def dump_device(device: DeviceSpec, table: VoltageTable, path: str | Path) -> None:
    fmt = lambda c: f"{c.sm_clock}:{c.mem_clock}"  # noqa: E731
    parser = configparser.ConfigParser()
    parser["device"] = {
        "name": device.name,
        "static_power_w": repr(device.static_power_w),
        "default_clock": fmt(device.default_clock),
        "max_clock": fmt(device.max_clock),
        "clocks": ", ".join(fmt(c) for c in device.supported_clocks),
    }
    parser["voltage"] = {"steps": ", ".join(f"{t}:{v!r}" for t, v in table.steps)}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_suite(path: str | Path) -> list[AppArchetype]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # type: ignore[assignment]
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    suite = []
    for name in parser.sections():
        if not name.startswith("app."):
            continue
        sec = parser[name]
        kwargs = {k: sec.getfloat(k) for k in _ARCHETYPE_FLOATS if k in sec}
        suite.append(AppArchetype(app_id=name[4:], noise_seed=sec.getint("noise_seed"), **kwargs))
    if not suite:
        raise InvalidArgument(f"no [app.*] sections in {path}")
    return suite


def dump_suite(archetypes: Sequence[AppArchetype], path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # type: ignore[assignment]
    for app in archetypes:
        parser[f"app.{app.app_id}"] = {
            f.name: repr(getattr(app, f.name)) for f in fields(app) if f.name != "app_id"
        }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def suite_hash(archetypes: Sequence[AppArchetype]) -> str:
    text = "\n".join(repr(a) for a in archetypes)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
