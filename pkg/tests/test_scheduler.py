import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddvfs.clustering import fit_kmeans
from ddvfs.core import ClockSet, Dataset, DeviceSpec, FeatureVector, InvalidArgument, Job, ProfileRecord, \
    Workload, clock_catalog
from ddvfs.ingest import encode
from ddvfs.models import GBTConfig, fit_gbt
from ddvfs.scheduler import (
    ERROR,
    LITERAL_PSEUDOCODE,
    REJECTED,
    SCHEDULED,
    TEXT_SEMANTICS,
    MissingData,
    ModelPredictor,
    PolicyKind,
    TruthPredictor,
    WorkloadGenConfig,
    features_at,
    generate_workload,
    nearest_record,
    oracle_per_job,
    schedule_baseline,
    schedule_d_dvfs,
    schedule_oracle,
    select_clock,
)
from ddvfs.simulator import truth_executor
from ddvfs.synthdata import AppArchetype, SyntheticGPU, VoltageTable, default_suite

LOW, HIGH = ClockSet(500, 715), ClockSet(1000, 715)
TWO_CLOCKS = DeviceSpec("two", (LOW, HIGH), HIGH, HIGH, 0.0)


class TablePredictor:
    """Fixed (energy, time) per clock for every job."""

    def __init__(self, table, missing=()):
        self.table = table
        self.missing = set(missing)

    def predict(self, job, clocks):
        if job.app_id in self.missing:
            raise MissingData(f"nothing known about {job.app_id}")
        return (np.array([self.table[c][0] for c in clocks]),
                np.array([self.table[c][1] for c in clocks]), job.app_id)


EXAMPLE = TablePredictor({LOW: (100.0, 10.0), HIGH: (150.0, 5.0)})


def one_job(deadline, app="a", arrival=0.0, device=TWO_CLOCKS):
    clock = device.default_clock
    rec = ProfileRecord(app, clock, FeatureVector({"x": 1.0}), 1.0, 5.0)
    return Workload((Job(app, arrival, deadline, rec),), device)


def suite_workload(gpu, seed, factor=(1.0, 2.0), arrival=(1.0, 50.0), jobs_per_app=1):
    profiles = [gpu.default_profile(a) for a in gpu.archetypes]
    cfg = WorkloadGenConfig(arrival, factor, seed=seed, jobs_per_app=jobs_per_app)
    return generate_workload(profiles, gpu.device, cfg)


class TestExamples:
    @pytest.mark.parametrize("mode", [TEXT_SEMANTICS, LITERAL_PSEUDOCODE])
    def test_only_feasible_clock(self, mode):
        (d,) = schedule_d_dvfs(one_job(8.0), EXAMPLE, mode)
        assert d.status == SCHEDULED and d.chosen_clock == HIGH
        assert (d.predicted_energy_ws, d.predicted_time_s) == (150.0, 5.0)

    @pytest.mark.parametrize("mode", [TEXT_SEMANTICS, LITERAL_PSEUDOCODE])
    def test_min_energy_when_loose(self, mode):
        (d,) = schedule_d_dvfs(one_job(12.0), EXAMPLE, mode)
        assert d.chosen_clock == LOW

    @pytest.mark.parametrize("mode", [TEXT_SEMANTICS, LITERAL_PSEUDOCODE])
    def test_rejected_when_too_tight(self, mode):
        (d,) = schedule_d_dvfs(one_job(3.0), EXAMPLE, mode)
        assert d.status == REJECTED and d.chosen_clock is None

    def test_deadline_met_exactly_counts(self):
        (d,) = schedule_d_dvfs(one_job(10.0), EXAMPLE)
        assert d.chosen_clock == LOW

    def test_budget_on_arrival_is_the_deadline(self):
        # 401 + 0.69... - 401 rounds below 0.69..., which would reject the job
        deadline = 0.6925456150254568
        (d,) = schedule_d_dvfs(one_job(deadline, arrival=401.0), TablePredictor({LOW: (1.0, 1.0),
                                                                              HIGH: (2.0, deadline)}))
        assert d.budget_s == deadline and d.chosen_clock == HIGH

    def test_fallback_runs_fastest(self):
        (d,) = schedule_d_dvfs(one_job(3.0), EXAMPLE, fallback=True)
        assert d.status == SCHEDULED and d.chosen_clock == HIGH and d.fallback

    def test_missing_data_is_per_job_error(self):
        rec = ProfileRecord("a", HIGH, FeatureVector({"x": 1.0}), 1.0, 5.0)
        jobs = (Job("ghost", 0.0, 20.0, ProfileRecord("ghost", HIGH, FeatureVector({"x": 1.0}), 1.0, 5.0)),
                Job("a", 0.0, 30.0, rec))
        out = schedule_d_dvfs(Workload(jobs, TWO_CLOCKS), TablePredictor(EXAMPLE.table, missing={"ghost"}))
        assert [d.status for d in out] == [ERROR, SCHEDULED]
        assert "ghost" in out[0].message

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgument):
            schedule_d_dvfs(one_job(8.0), EXAMPLE, "greedy")


class TestSelectClock:
    clocks = [ClockSet(f, 715) for f in (500, 600, 700, 800)]

    def test_power_objective(self):
        energy = np.array([100.0, 90.0, 95.0, 120.0])
        time = np.array([10.0, 6.0, 4.0, 3.0])
        # power: 10, 15, 23.75, 40
        assert select_clock(self.clocks, energy, time, 100.0, objective="power") == 0
        assert select_clock(self.clocks, energy, time, 100.0, objective="energy") == 1

    def test_ties_prefer_lower_time_then_lower_clock(self):
        energy = np.array([50.0, 50.0, 50.0, 60.0])
        time = np.array([4.0, 3.0, 3.0, 1.0])
        assert select_clock(self.clocks, energy, time, 10.0) == 1

    def test_literal_tightens_budget(self):
        # literal accepts 500 MHz, then needs time <= 9 and lower energy
        energy = np.array([100.0, 80.0, 60.0, 50.0])
        time = np.array([9.0, 9.5, 8.0, 7.0])
        assert select_clock(self.clocks, energy, time, 10.0, LITERAL_PSEUDOCODE) == 3
        energy = np.array([100.0, 40.0, 90.0, 95.0])
        time = np.array([5.0, 6.0, 4.0, 3.0])
        assert select_clock(self.clocks, energy, time, 10.0, TEXT_SEMANTICS) == 1
        assert select_clock(self.clocks, energy, time, 10.0, LITERAL_PSEUDOCODE) == 2

    @given(st.lists(st.tuples(st.floats(1.0, 1e3), st.floats(0.1, 50.0)), min_size=1, max_size=12),
           st.floats(0.1, 60.0))
    @settings(max_examples=200, deadline=None)
    def test_text_never_costlier_than_literal(self, rows, budget):
        clocks = [ClockSet(100 + i, 715) for i in range(len(rows))]
        energy = np.array([r[0] for r in rows])
        time = np.array([r[1] for r in rows])
        text = select_clock(clocks, energy, time, budget, TEXT_SEMANTICS)
        literal = select_clock(clocks, energy, time, budget, LITERAL_PSEUDOCODE)
        assert (text is None) == (literal is None)
        if text is not None:
            assert time[text] <= budget and time[literal] <= budget
            assert energy[text] <= energy[literal]
            assert energy[text] == min(e for e, t in zip(energy, time) if t <= budget)


class TestWorkload:
    def test_collapsed_factor(self, gpu):
        wl = suite_workload(gpu, 0, factor=(2.0, 2.0))
        for job in wl.jobs:
            assert job.deadline_s == 2.0 * job.default_profile.time_s
            assert job.default_profile.time_s == gpu.time(job.app_id, gpu.device.default_clock)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["truncated_normal", "uniform"]),
           st.floats(0.0, 100.0), st.floats(0.01, 100.0), st.floats(0.5, 2.0), st.floats(0.0, 3.0))
    @settings(max_examples=60, deadline=None)
    def test_within_ranges(self, seed, dist, a_lo, a_width, f_lo, f_width):
        profiles = [ProfileRecord("a", HIGH, FeatureVector({"x": 1.0}), 1.0, 2.0)] * 5
        cfg = WorkloadGenConfig((a_lo + 0.01, a_lo + 0.01 + a_width), (f_lo, f_lo + f_width), dist, seed)
        for job in generate_workload(profiles, TWO_CLOCKS, cfg).jobs:
            assert cfg.arrival_range[0] <= job.arrival_s <= cfg.arrival_range[1]
            assert f_lo * 2.0 <= job.deadline_s <= (f_lo + f_width) * 2.0 + 1e-12

    def test_deterministic(self, gpu):
        assert suite_workload(gpu, 5) == suite_workload(gpu, 5)
        assert suite_workload(gpu, 5) != suite_workload(gpu, 6)

    def test_truncated_normal_centred(self):
        profiles = [ProfileRecord("a", HIGH, FeatureVector({"x": 1.0}), 1.0, 1.0)] * 4000
        wl = generate_workload(profiles, TWO_CLOCKS, WorkloadGenConfig((1.0, 50.0), seed=3))
        arrivals = np.array([j.arrival_s for j in wl.jobs])
        assert abs(arrivals.mean() - 25.5) < 0.5
        # a width/4 normal truncated at two sigma has sd about 0.88 * 12.25
        assert 9.5 < arrivals.std() < 12.0

    def test_jobs_per_app(self, gpu):
        assert len(suite_workload(gpu, 1, jobs_per_app=3).jobs) == 36

    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            WorkloadGenConfig(arrival_range=(5.0, 1.0))
        with pytest.raises(InvalidArgument):
            WorkloadGenConfig(deadline_factor_range=(0.0, 1.0))
        with pytest.raises(InvalidArgument):
            WorkloadGenConfig(distribution="poisson")

    def test_profile_must_be_default(self, gpu):
        with pytest.raises(InvalidArgument):
            generate_workload([gpu.profile("GEMM", gpu.device.max_clock)], gpu.device, WorkloadGenConfig())


def replay_times(decisions, truth):
    """Selection time of each decision on the serial device."""
    now, out = 0.0, []
    for d in decisions:
        now = max(now, d.job.arrival_s)
        out.append(now)
        if d.status == SCHEDULED:
            now += truth.time(d.job.app_id, d.chosen_clock)
    return out


class TestEdf:
    @pytest.mark.parametrize("seed", range(6))
    def test_edf_order(self, gpu, seed):
        wl = suite_workload(gpu, seed, arrival=(1.0, 6.0), jobs_per_app=2)
        decisions = schedule_d_dvfs(wl, TruthPredictor(gpu), execute=truth_executor(gpu))
        times = replay_times(decisions, gpu)
        for i, d in enumerate(decisions):
            for later in decisions[i + 1:]:
                if later.job.arrival_s <= times[i]:
                    assert later.job.absolute_deadline_s >= d.job.absolute_deadline_s

    @pytest.mark.parametrize("seed", range(6))
    def test_feasibility_soundness(self, gpu, seed):
        wl = suite_workload(gpu, seed, arrival=(1.0, 10.0))
        decisions = schedule_d_dvfs(wl, TruthPredictor(gpu), execute=truth_executor(gpu))
        times = replay_times(decisions, gpu)
        for d, now in zip(decisions, times):
            assert d.budget_s == pytest.approx(d.job.absolute_deadline_s - now, abs=1e-9)
            if d.status == SCHEDULED:
                assert d.predicted_time_s <= d.budget_s

    def test_same_order_for_baselines(self, gpu):
        wl = suite_workload(gpu, 2, arrival=(1.0, 3.0))
        ddvfs = schedule_d_dvfs(wl, TruthPredictor(gpu), fallback=True, execute=truth_executor(gpu))
        dc = schedule_baseline(wl, PolicyKind.DEFAULT_CLOCK, execute=truth_executor(gpu))
        # with no queueing difference the first job picked is the same
        assert ddvfs[0].job_index == dc[0].job_index
        assert sorted(d.job_index for d in dc) == list(range(len(wl.jobs)))

    def test_ties_by_arrival_then_app(self, gpu):
        rec_a, rec_b = gpu.default_profile("ATAX"), gpu.default_profile("2MM")
        jobs = (Job("ATAX", 1.0, 4.0, rec_a), Job("2MM", 0.5, 4.5, rec_b), Job("2MM", 1.0, 4.0, rec_b))
        wl = Workload(jobs, gpu.device)
        out = schedule_baseline(wl, "default_clock", execute=lambda d: 0.0)
        assert [d.job_index for d in out] == [1, 2, 0]


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(5))
    def test_independent_perfect_predictor_matches_oracle(self, gpu, seed):
        wl = suite_workload(gpu, seed)
        decisions = schedule_d_dvfs(wl, TruthPredictor(gpu), serial=False)
        for d in decisions:
            ref = oracle_per_job(d.job, gpu.device, gpu, d.job_index)
            assert (d.status, d.chosen_clock) == (ref.status, ref.chosen_clock)

    def test_schedule_oracle_covers_jobs(self, gpu):
        wl = suite_workload(gpu, 3)
        out = schedule_oracle(wl, gpu)
        assert sorted(d.job_index for d in out) == list(range(12))


class TestBaselines:
    def test_default_clock(self, gpu):
        out = schedule_baseline(suite_workload(gpu, 0), PolicyKind.DEFAULT_CLOCK)
        assert {d.chosen_clock for d in out} == {ClockSet(1189, 715)}
        assert all(d.status == SCHEDULED for d in out)

    def test_max_clock(self, gpu):
        out = schedule_baseline(suite_workload(gpu, 0), "max_clock")
        assert {d.chosen_clock for d in out} == {ClockSet(1328, 715)}

    def test_empty_workload(self, gpu):
        empty = Workload((), gpu.device)
        assert schedule_baseline(empty, PolicyKind.DEFAULT_CLOCK) == []
        assert schedule_d_dvfs(empty, TruthPredictor(gpu)) == []

    def test_not_a_baseline(self, gpu):
        with pytest.raises(InvalidArgument):
            schedule_baseline(suite_workload(gpu, 0), PolicyKind.ORACLE)


class TestOracle:
    def test_infeasible(self, gpu):
        rec = gpu.default_profile("GEMM")
        fastest = min(gpu.time("GEMM", c) for c in gpu.device.supported_clocks)
        d = oracle_per_job(Job("GEMM", 0.0, 0.99 * fastest, rec), gpu.device, gpu)
        assert d.status == REJECTED

    def test_single_clock_device(self):
        c = ClockSet(1000, 715)
        dev = DeviceSpec("one", (c,), c, c, 10.0)
        truth = SyntheticGPU([AppArchetype("a", 1000.0, 0.0, 0.0, 0.1, 0.0, 1, 0.0)], dev)
        rec = truth.default_profile("a")
        assert oracle_per_job(Job("a", 0.0, 1.0, rec), dev, truth).chosen_clock == c
        assert oracle_per_job(Job("a", 0.0, 0.999, rec), dev, truth).status == REJECTED

    @pytest.mark.parametrize("static", [0.0, 30.0])
    @pytest.mark.parametrize("deadline", [1.2, 1.5, 3.0])
    def test_compute_bound_flat_voltage_sweep(self, device, static, deadline):
        dev = DeviceSpec(device.name, device.supported_clocks, device.default_clock, device.max_clock, static)
        app = AppArchetype("cb", 1000.0, 0.0, 0.0, 0.1, 0.0, 1, 0.0)
        truth = SyntheticGPU([app], dev, VoltageTable(((544, 1.0),)))
        job = Job("cb", 0.0, deadline, truth.default_profile("cb"))
        d = oracle_per_job(job, dev, truth)
        feasible = [c for c in clock_catalog(dev) if truth.time("cb", c) <= deadline]
        for c in feasible:
            # hand model: E = static * 1000 / f + 0.1 * 1000 * V^2 (u_c = 1)
            assert math.isclose(truth.energy("cb", c), static * 1000.0 / c.sm_clock + 100.0, rel_tol=1e-12)
        best = min(feasible, key=lambda c: (truth.energy("cb", c), truth.time("cb", c), c.sm_clock))
        assert d.chosen_clock == best
        if static > 0:
            assert best == dev.max_clock


class TestModelPredictor:
    @pytest.fixture(scope="class")
    @staticmethod
    def predictor(dataset):
        models = {t: fit_gbt(encode(dataset, dataset, t)[0], GBTConfig(40, 3, 0.1, 3.0)) for t in ("energy", "time")}
        from ddvfs.clustering import default_records
        km = fit_kmeans([r.features for r in default_records(dataset)], 5, seed=0)
        return ModelPredictor(models["energy"], models["time"], dataset, km)

    def test_predicts_every_clock_from_a_different_app(self, predictor, gpu):
        job = Job("SYRK", 0.0, 1.0, gpu.default_profile("SYRK"))
        clocks = clock_catalog(gpu.device)
        energy, time, match = predictor.predict(job, clocks)
        assert energy.shape == time.shape == (62,)
        assert np.all(np.isfinite(energy)) and np.all(time >= 0)
        assert match != "SYRK"

    def test_missing_data(self, predictor, gpu, dataset):
        lonely = ModelPredictor(predictor.energy_model, predictor.time_model,
                                dataset.subset(dataset.for_app("SYRK")), predictor.clustering)
        job = Job("SYRK", 0.0, 1.0, gpu.default_profile("SYRK"))
        with pytest.raises(MissingData):
            lonely.predict(job, clock_catalog(gpu.device))

    def test_requires_target_kinds(self, predictor, dataset):
        with pytest.raises(InvalidArgument):
            ModelPredictor(predictor.time_model, predictor.energy_model, dataset, predictor.clustering)

    def test_nearest_record_and_clock_substitution(self, dataset):
        recs = dataset.for_app("GEMM")
        target = ClockSet(1202, 715)
        near = nearest_record(recs, target)
        assert abs(near.clock.sm_clock - 1202) == min(abs(r.clock.sm_clock - 1202) for r in recs)
        fv = features_at(near, target)
        assert fv.numeric["sm_clock"] == 1202.0
        assert {k: v for k, v in fv.numeric.items() if k != "sm_clock"} == \
            {k: v for k, v in near.features.numeric.items() if k != "sm_clock"}


def test_dataset_fixture_has_default_profiles(dataset, gpu):
    assert isinstance(dataset, Dataset)
    for app in gpu.archetypes:
        assert dataset.at_clock(app, gpu.device.default_clock) == gpu.default_profile(app)


def test_default_suite_has_twelve(gpu):
    assert len(default_suite()) == len(gpu.archetypes) == 12
