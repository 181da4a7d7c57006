import csv
import json

import pytest

from ddvfs.cli import EXIT_DATA, EXIT_IO, EXIT_MISSING, EXIT_OK, main


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def ok(*argv):
    assert main([str(a) for a in argv]) == EXIT_OK


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    ok("gen", "--out", root / "gen")
    data = root / "gen" / "dataset.csv"
    ok("train", "--data", data, "--out", root / "train", "--models", "ols,gbt", "--iterations", 200)
    ok("cluster", "--data", data, "--out", root / "cluster")
    ok("schedule", "--data", data, "--models", root / "train" / "models", "--clusters",
       root / "cluster" / "kmeans.json", "--policies", "dc,mc,d_dvfs,oracle", "--out", root / "schedule")
    return root


class TestGen:
    def test_row_counts(self, pipeline, tmp_path):
        assert len(rows(pipeline / "gen" / "dataset.csv")) == 372
        ok("gen", "--out", tmp_path, "--stride", 1)
        assert len(rows(tmp_path / "dataset.csv")) == 744

    def test_rerun_identical_anywhere(self, pipeline, tmp_path):
        ok("gen", "--out", tmp_path)
        for name in ("dataset.csv", "manifest.json"):
            assert (tmp_path / name).read_bytes() == (pipeline / "gen" / name).read_bytes()

    def test_manifest_digests(self, pipeline):
        manifest = json.loads((pipeline / "gen" / "manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert set(manifest["files"]) == {"dataset.csv"}
        assert len(manifest["config_hash"]) == 64

    def test_seed_changes_noise(self, pipeline, tmp_path):
        ok("gen", "--out", tmp_path, "--seed", 3)
        assert (tmp_path / "dataset.csv").read_bytes() != (pipeline / "gen" / "dataset.csv").read_bytes()


class TestTrain:
    def test_metrics_and_models(self, pipeline):
        metrics = rows(pipeline / "train" / "metrics.csv")
        assert {(m["model"], m["target"]) for m in metrics} == {
            ("ols", "energy"), ("ols", "time"), ("gbt", "energy"), ("gbt", "time")}
        assert all(m["n_train"] == "260" and m["n_test"] == "112" for m in metrics)
        for kind in ("ols", "gbt"):
            for target in ("energy", "time"):
                model = json.loads((pipeline / "train" / "models" / f"{kind}_{target}.json").read_text())
                assert model["info"]["provenance"]["command"] == "train"

    def test_leave_one_app_out(self, pipeline, tmp_path):
        ok("train", "--data", pipeline / "gen" / "dataset.csv", "--out", tmp_path, "--models", "ols",
           "--loo", "2MM")
        assert {m["n_test"] for m in rows(tmp_path / "metrics.csv")} == {"31"}

    def test_grid_and_reports(self, pipeline, tmp_path):
        ok("train", "--data", pipeline / "gen" / "dataset.csv", "--out", tmp_path, "--models", "gbt",
           "--targets", "time", "--grid", "default", "--importance", "--threshold")
        assert len(rows(tmp_path / "grid_time.csv")) == 54
        importance = rows(tmp_path / "importance_time.csv")
        assert [r["rank"] for r in importance] == [str(i) for i in range(1, len(importance) + 1)]
        assert rows(tmp_path / "threshold_time.csv")

    def test_bad_model_list(self, pipeline, tmp_path):
        assert main(["train", "--data", str(pipeline / "gen" / "dataset.csv"), "--out", str(tmp_path),
                     "--models", "svm"]) == EXIT_DATA


class TestCluster:
    def test_outputs(self, pipeline):
        corr = rows(pipeline / "cluster" / "clusters.csv")
        assert len(corr) == 12
        assert all(r["matched_app"] != r["app_id"] for r in corr)
        model = json.loads((pipeline / "cluster" / "kmeans.json").read_text())
        assert set(model["dropped"]) == {"sm_clock", "mem_clock"}
        assert [int(r["k"]) for r in rows(pipeline / "cluster" / "wsse.csv")] == list(range(1, 11))

    def test_fixed_k(self, pipeline, tmp_path):
        ok("cluster", "--data", pipeline / "gen" / "dataset.csv", "--out", tmp_path, "--k", 4)
        assert json.loads((tmp_path / "kmeans.json").read_text())["k"] == 4


class TestSchedule:
    def test_policies_and_comparison(self, pipeline):
        cmp = {r["policy"]: r for r in rows(pipeline / "schedule" / "comparison.csv")}
        assert set(cmp) == {"default_clock", "max_clock", "d_dvfs", "oracle"}
        for policy in cmp:
            report = json.loads((pipeline / "schedule" / f"report_{policy}.json").read_text())
            assert report["jobs"] == 12
            assert float(cmp[policy]["total_energy_ws"]) == pytest.approx(report["total_energy_ws"], rel=1e-8)
        assert float(cmp["d_dvfs"]["total_energy_ws"]) < float(cmp["default_clock"]["total_energy_ws"])
        assert float(cmp["d_dvfs"]["total_energy_ws"]) < float(cmp["max_clock"]["total_energy_ws"])

    def test_decisions_file(self, pipeline):
        decisions = rows(pipeline / "schedule" / "decisions_d_dvfs.csv")
        assert {d["mode"] for d in decisions} == {"text_semantics"}
        assert {d["sm_clock"] for d in rows(pipeline / "schedule" / "decisions_max_clock.csv")} == {"1328"}

    def test_literal_mode_recorded(self, pipeline, tmp_path):
        ok("schedule", "--data", pipeline / "gen" / "dataset.csv", "--models", pipeline / "train" / "models",
           "--clusters", pipeline / "cluster" / "kmeans.json", "--policies", "d_dvfs", "--mode",
           "literal_pseudocode", "--out", tmp_path)
        assert {d["mode"] for d in rows(tmp_path / "decisions_d_dvfs.csv")} == {"literal_pseudocode"}
        report = json.loads((tmp_path / "report_d_dvfs.json").read_text())
        assert report["mode"] == "literal_pseudocode"

    def test_baselines_need_no_artifacts(self, tmp_path):
        ok("schedule", "--policies", "dc,mc", "--out", tmp_path, "--jobs-per-app", 2)
        assert len(rows(tmp_path / "workload.csv")) == 24

    def test_missing_models(self, pipeline, tmp_path):
        code = main(["schedule", "--data", str(pipeline / "gen" / "dataset.csv"), "--policies", "d_dvfs",
                     "--clusters", str(pipeline / "cluster" / "kmeans.json"), "--out", str(tmp_path)])
        assert code == EXIT_MISSING

    def test_missing_cluster_file(self, pipeline, tmp_path):
        code = main(["schedule", "--data", str(pipeline / "gen" / "dataset.csv"), "--policies", "d_dvfs",
                     "--models", str(pipeline / "train" / "models"), "--clusters", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_MISSING


class TestReport:
    def test_report(self, pipeline, tmp_path):
        ok("report", "--runs", pipeline / "schedule", "--train", pipeline / "train", "--out", tmp_path)
        cmp = rows(tmp_path / "comparison.csv")
        assert len(cmp) == 4
        long = rows(tmp_path / "plot_long.csv")
        assert any(r["metric"] == "test_rmse" for r in long)
        assert any(r["metric"] == "completion_ratio" for r in long)

    def test_nothing_to_report(self, tmp_path):
        assert main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_MISSING


class TestExitCodes:
    def test_missing_input_file(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_IO

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("app_id,sm_clock\nx,1189\n")
        assert main(["cluster", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "none.ini"), "gen", "--out", str(tmp_path)]) == EXIT_IO

    def test_bad_config_key(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[gen]\ncolour = blue\n")
        assert main(["--config", str(ini), "gen", "--out", str(tmp_path)]) == EXIT_DATA


class TestConfigFile:
    def test_defaults_from_ini(self, pipeline, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(f"[train]\ndata = {pipeline / 'gen' / 'dataset.csv'}\nmodels = ols\n"
                       "test_fraction = 0.5\nrefit_all = true\n")
        ok("--config", ini, "train", "--out", tmp_path / "t")
        metrics = rows(tmp_path / "t" / "metrics.csv")
        assert {m["model"] for m in metrics} == {"ols"}
        assert {m["n_test"] for m in metrics} == {"186"}

    def test_command_line_wins(self, pipeline, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[gen]\nstride = 1\n")
        ok("--config", ini, "gen", "--out", tmp_path / "g", "--stride", 2)
        assert len(rows(tmp_path / "g" / "dataset.csv")) == 372
