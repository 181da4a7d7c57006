"""Command-line front end.

Subcommands::

    ddvfs gen       synthetic profiling dataset
    ddvfs train     energy/time models, RMSE table, importance and threshold reports
    ddvfs cluster   k-means over default-clock profiles and correlation table
    ddvfs schedule  workload generation, policies, simulation and comparison
    ddvfs report    comparison and plot-ready tables from earlier runs

Every command writes into ``--out`` and finishes with ``manifest.json``,
which records the config hash, seeds and a sha256 per output file. Output
locations do not enter the config hash, so the same config rerun anywhere
gives byte-identical files.

A ``--config`` INI file may hold defaults, one section per subcommand with
keys named like the long options (``test_fraction = 0.3``).

Exit codes: 0 success, 1 internal error, 2 I/O error, 3 bad data,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .clustering import (
    KMeansModel,
    correlate_all,
    default_records,
    fit_kmeans,
    select_k,
    write_correlations_csv,
)
from .core import Dataset, DeviceSpec, InvalidArgument, p100_like, rmse
from .ingest import SplitSpec, encode, format_real, parse_csv, split, write_csv
from .models import (
    DEFAULT_GRID,
    FittedModel,
    GBTConfig,
    feature_importance,
    fit_gbt,
    fit_lasso,
    fit_ols,
    grid_search,
    predict,
    threshold_analysis,
)
from .scheduler import (
    MODES,
    OBJECTIVES,
    ModelPredictor,
    PolicyKind,
    WorkloadGenConfig,
    generate_workload,
    schedule_baseline,
    schedule_d_dvfs,
    schedule_oracle,
)
from .simulator import (
    compare,
    compare_totals,
    report_json,
    simulate,
    truth_executor,
    write_comparison_csv,
    write_long_csv,
    write_outcomes_csv,
)
from .synthdata import (
    SyntheticGPU,
    default_suite,
    default_voltage_table,
    load_device,
    load_suite,
    suite_hash,
)

EXIT_OK, EXIT_INTERNAL, EXIT_IO, EXIT_DATA, EXIT_MISSING = 0, 1, 2, 3, 4

POLICY_ALIASES = {"dc": "default_clock", "mc": "max_clock", "ddvfs": "d_dvfs"}


class MissingArtifact(Exception):
    pass


class Run:
    """Output directory bookkeeping: files written, provenance, manifest."""

    def __init__(self, command: str, out: str, config: dict, seeds: dict):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.seeds = seeds
        text = json.dumps({"command": command, "config": config}, sort_keys=True)
        self.config_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
        self.files: list[str] = []

    @property
    def provenance(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash, "seeds": self.seeds}

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8", newline="")

    def write_json(self, name: str, data: dict) -> None:
        self.write_text(name, json.dumps(data, sort_keys=True, indent=1) + "\n")

    def write_rows(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[_cell(v) for v in row] for row in rows])

    def finish(self) -> None:
        digests = {name: _sha256(self.out / name) for name in sorted(set(self.files))}
        self.write_json("manifest.json", {**self.provenance, "config": self.config, "files": digests})


def _cell(value) -> str:
    if isinstance(value, float):
        return format_real(value)
    if value is None:
        return ""
    return str(value)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _device(args) -> tuple[DeviceSpec, object]:
    if args.device:
        return load_device(args.device)
    device = p100_like()
    return device, default_voltage_table(device)


def _suite(args):
    return load_suite(args.suite) if args.suite else default_suite()


def _input_digest(path: str | None) -> str | None:
    return _sha256(Path(path)) if path else None


def _common_config(args) -> dict:
    return {"device_sha256": _input_digest(args.device),
            "suite_sha256": _input_digest(getattr(args, "suite", None))}


def _load_data(args) -> Dataset:
    device, _ = _device(args)
    return parse_csv(args.data, device)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> None:
    device, table = _device(args)
    suite = _suite(args)
    if args.seed:
        suite = [replace(a, noise_seed=a.noise_seed + args.seed) for a in suite]
    gpu = SyntheticGPU(suite, device, table)
    dataset = gpu.dataset(args.stride)
    run = Run("gen", args.out, {**_common_config(args), "stride": args.stride,
                                "archetype_hash": suite_hash(suite)}, {"seed": args.seed})
    write_csv(dataset, run.path("dataset.csv"))
    run.finish()
    print(f"wrote {len(dataset)} records to {run.out / 'dataset.csv'}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _fit(kind: str, train, config: GBTConfig, lam: float) -> FittedModel:
    if kind == "ols":
        return fit_ols(train)
    if kind == "lasso":
        return fit_lasso(train, lam)
    return fit_gbt(train, config)


def _with_provenance(model: FittedModel, run: Run) -> FittedModel:
    return replace(model, info={**model.info, "provenance": run.provenance})


def cmd_train(args) -> None:
    dataset = _load_data(args)
    kinds = _csv_list(args.models, ("ols", "lasso", "gbt"))
    targets = _csv_list(args.targets, ("energy", "time"))
    spec = (SplitSpec.leave_one_app_out(args.loo, args.seed) if args.loo
            else SplitSpec.fraction(args.test_fraction, args.seed))
    base_cfg = GBTConfig(args.iterations, args.depth, args.learning_rate, args.l2_leaf_reg, args.seed)
    config = {**_common_config(args), "data_sha256": _input_digest(args.data), "models": kinds,
              "targets": targets, "split": asdict(spec), "gbt": asdict(base_cfg), "grid": args.grid,
              "lasso_lambda": args.lasso_lambda, "importance": args.importance,
              "threshold": args.threshold, "refit_all": args.refit_all}
    run = Run("train", args.out, config, {"split_seed": args.seed, "model_seed": args.seed,
                                          "encoding_seed": args.seed})
    train, test = split(dataset, spec)
    metrics = []
    for target in targets:
        enc_train, enc_test = encode(train, test, target, seed=args.seed)
        run.write_text(f"encoding_{target}.json", json.dumps(enc_train.meta.to_dict(), indent=1,
                                                            sort_keys=True) + "\n")
        cfg = base_cfg
        if "gbt" in kinds and args.grid == "default":
            fit_part, val_part = split(train, SplitSpec.fraction(0.3, args.seed + 1))
            g_train, g_val = encode(fit_part, val_part, target, seed=args.seed)
            cfg, _, results = grid_search(g_train, g_val, DEFAULT_GRID, seed=args.seed)
            run.write_rows(f"grid_{target}.csv", ["iterations", "depth", "learning_rate", "l2_leaf_reg",
                                                  "validation_rmse"],
                           [[c.iterations, c.depth, c.learning_rate, c.l2_leaf_reg, r] for c, r in results])
        for kind in kinds:
            model = _fit(kind, enc_train, cfg, args.lasso_lambda)
            train_rmse = rmse(list(enc_train.target), list(predict(model, enc_train)))
            test_rmse = rmse(list(enc_test.target), list(predict(model, enc_test))) if len(test) else None
            metrics.append([kind, target, train_rmse, test_rmse, len(train), len(test)])
            if args.refit_all:
                full, _ = encode(dataset, dataset.subset([]), target, seed=args.seed)
                model = _fit(kind, full, cfg, args.lasso_lambda)
            _with_provenance(model, run).save(run.path(f"models/{kind}_{target}.json"))
        if args.importance or args.threshold:
            report = feature_importance(enc_train, enc_test, cfg)
            run.write_rows(f"importance_{target}.csv", ["rank", "feature", "fi_score"],
                           [[i + 1, name, score] for i, (name, score) in enumerate(report.entries)])
            if args.threshold:
                curve = threshold_analysis(enc_train, enc_test, report, cfg)
                run.write_rows(f"threshold_{target}.csv", ["k", "rmse"], curve)
    run.write_rows("metrics.csv", ["model", "target", "train_rmse", "test_rmse", "n_train", "n_test"], metrics)
    run.finish()
    for row in metrics:
        print(f"{row[0]:6s} {row[1]:7s} test RMSE {_cell(row[3])}")


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------

def cmd_cluster(args) -> None:
    dataset = _load_data(args)
    points = [r.features for r in default_records(dataset)]
    if not points:
        raise MissingArtifact("dataset has no records at the device default clock")
    config = {**_common_config(args), "data_sha256": _input_digest(args.data), "k": args.k,
              "k_min": args.k_min, "k_max": args.k_max, "restarts": args.restarts}
    run = Run("cluster", args.out, config, {"seed": args.seed})
    if args.k:
        model = fit_kmeans(points, args.k, seed=args.seed)
        curve = [(args.k, model.wsse)]
    else:
        k_max = min(args.k_max, len(points))
        k, curve, models = select_k(points, range(args.k_min, k_max + 1), seed=args.seed,
                                    restarts=args.restarts)
        model = models[k]
    data = model.to_dict()
    data["provenance"] = run.provenance
    run.write_json("kmeans.json", data)
    run.write_rows("wsse.csv", ["k", "wsse"], curve)
    write_correlations_csv(correlate_all(model, dataset), run.path("clusters.csv"))
    run.finish()
    print(f"k = {model.k}; warnings: {'; '.join(model.warnings) or 'none'}")


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def _policies(text: str) -> list[PolicyKind]:
    out = []
    for name in text.split(","):
        name = name.strip()
        out.append(PolicyKind(POLICY_ALIASES.get(name, name)))
    return out


def _load_predictor(args, catalog: Dataset) -> ModelPredictor:
    if not args.models:
        raise MissingArtifact("d_dvfs needs --models")
    if not args.clusters:
        raise MissingArtifact("d_dvfs needs --clusters")
    paths = {t: Path(args.models) / f"{args.model_kind}_{t}.json" for t in ("energy", "time")}
    for p in [*paths.values(), Path(args.clusters)]:
        if not p.is_file():
            raise MissingArtifact(f"missing artifact: {p}")
    return ModelPredictor(FittedModel.load(paths["energy"]), FittedModel.load(paths["time"]), catalog,
                          KMeansModel.from_dict(json.loads(Path(args.clusters).read_text(encoding="utf-8"))))


def _pair(text: str) -> tuple[float, float]:
    lo, hi = (float(x) for x in text.split(","))
    return (lo, hi)


def cmd_schedule(args) -> None:
    policies = _policies(args.policies)
    device, table = _device(args)
    suite = _suite(args)
    gpu = SyntheticGPU(suite, device, table)
    predictor = None
    if PolicyKind.D_DVFS in policies:
        if not args.data:
            raise MissingArtifact("d_dvfs needs --data for the correlation catalog")
        predictor = _load_predictor(args, _load_data(args))
    gen = WorkloadGenConfig(_pair(args.arrival_range), _pair(args.deadline_range), args.distribution,
                            args.seed, args.jobs_per_app)
    config = {**_common_config(args), "data_sha256": _input_digest(args.data),
              "models_sha256": {p.name: _sha256(p) for p in sorted(Path(args.models).glob("*.json"))}
              if args.models and Path(args.models).is_dir() else None,
              "clusters_sha256": _input_digest(args.clusters) if args.clusters else None,
              "policies": [p.value for p in policies], "mode": args.mode, "objective": args.objective,
              "fallback": args.fallback, "serial": not args.independent, "model_kind": args.model_kind,
              "workload": asdict(gen)}
    run = Run("schedule", args.out, config, {"workload_seed": args.seed})
    workload = generate_workload([gpu.default_profile(a.app_id) for a in suite], device, gen)
    run.write_rows("workload.csv", ["job_index", "app_id", "arrival_s", "deadline_s", "default_time_s"],
                   [[i, j.app_id, j.arrival_s, j.deadline_s, j.default_profile.time_s]
                    for i, j in enumerate(workload.jobs)])
    execute = truth_executor(gpu)
    reports = []
    for policy in policies:
        if policy == PolicyKind.D_DVFS:
            decisions = schedule_d_dvfs(workload, predictor, args.mode, args.objective, args.fallback,
                                        serial=not args.independent, execute=execute)
        elif policy == PolicyKind.ORACLE:
            decisions = schedule_oracle(workload, gpu, execute)
        else:
            decisions = schedule_baseline(workload, policy, execute)
        report = simulate(decisions, gpu, policy.value)
        reports.append(report)
        mode = args.mode if policy == PolicyKind.D_DVFS else ""
        run.write_rows(f"decisions_{policy.value}.csv",
                       ["job_index", "app_id", "status", "sm_clock", "mem_clock", "predicted_energy_ws",
                        "predicted_time_s", "budget_s", "fallback", "matched_app", "mode"],
                       [[d.job_index, d.job.app_id, d.status,
                         d.chosen_clock.sm_clock if d.chosen_clock else None,
                         d.chosen_clock.mem_clock if d.chosen_clock else None,
                         d.predicted_energy_ws, d.predicted_time_s, d.budget_s, int(d.fallback),
                         d.matched_app, mode] for d in decisions])
        write_outcomes_csv(report, run.path(f"outcomes_{policy.value}.csv"))
        run.write_text(f"report_{policy.value}.json",
                       report_json(report, {"mode": mode, "provenance": run.provenance}))
    table_ = compare(reports)
    write_comparison_csv(table_, run.path("comparison.csv"))
    write_long_csv(reports, run.path("plot_long.csv"))
    run.finish()
    for row in table_.rows:
        print(f"{row['policy']:14s} total {row['total_energy_ws']:.2f} W.s  misses {row['miss_count']}"
              f"  rejected {row['rejected_count']}")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> None:
    runs = Path(args.runs)
    files = sorted(runs.glob("report_*.json"))
    if not files:
        raise MissingArtifact(f"no report_*.json under {runs}")
    summaries = [json.loads(p.read_text(encoding="utf-8")) for p in files]
    config = {"reports_sha256": {p.name: _sha256(p) for p in files},
              "metrics_sha256": _input_digest(str(Path(args.train) / "metrics.csv")) if args.train else None}
    run = Run("report", args.out, config, {})
    keys = ("policy", "total_energy_ws", "mean_energy_ws", "miss_count", "rejected_count", "error_count")
    table = compare_totals([{k: s[k] for k in keys} for s in summaries])
    write_comparison_csv(table, run.path("comparison.csv"))
    rows = []
    for s in summaries:
        for o in s["outcomes"]:
            if o["completion_ratio"] is not None:
                rows.append([s["policy"], o["app_id"], "completion_ratio", o["completion_ratio"]])
                rows.append([s["policy"], o["app_id"], "actual_energy_ws", o["actual_energy_ws"]])
    if args.train:
        metrics = Path(args.train) / "metrics.csv"
        if not metrics.is_file():
            raise MissingArtifact(f"missing artifact: {metrics}")
        with open(metrics, encoding="utf-8", newline="") as fh:
            for m in csv.DictReader(fh):
                if m["test_rmse"]:
                    rows.append([m["model"], m["target"], "test_rmse", float(m["test_rmse"])])
    run.write_rows("plot_long.csv", ["series", "item", "metric", "value"], rows)
    run.finish()
    for (a, b), v in sorted(table.savings.items()):
        print(f"{a} saves {v:.2f}% vs {b}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _csv_list(text: str, allowed) -> list[str]:
    items = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in items if x not in allowed]
    if bad or not items:
        raise InvalidArgument(f"expected a comma list from {', '.join(allowed)}, got {text!r}")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddvfs", description="Deadline-aware data-driven GPU DVFS toolkit.")
    parser.add_argument("--config", help="INI file with per-subcommand defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--device", help="device INI file (default: built-in P100-like)")
        if data:
            p.add_argument("--data", required=True, help="profiling CSV")

    p = sub.add_parser("gen", help="generate a synthetic profiling dataset")
    common(p, data=False)
    p.add_argument("--suite", help="archetype suite INI file (default: built-in 12 apps)")
    p.add_argument("--stride", type=int, default=2, help="keep every n-th catalog clock")
    p.add_argument("--seed", type=int, default=0, help="offset added to every archetype noise seed")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and evaluate energy/time models")
    common(p)
    p.add_argument("--models", default="ols,lasso,gbt")
    p.add_argument("--targets", default="energy,time")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--loo", metavar="APP", help="hold out one application instead of a random split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lasso-lambda", type=float, default=1.0)
    p.add_argument("--grid", choices=("none", "default"), default="none")
    p.add_argument("--iterations", type=int, default=1200)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2-leaf-reg", type=float, default=5.0)
    p.add_argument("--importance", action="store_true", help="write drop-column importance")
    p.add_argument("--threshold", action="store_true", help="write top-k threshold curve")
    p.add_argument("--refit-all", action="store_true", help="save models refit on every record")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="cluster default-clock profiles and correlate apps")
    common(p)
    p.add_argument("--k", type=int, help="fixed k (default: elbow over --k-min..--k-max)")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("schedule", help="run policies on a generated workload and simulate")
    common(p, data=False)
    p.add_argument("--data", help="profiling CSV used as the correlation catalog (d_dvfs)")
    p.add_argument("--suite", help="archetype suite INI file for the ground truth")
    p.add_argument("--models", help="directory with <kind>_energy.json and <kind>_time.json")
    p.add_argument("--model-kind", default="gbt", choices=("ols", "lasso", "gbt"))
    p.add_argument("--clusters", help="kmeans.json from the cluster command")
    p.add_argument("--policies", default="default_clock,max_clock,d_dvfs")
    p.add_argument("--mode", choices=MODES, default="text_semantics")
    p.add_argument("--objective", choices=OBJECTIVES, default="energy")
    p.add_argument("--fallback", action="store_true", help="run infeasible jobs at the fastest clock")
    p.add_argument("--independent", action="store_true", help="budget each job by its own deadline only")
    p.add_argument("--distribution", choices=("truncated_normal", "uniform"), default="truncated_normal")
    p.add_argument("--arrival-range", default="1,50")
    p.add_argument("--deadline-range", default="1,2")
    p.add_argument("--jobs-per-app", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("report", help="summarise schedule (and train) outputs")
    p.add_argument("--runs", required=True, help="schedule output directory")
    p.add_argument("--train", help="train output directory (adds the RMSE table)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    ini = configparser.ConfigParser()
    if not ini.read(known.config, encoding="utf-8"):
        raise FileNotFoundError(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sub in subparsers.choices.items():
        if not ini.has_section(name):
            continue
        types = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in ini[name].items():
            dest = key.replace("-", "_")
            action = types.get(dest)
            if action is None:
                raise ValueError(f"unknown option {key!r} in [{name}]")
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = ini[name].getboolean(key)
            else:
                defaults[dest] = action.type(value) if action.type else value
                action.required = False
        sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, configparser.Error) as exc:
        print(f"error: bad config file: {exc}", file=sys.stderr)
        return EXIT_DATA
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
