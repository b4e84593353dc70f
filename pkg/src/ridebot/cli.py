"""Command-line front end: ``ridebot run | compare | sweep | validate | list``.

Each verb is a thin wrapper over a library function of the same name
(``cmd_run`` and friends), which tests call directly.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import scenario as sc_mod
from .metrics import Summary, TrialMetrics, format_table, summarize, summary_csv, trial_metrics
from .scenario import KINDS, ConfigError, Scenario
from .sim import TrajectoryLog

log = logging.getLogger("ridebot")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class MissingLogs(FileNotFoundError):
    pass


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"ridebot": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def load_scenario(name_or_path: str, overrides=(), trials: int | None = None, seed: int | None = None) -> Scenario:
    """Load, apply ``key.path=value`` overrides and re-validate."""
    sc = sc_mod.load(name_or_path)
    cfg = sc.config
    pairs = list(overrides)
    if trials is not None:
        pairs.append(("sim.trials", trials))
    if seed is not None:
        pairs.append(("sim.seed", seed))
    for key, value in pairs:
        cfg = sc_mod.set_path(cfg, key, value)
    return Scenario(sc.name, sc_mod.resolve(cfg) if pairs else cfg)


def _ordered(kinds):
    return sorted(kinds, key=KINDS.index)


@dataclass
class RunResult:
    scenario: Scenario
    logs: dict[str, list[TrajectoryLog]]
    summaries: dict[str, Summary]

    @property
    def all_aborted(self) -> bool:
        return all(lg.abort for logs in self.logs.values() for lg in logs)


def run_scenario_set(sc: Scenario, jobs: int = 1) -> RunResult:
    logs, summaries = {}, {}
    for kind in _ordered(sc.kinds()):
        logs[kind] = sc.run(kind, workers=jobs)
        summaries[kind] = summarize([trial_metrics(lg, *sc.window(lg)) for lg in logs[kind]])
    return RunResult(sc, logs, summaries)


def manifest_text(result: RunResult) -> str:
    sc = result.scenario
    doc = dict(sc.config)
    doc["manifest"] = {
        "scenario": sc.name,
        "versions": _versions(),
        "seeds": sc.seeds(),
        "gains": {k: list(sc.gains(k).as_tuple()) for k in _ordered(sc.kinds())},
        "aborts": {k: [lg.abort for lg in logs] for k, logs in result.logs.items()},
    }
    return "# Resolved scenario; runnable as-is with `ridebot run <this file>`.\n" + sc_mod.dump(doc)


def _abort_lines(result: RunResult) -> list[str]:
    out = []
    for kind, logs in result.logs.items():
        for i, lg in enumerate(logs):
            if lg.abort:
                out.append(f"{kind} trial {i}: aborted ({lg.abort}) at t={lg.abort_time:.4f} s")
    return out


def write_run(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for kind, logs in result.logs.items():
        d = out_dir / kind
        d.mkdir(exist_ok=True)
        for i, lg in enumerate(logs):
            lg.write_csv(d / f"trial_{i:03d}.csv")
    (out_dir / "manifest.yaml").write_text(manifest_text(result))
    text = format_table(result.summaries, ratios=True)
    aborts = _abort_lines(result)
    if aborts:
        text += "\n" + "\n".join(aborts) + "\n"
    (out_dir / "summary.txt").write_text(text)
    (out_dir / "summary.csv").write_text(summary_csv(result.summaries))


def cmd_run(scenario: str, out_dir, trials=None, seed=None, overrides=(), jobs=1, quiet=False) -> int:
    try:
        sc = load_scenario(scenario, overrides, trials, seed)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    result = run_scenario_set(sc, jobs)
    try:
        write_run(result, Path(out_dir))
    except OSError as exc:
        log.error("cannot write run directory %s: %s", out_dir, exc)
        return EXIT_FAILURE
    if not quiet:
        print(format_table(result.summaries, ratios=True), end="")
    for line in _abort_lines(result):
        log.warning("%s", line)
    if result.all_aborted:
        log.error("every trial aborted")
        return EXIT_FAILURE
    return EXIT_OK


def read_run(run_dir) -> tuple[Scenario, dict[str, list[TrajectoryLog]]]:
    """Load a run directory written by ``cmd_run``."""
    run_dir = Path(run_dir)
    manifest = run_dir / "manifest.yaml"
    if not manifest.is_file():
        raise MissingLogs(f"{run_dir}: no manifest.yaml")
    sc = Scenario(run_dir.name, sc_mod.load_text(manifest.read_text(), str(manifest)))
    logs = {}
    for kind in _ordered(sc.kinds()):
        files = sorted((run_dir / kind).glob("trial_*.csv"))
        if not files:
            raise MissingLogs(f"{run_dir}: no trial logs for {kind}")
        logs[kind] = [TrajectoryLog.read_csv(f) for f in files]
    return sc, logs


def compare_runs(run_dirs) -> dict[str, Summary]:
    runs = [(Path(d), *read_run(d)) for d in run_dirs]
    kinds = [k for _, _, logs in runs for k in logs]
    unique = len(kinds) == len(set(kinds))
    out = {}
    for path, sc, logs in runs:
        for kind, lgs in logs.items():
            label = kind if unique else f"{path.name}:{kind}"
            base, i = label, 2
            while label in out:
                label, i = f"{base}#{i}", i + 1
            out[label] = summarize([trial_metrics(lg, *sc.window(lg)) for lg in lgs])
    return out


def cmd_compare(run_dirs, out=None, quiet=False) -> int:
    if len(run_dirs) < 2:
        log.error("compare needs at least two run directories")
        return EXIT_CONFIG
    try:
        summaries = compare_runs(run_dirs)
    except (MissingLogs, ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    text = format_table(summaries, ratios=True)
    if out:
        Path(out).write_text(text)
    if not quiet:
        print(text, end="")
    return EXIT_OK


SWEEP_FIELDS = ["value", "kind", "status", "error", "n_aborted", "k_theta", "k_phi", "k_theta_dot", "k_phi_dot"]


def _sweep_point(base: dict, name: str, param: str, value) -> list[dict]:
    try:
        sc = Scenario(name, sc_mod.resolve(sc_mod.set_path(base, param, value)))
        result = run_scenario_set(sc)
    except Exception as exc:  # recorded per point so the sweep completes
        return [{"value": value, "kind": "", "status": "error", "error": f"{type(exc).__name__}: {exc}"}]
    rows = []
    for kind, s in result.summaries.items():
        row = {"value": value, "kind": kind, "status": "ok", "error": "",
               "n_aborted": sum(bool(lg.abort) for lg in result.logs[kind])}
        row.update(zip(SWEEP_FIELDS[5:], sc.gains(kind).as_tuple()))
        for f in TrialMetrics.field_names():
            row[f"{f}_mean"] = s.mean[f]
            row[f"{f}_sd"] = s.sd[f]
        rows.append(row)
    return rows


def sweep(sc: Scenario, param: str, values, jobs: int = 1) -> list[dict]:
    sc_mod.set_path(sc.config, param, None)  # fail fast on a bad path
    args = [(sc.config, sc.name, param, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_point, *zip(*args)))
    else:
        chunks = [_sweep_point(*a) for a in args]
    return [row for chunk in chunks for row in chunk]


def sweep_csv(rows) -> str:
    fields = SWEEP_FIELDS + [f"{f}_{s}" for f in TrialMetrics.field_names() for s in ("mean", "sd")]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def parse_values(text: str) -> list:
    return [yaml.safe_load(v) for v in text.split(",") if v.strip()]


def cmd_sweep(scenario, param, values, out_dir, trials=None, seed=None, overrides=(), jobs=1, quiet=False) -> int:
    try:
        sc = load_scenario(scenario, overrides, trials, seed)
        rows = sweep(sc, param, values, jobs)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = sweep_csv(rows)
    (out_dir / "sweep.csv").write_text(text)
    (out_dir / "manifest.yaml").write_text(
        "# Base scenario of the sweep.\n" + sc_mod.dump({**sc.config, "manifest": {
            "scenario": sc.name, "sweep": {"param": param, "values": list(values)}, "versions": _versions()}})
    )
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.warning("sweep point %s=%r failed: %s", param, r["value"], r["error"])
    if not quiet:
        print(text, end="")
    return EXIT_FAILURE if len(failed) == len(rows) else EXIT_OK


def cmd_validate(scenario, overrides=(), show=False) -> int:
    try:
        sc = load_scenario(scenario, overrides)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(sc_mod.dump(sc.config) if show else f"{sc.name}: ok")
    return EXIT_OK


def _override(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ridebot", description="Ballbot rider-interaction simulator.")
    sub = p.add_subparsers(dest="verb", required=True)

    def scenario_args(sp, with_run=True):
        sp.add_argument("scenario", help=f"scenario file, or a name in ${sc_mod.SCENARIO_DIR_ENV} or the bundled set")
        sp.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="override a config value, e.g. shared_control.v_lim=0.7")
        if with_run:
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--trials", type=int, help="number of trials (overrides sim.trials)")
            sp.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")
            sp.add_argument("--quiet", action="store_true")

    scenario_args(sub.add_parser("run", help="run a scenario's trial set"))
    sp = sub.add_parser("sweep", help="run a scenario over a grid of one parameter")
    scenario_args(sp)
    sp.add_argument("--param", required=True, help="dotted config path, e.g. rider.weight")
    sp.add_argument("--values", required=True, type=parse_values, help="comma-separated values (use --values=-1,2 when the first is negative)")
    sp = sub.add_parser("compare", help="side-by-side summary of run directories")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", help="also write the table to this file")
    sp.add_argument("--quiet", action="store_true")
    sp = sub.add_parser("validate", help="parse and resolve a scenario without running it")
    scenario_args(sp, with_run=False)
    sp.add_argument("--show", action="store_true", help="print the resolved config")
    sub.add_parser("list", help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="ridebot: %(levelname)s: %(message)s")
    if args.verb == "run":
        return cmd_run(args.scenario, args.out, args.trials, args.seed, args.overrides, args.jobs, args.quiet)
    if args.verb == "sweep":
        return cmd_sweep(args.scenario, args.param, args.values, args.out, args.trials, args.seed,
                         args.overrides, args.jobs, args.quiet)
    if args.verb == "compare":
        return cmd_compare(args.run_dirs, args.out, args.quiet)
    if args.verb == "validate":
        return cmd_validate(args.scenario, args.overrides, args.show)
    print("\n".join(sc_mod.bundled_names()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
