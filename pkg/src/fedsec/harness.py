"""Experiment runner and run-directory summaries.

A run directory holds:

``rounds.csv``
    one row per round, columns ``ROUND_COLUMNS``; byte-deterministic for a
    given config and seed.
``tasks.csv``
    one row per task, columns ``TASK_COLUMNS``.
``timing.csv``
    ``task,round,wall_ms``; only when ``record_timing`` is set, since wall
    time would break byte-identical reruns.
``manifest.json`` and ``config.toml``
    the resolved config, seed and package version.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_to_dict, load_config, save_config, validate
from .errors import ConfigError, ConsistencyError, FormatError, SchemaMismatchError
from .simulation import RoundRecord, Simulation

ROUND_COLUMNS = ("task", "round", "step", "selected", "attacked", "verdicts", "accuracy",
                 "fees_paid", "benign_count", "utility", "epsilon", "agent_loss")
TASK_COLUMNS = ("task", "rounds", "final_accuracy", "mean_utility", "benign_total")
TIMING_COLUMNS = ("task", "round", "wall_ms")
SUMMARY_COLUMNS = ("defense", "policy", "vulnerable_count", "runs", "tasks",
                   "final_accuracy", "mean_utility", "last_quartile_accuracy",
                   "last_quartile_utility")
MOVING_AVERAGE_WINDOW = 100


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def round_row(rec: RoundRecord) -> list[str]:
    return [_fmt(getattr(rec, c)) for c in ROUND_COLUMNS]


@dataclass
class RunResult:
    out_dir: Path
    records: list[RoundRecord]
    task_rows: list[dict]


class _CsvSink:
    def __init__(self, path: Path, columns):
        self.handle = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.handle, lineterminator="\n")
        self.writer.writerow(columns)

    def write(self, row):
        self.writer.writerow(row)

    def flush(self):
        self.handle.flush()

    def close(self):
        self.handle.close()


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int | None = None,
                   keep_records: bool = True) -> RunResult:
    """Run every task of ``config`` and write the run directory.

    Records are flushed after each task; on any error the rows written so far
    are flushed before the exception propagates.
    """
    problems = validate(config)
    if problems:
        raise ConfigError("invalid configuration", problems)
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.toml")
    manifest = {"fedsec_version": __version__, "seed": config.seed,
                "config": config_to_dict(config), "complete": False}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    sim = Simulation(config, workers=workers)
    rounds = _CsvSink(out / "rounds.csv", ROUND_COLUMNS)
    tasks = _CsvSink(out / "tasks.csv", TASK_COLUMNS)
    timing = _CsvSink(out / "timing.csv", TIMING_COLUMNS) if config.record_timing else None
    records: list[RoundRecord] = []
    task_rows = []
    try:
        for task in range(config.task_count):
            utilities = []
            benign = 0
            last = None
            for rec in sim.run_task(task):
                rounds.write(round_row(rec))
                if timing is not None:
                    timing.write([rec.task, rec.round, f"{rec.wall_ms:.3f}"])
                utilities.append(rec.utility)
                benign += rec.benign_count
                last = rec
                if keep_records:
                    records.append(rec)
            row = {"task": task, "rounds": len(utilities),
                   "final_accuracy": last.accuracy if last else float("nan"),
                   "mean_utility": float(np.mean(utilities)) if utilities else float("nan"),
                   "benign_total": benign}
            tasks.write([_fmt(row[c]) for c in TASK_COLUMNS])
            task_rows.append(row)
            for sink in (rounds, tasks, timing):
                if sink is not None:
                    sink.flush()
    finally:
        for sink in (rounds, tasks, timing):
            if sink is not None:
                sink.flush()
                sink.close()
        sim.close()
    manifest["complete"] = True
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(out, records, task_rows)


def run_config_file(path, seed: int | None = None, out_dir=None,
                    workers: int | None = None) -> RunResult:
    config = load_config(path)
    if seed is not None:
        config = config.replace(seed=seed)
    return run_experiment(config, out_dir, workers, keep_records=False)


# ---------------------------------------------------------------------------
# summaries

def moving_average(values, window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """Trailing means over full windows only; empty when fewer than ``window`` values."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ConfigError("moving-average window must be >= 1")
    if v.size < window:
        return np.empty(0)
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def _read_csv(path: Path, columns) -> list[dict]:
    if not path.exists():
        raise FormatError(f"{path} is missing")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path} is empty")
        if tuple(header) != tuple(columns):
            raise SchemaMismatchError(
                f"{path} has columns {header}, expected {list(columns)}")
        return [dict(zip(header, row)) for row in reader]


@dataclass
class RunSummary:
    key: tuple[str, str, int]
    tasks: list[dict]
    utilities: np.ndarray


def load_run(run_dir) -> RunSummary:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    cfg = manifest.get("config", {})
    try:
        key = (cfg["defense"]["strategy"], cfg["selection"]["policy"],
               int(cfg["topology"]["vulnerable_count"]))
    except (KeyError, TypeError, ValueError):
        raise SchemaMismatchError(f"{manifest_path} does not describe a fedsec run") from None
    tasks = _read_csv(run_dir / "tasks.csv", TASK_COLUMNS)
    rounds = _read_csv(run_dir / "rounds.csv", ROUND_COLUMNS)
    if not tasks:
        raise ConsistencyError(f"{run_dir} has no completed task")
    utilities = np.array([float(r["utility"]) for r in rounds])
    return RunSummary(key, tasks, utilities)


def summarize(run_dirs) -> tuple[list[dict], dict]:
    """Aggregate run directories by (defense, policy, vulnerable_count).

    Returns the table rows and, per key, the moving-average reward series of
    each run. Last-quartile columns use only the final quarter of each run's
    tasks (at least one).
    """
    groups: dict[tuple, list[RunSummary]] = defaultdict(list)
    for d in run_dirs:
        s = load_run(d)
        groups[s.key].append(s)
    rows = []
    series = {}
    for key in sorted(groups):
        runs = groups[key]
        acc, util, lq_acc, lq_util = [], [], [], []
        for r in runs:
            t_acc = [float(t["final_accuracy"]) for t in r.tasks]
            t_util = [float(t["mean_utility"]) for t in r.tasks]
            acc += t_acc
            util += t_util
            q = max(1, math.ceil(len(r.tasks) / 4))
            lq_acc += t_acc[-q:]
            lq_util += t_util[-q:]
        rows.append({"defense": key[0], "policy": key[1], "vulnerable_count": key[2],
                     "runs": len(runs), "tasks": len(acc),
                     "final_accuracy": float(np.mean(acc)), "mean_utility": float(np.mean(util)),
                     "last_quartile_accuracy": float(np.mean(lq_acc)),
                     "last_quartile_utility": float(np.mean(lq_util))})
        series[key] = [moving_average(r.utilities) for r in runs]
    return rows, series


def format_summary(rows: list[dict]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in rows:
        lines.append(",".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c])
                              for c in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


def write_series(series: dict, path) -> None:
    """Moving-average reward curves, long format: defense,policy,vulnerable_count,run,index,value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["defense", "policy", "vulnerable_count", "run", "index", "value"])
        for key, curves in series.items():
            for run, curve in enumerate(curves):
                for i, v in enumerate(curve):
                    w.writerow([*key, run, i, repr(float(v))])
