"""Seeded experiment grids: run, aggregate, and persist results.

A run executes every ``(strategy, n_target, seed)`` cell of a config.  The
source model (and its prune mask / allocated weights) is built once per seed
and shared by all cells of that seed; each cell draws from its own stream
keyed on ``(seed, task, param, strategy, n_target)``, so adding or removing
strategies never changes another cell's numbers.
"""

import csv
import io
import json
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (DEFAULT_BUDGETS, DEFAULT_LAMBDA, DEFAULT_NETWORKS, DEFAULT_PARAM,
                          make_experiment)
from .optim import TrainConfig
from .rng import stream
from .transfer import STRATEGIES, TransferStrategy, run_strategy

CSV_HEADER = ["task", "strategy", "param", "n_target", "seed", "metric", "value", "flag",
              "wall_ms"]


def _train_config(d):
    if isinstance(d, TrainConfig):
        return d
    return TrainConfig(**d)


@dataclass
class ExperimentConfig:
    task: str
    strategies: list
    n_targets: list
    seeds: list
    param: str = None
    prune_ratio: float = 0.8
    lam: float = None
    budgets: dict = None
    network: dict = None
    options: dict = field(default_factory=dict)
    out_dir: str = None
    record_timing: bool = False
    save_checkpoints: bool = True

    def __post_init__(self):
        if self.task not in DEFAULT_BUDGETS:
            raise ValueError(f"unknown task {self.task!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ValueError("prune ratio must be in [0, 1)")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.param is None:
            self.param = DEFAULT_PARAM[self.task]
        self.param = str(self.param)
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA[self.task]
        budgets = dict(DEFAULT_BUDGETS[self.task])
        for k, v in (self.budgets or {}).items():
            if k not in budgets:
                raise ValueError(f"unknown budget stage {k!r}")
            budgets[k] = _train_config(v)
        self.budgets = budgets
        self.network = {**DEFAULT_NETWORKS[self.task], **(self.network or {})}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def resolved(self):
        d = asdict(self)
        d["budgets"] = {k: v.to_dict() for k, v in self.budgets.items()}
        return d


@dataclass
class ExperimentRecord:
    task: str
    strategy: str
    param: str
    n_target: int
    seed: int
    metric: str
    value: float
    flag: str = ""
    wall_ms: float = None

    def row(self, timing):
        wall = "" if not timing or self.wall_ms is None else f"{self.wall_ms:.0f}"
        return [self.task, self.strategy, self.param, str(self.n_target), str(self.seed),
                self.metric, f"{self.value:.17g}", self.flag, wall]


def _run_seed(config, seed):
    """All cells for one seed; returns records in grid order."""
    exp = make_experiment(config.task, config.param, config.network, config.budgets,
                          config.options)
    ckpt_dir = None
    if config.out_dir is not None and config.save_checkpoints:
        ckpt_dir = Path(config.out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    if config.out_dir is not None:
        exp.save_artifacts(seed, Path(config.out_dir))

    records = []
    try:
        ctx = exp.source_context(seed, config.prune_ratio, ckpt_dir)
    except Exception as exc:  # whole seed fails: flag every cell
        msg = f"error: source training failed: {exc}"
        for strat in config.strategies:
            for n in config.n_targets:
                for metric in exp.metrics:
                    records.append(ExperimentRecord(config.task, strat, config.param, n, seed,
                                                    metric, float("nan"), msg))
        return records

    for strat in config.strategies:
        for n in config.n_targets:
            start = time.perf_counter()
            strategy = TransferStrategy(strat, config.lam, config.prune_ratio,
                                        config.budgets["calibrate"])
            rng = stream(seed, config.task, config.param, strat, n)
            try:
                target = exp.target_objective(seed, n)
                params, _ = run_strategy(strategy, ctx, target, rng)
                values = exp.evaluate(seed, ctx.model, params)
                flags = {m: ("" if np.isfinite(v) else "divergent") for m, v in values.items()}
            except Exception as exc:
                values = {m: float("nan") for m in exp.metrics}
                reason = f"error: {type(exc).__name__}: {exc}"
                flags = {m: reason for m in exp.metrics}
                if os.environ.get("PACNET_DEBUG"):
                    traceback.print_exc()
            wall = (time.perf_counter() - start) * 1000.0
            for metric in exp.metrics:
                records.append(ExperimentRecord(config.task, strat, config.param, n, seed,
                                                metric, float(values[metric]), flags[metric],
                                                wall))
    if ckpt_dir is not None:
        exp.save_allocated(ctx, ckpt_dir)
    return records


def _workers():
    raw = os.environ.get("PACNET_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PACNET_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"PACNET_WORKERS must be a positive integer, got {raw!r}")
    return n


def run(config):
    """Execute the full grid; records come back in deterministic sorted order."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    workers = min(_workers(), len(config.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_seed, [config] * len(config.seeds), config.seeds))
    else:
        chunks = [_run_seed(config, s) for s in config.seeds]
    records = [r for chunk in chunks for r in chunk]

    s_rank = {s: i for i, s in enumerate(config.strategies)}
    metrics = make_experiment(config.task, config.param, config.network, config.budgets,
                              config.options).metrics
    m_rank = {m: i for i, m in enumerate(metrics)}
    records.sort(key=lambda r: (s_rank[r.strategy], r.n_target, r.seed, m_rank[r.metric]))

    if config.out_dir is not None:
        write_outputs(config, records)
    return records


def aggregate(records):
    """Mean over seeds per ``(strategy, metric, n_target)`` plus a row average.

    Returns a list of dicts ``{strategy, metric, means: {n_target: mean}, avg}``
    in first-seen order.  Flagged (non-finite) values propagate as ``nan``/``inf``.
    """
    if not records:
        raise ValueError("no records to aggregate")
    groups = {}
    for r in records:
        groups.setdefault((r.strategy, r.metric), {}).setdefault(r.n_target, []).append(r.value)
    rows = []
    for (strategy, metric), cells in groups.items():
        means = {n: float(np.mean(v)) for n, v in sorted(cells.items())}
        rows.append({"strategy": strategy, "metric": metric, "means": means,
                     "avg": float(np.mean(list(means.values())))})
    return rows


def format_table(rows, digits=2):
    """Plain-text table: one row per (strategy, metric), one column per N_T."""
    ns = sorted({n for r in rows for n in r["means"]})
    width = max(len("method"), *(len(r["strategy"]) for r in rows)) + 2
    lines = ["method".ljust(width) + "metric".ljust(12)
             + "".join(f"{n:>9}" for n in ns) + f"{'avg':>9}"]
    for r in rows:
        cells = "".join(f"{r['means'][n]:>9.{digits}f}" if n in r["means"] else " " * 9 for n in ns)
        lines.append(r["strategy"].ljust(width) + r["metric"].ljust(12) + cells
                     + f"{r['avg']:>9.{digits}f}")
    return "\n".join(lines)


def records_to_csv(records, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row(timing))
    return buf.getvalue()


def read_csv(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(ExperimentRecord(row["task"], row["strategy"], row["param"],
                                        int(row["n_target"]), int(row["seed"]), row["metric"],
                                        float(row["value"]), row["flag"],
                                        float(row["wall_ms"]) if row["wall_ms"] else None))
    return out


def manifest(config):
    return {
        "tool": "pacnet",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config.resolved(),
    }


def write_outputs(config, records):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{config.task}_{''.join(c if c.isalnum() or c in '.-' else '_' for c in config.param)}"
    (out / f"{stem}.csv").write_bytes(records_to_csv(records, config.record_timing).encode("utf-8"))
    with open(out / f"{stem}.manifest.json", "w") as f:
        json.dump(manifest(config), f, indent=2, sort_keys=True)
        f.write("\n")
