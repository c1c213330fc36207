"""Experiment orchestration: sweeps, CSV persistence, comparison reports and replay.

Output directory layout::

    runs.csv          per-sample utilization and per-run delay percentiles
    summary.csv       per-run means (one row per run and scope)
    theoretical.csv   solver predictions (one row per mix and scope)
    comparison.csv    Spearman / MAE / normalized MAE per experiment group and scope
    report.md         the comparison rendered as tables
    plot_<group>.csv  mix-indexed theoretical vs experimental series
    experiments.json  config and per-run records (seed, wall-clock timestamps)
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import mva, stats
from .sim import RunResult, SimConfig, simulate
from .topology import PatternModel, Variant, build_gateway_aggregation, build_gateway_offloading, build_pipes_and_filters, load_topology
from .workload import LoadMix, enumerate_mixes

log = logging.getLogger(__name__)

PATTERNS = ("gateway_aggregation", "gateway_offloading", "pipes_and_filters")
SEED_ENV = "PATTERNLAB_SEED"
DELAY_PERCENTILES = (50, 90, 95, 99)

RUNS_HEADER = ("experiment_id", "rep", "mix_p", "scope", "t", "value")
SUMMARY_HEADER = ("experiment_id", "rep", "mix_p", "scope", "mean_value")
THEORETICAL_HEADER = ("experiment_id", "mix_p", "scope", "value", "bottleneck")
COMPARISON_HEADER = ("experiment_id_group", "scope", "spearman_rho", "p_value", "mae", "mae_normalized")
PLOT_HEADER = ("mix_p", "scope", "theoretical", "experimental")


class ConfigError(ValueError):
    pass


class ReplayMismatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    pattern: str = "gateway_aggregation"
    offloads: tuple[int, ...] = (0, 5, 10)
    variants: tuple[str, ...] = tuple(v.value for v in Variant)
    gateway_overhead: float = 0.0
    granularity: int = 5
    repetitions: int = 6
    sim: SimConfig = field(default_factory=SimConfig)
    analytic_users: int | None = None  # defaults to sim.users
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.pattern not in PATTERNS and not Path(self.pattern).is_file():
            raise ConfigError(f"pattern: unknown pattern or missing file {self.pattern!r}")
        for w in self.offloads:
            if not 0 <= w <= 10:
                raise ConfigError(f"offloads: {w} outside [0, 10]")
        for v in self.variants:
            if v not in Variant.__members__:
                raise ConfigError(f"variants: unknown pipes-and-filters variant {v!r}")
        if self.gateway_overhead < 0:
            raise ConfigError("gateway_overhead: must be >= 0")
        if self.granularity < 1:
            raise ConfigError("granularity: must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be >= 1")
        if self.analytic_users is not None and self.analytic_users < 1:
            raise ConfigError("analytic_users: must be >= 1")

    @property
    def users(self) -> int:
        return self.analytic_users or self.sim.users

    def groups(self) -> list[tuple[str, PatternModel]]:
        """``(group id, model)`` for every variant this config sweeps."""
        if self.pattern == "gateway_aggregation":
            slug = "default" if self.gateway_overhead == 0 else f"overhead{self.gateway_overhead:g}"
            return [(f"gateway_aggregation-{slug}", build_gateway_aggregation(self.gateway_overhead))]
        if self.pattern == "gateway_offloading":
            return [(f"gateway_offloading-offload{w}", build_gateway_offloading(w)) for w in self.offloads]
        if self.pattern == "pipes_and_filters":
            return [(f"pipes_and_filters-{v}", build_pipes_and_filters(v)) for v in self.variants]
        path = Path(self.pattern)
        return [(f"custom-{path.stem}", load_topology(path))]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if "sim" in data:
            sim = data["sim"]
            if not isinstance(sim, SimConfig):
                sim_known = {f.name for f in fields(SimConfig)}
                bad = set(sim) - sim_known
                if bad:
                    raise ConfigError(f"unknown sim field(s): {sorted(bad)}")
                try:
                    sim = SimConfig(**sim)
                except ValueError as exc:
                    raise ConfigError(f"sim: {exc}") from exc
            data["sim"] = sim
        for key in ("offloads", "variants"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def apply_seed_override(cfg: ExperimentConfig) -> ExperimentConfig:
    seed = os.environ.get(SEED_ENV)
    if seed is None:
        return cfg
    try:
        value = int(seed)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV}: not an integer: {seed!r}") from exc
    return replace(cfg, sim=replace(cfg.sim, seed=value))


def mix_slug(p: float) -> str:
    return f"p{round(p * 100):03d}"


def experiment_id(group: str, p: float) -> str:
    return f"{group}-{mix_slug(p)}"


def run_id(group: str, p: float, rep: int) -> str:
    return f"{experiment_id(group, p)}-rep{rep}"


def split_run_id(rid: str) -> tuple[str, int]:
    exp, _, rep = rid.rpartition("-rep")
    return exp, int(rep)


def group_of(exp_id: str) -> str:
    return exp_id.rpartition("-p")[0]


def fmt(x: float) -> str:
    """Locale-independent shortest round-trip float text."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def fmt_p(p: float) -> str:
    return f"{p:.6g}"


# --- per-run summaries --------------------------------------------------------


def summarize(result: RunResult) -> dict[str, float]:
    """Per-run means over the post-warm-up window."""
    out = {
        "completed": float(result.window().sum()),
        "response_time": result.mean_delay(),
        "throughput": result.throughput(),
    }
    for name in result.cpu_samples:
        out[f"utilization.{name}"] = result.utilization(name)
    return out


def _summary_rows(rid: str, rep: int, p: float, summary: dict[str, float]) -> list[tuple]:
    return [(rid, rep, fmt_p(p), scope, fmt(v)) for scope, v in summary.items()]


def _sample_rows(rid: str, rep: int, p: float, result: RunResult) -> list[tuple]:
    rows = []
    for name, series in result.cpu_samples.items():
        for t, u in stats.cpu_utilization(series):
            rows.append((rid, rep, fmt_p(p), f"utilization.{name}", fmt(t), fmt(u / result.capacity[name])))
    delays = result.response_times()
    for q in DELAY_PERCENTILES:
        rows.append((rid, rep, fmt_p(p), f"delay.p{q}", fmt(result.config.duration), fmt(np.percentile(delays, q))))
    return rows


@dataclass(frozen=True)
class _Job:
    group: str
    model: PatternModel
    p: float
    rep: int
    sim: SimConfig


def _execute(job: _Job) -> tuple[str, list[tuple], list[tuple], dict]:
    started = time.time()
    mix = LoadMix.binary(job.model.labels, job.p)
    result = simulate(job.model, mix, job.sim)
    rid = run_id(job.group, job.p, job.rep)
    summary = summarize(result)
    record = {
        "id": rid,
        "group": job.group,
        "mix_p": job.p,
        "rep": job.rep,
        "seed": job.sim.seed,
        "completed": result.completed,
        "started": started,
        "finished": time.time(),
    }
    return rid, _summary_rows(rid, job.rep, job.p, summary), _sample_rows(rid, job.rep, job.p, result), record


def _jobs(cfg: ExperimentConfig) -> list[_Job]:
    jobs = []
    for group, model in cfg.groups():
        for mix in enumerate_mixes(cfg.granularity, model.labels):
            for rep in range(cfg.repetitions):
                jobs.append(_Job(group, model, mix.p_first, rep, replace(cfg.sim, seed=cfg.sim.seed + rep)))
    return jobs


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _read_csv(path: Path, header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path.name}: expected header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def _out_dir(cfg_or_path) -> Path:
    out = Path(cfg_or_path.out if isinstance(cfg_or_path, ExperimentConfig) else cfg_or_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def run(cfg: ExperimentConfig) -> Path:
    """Simulate every (variant, mix, repetition); writes runs.csv, summary.csv and experiments.json."""
    out = _out_dir(cfg)
    jobs = _jobs(cfg)
    log.info("running %d simulations with %d worker(s)", len(jobs), cfg.workers)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_execute, jobs))
    else:
        results = [_execute(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    _write_csv(out / "summary.csv", SUMMARY_HEADER, (row for r in results for row in r[1]))
    _write_csv(out / "runs.csv", RUNS_HEADER, (row for r in results for row in r[2]))
    manifest = {"config": cfg.to_dict(), "runs": [r[3] for r in results]}
    (out / "experiments.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return out


def predict(cfg: ExperimentConfig) -> Path:
    """Solver sweep for the same variants and mixes; writes theoretical.csv."""
    out = _out_dir(cfg)
    rows = []
    for group, model in cfg.groups():
        sweep = enumerate_mixes(cfg.granularity, model.labels)
        for pred in mva.predict_sweep(model, sweep, cfg.users, cfg.sim.time_unit):
            eid = experiment_id(group, pred.p)
            for scope, value in pred.values.items():
                rows.append((eid, fmt_p(pred.p), scope, fmt(value), pred.bottleneck))
    rows.sort(key=lambda r: r[0])
    _write_csv(out / "theoretical.csv", THEORETICAL_HEADER, rows)
    return out / "theoretical.csv"


# --- comparison -----------------------------------------------------------------


@dataclass
class GroupComparison:
    group: str
    report: stats.ComparisonReport
    pooled: bool = False


def _load_theoretical(path: Path) -> dict[str, stats.MixSummary]:
    values: dict[str, dict[str, float]] = defaultdict(dict)
    ps: dict[str, float] = {}
    for row in _read_csv(path, THEORETICAL_HEADER):
        values[row["experiment_id"]][row["scope"]] = float(row["value"])
        ps[row["experiment_id"]] = float(row["mix_p"])
    return {eid: stats.MixSummary(ps[eid], dict(v)) for eid, v in values.items()}


def _load_experimental(path: Path) -> dict[str, stats.MixSummary]:
    pairs = []
    ps: dict[str, float] = {}
    for row in _read_csv(path, SUMMARY_HEADER):
        eid, _ = split_run_id(row["experiment_id"])
        pairs.append(((eid, row["scope"]), float(row["mean_value"])))
        ps[eid] = float(row["mix_p"])
    averages = stats.experiment_averages(pairs)
    values: dict[str, dict[str, float]] = defaultdict(dict)
    for (eid, scope), v in averages.items():
        values[eid][scope] = v
    return {eid: stats.MixSummary(ps[eid], dict(v)) for eid, v in values.items()}


def compare_tables(theoretical: dict[str, stats.MixSummary], experimental: dict[str, stats.MixSummary]) -> list[GroupComparison]:
    missing = sorted(set(theoretical) ^ set(experimental))
    if missing:
        raise KeyError(f"unmatched experiment ids: {', '.join(missing)}")
    by_group: dict[str, list[str]] = defaultdict(list)
    for eid in theoretical:
        by_group[group_of(eid)].append(eid)
    out = []
    for group in sorted(by_group):
        eids = sorted(by_group[group], key=lambda e: theoretical[e].p)
        th = [theoretical[e] for e in eids]
        ex = [experimental[e] for e in eids]
        out.append(GroupComparison(group, stats.compare_sweeps(th, ex)))

    # pool variants of the same pattern
    by_pattern: dict[str, list[str]] = defaultdict(list)
    for group in sorted(by_group):
        by_pattern[group.split("-")[0]].append(group)
    for pattern, groups in sorted(by_pattern.items()):
        if len(groups) < 2:
            continue
        eids = [e for g in groups for e in sorted(by_group[g], key=lambda e: theoretical[e].p)]
        th = [theoretical[e] for e in eids]
        ex = [experimental[e] for e in eids]
        common = set.intersection(*(set(t.values) for t in th))
        scopes = [s for s in th[0].values if s in common and stats._is_compared(s)]
        out.append(GroupComparison(f"{pattern}-pooled", stats.compare_sweeps(th, ex, scopes), pooled=True))
    return out


def _comparison_rows(comparisons: list[GroupComparison]) -> list[tuple]:
    rows = []
    for gc in comparisons:
        for sc in gc.report:
            rho, p = (sc.correlation.rho, sc.correlation.p_value) if sc.correlation else (math.nan, math.nan)
            rows.append((gc.group, sc.scope, fmt(rho), fmt(p), fmt(sc.mae), fmt(sc.mae_normalized)))
    return rows


def _render_report(comparisons: list[GroupComparison]) -> str:
    lines = ["# Theoretical vs experimental comparison", ""]
    lines.append("Spearman p-values use exact enumeration for n <= 9 and a t-approximation otherwise.")
    lines.append("Delay MAE is in seconds; utilization MAE in busy fraction (0-1). Normalized MAE uses each side's own min/max of experiment averages.")
    lines.append("")
    for gc in comparisons:
        title = gc.group + (" (pooled across variants)" if gc.pooled else "")
        lines += [f"## {title}", "", "| scope | rho | p | method | n | MAE | normalized MAE |", "|---|---|---|---|---|---|---|"]
        for sc in gc.report:
            c = sc.correlation
            if c is None:
                corr = "undefined | - | - | " + str(len(sc.p))
            else:
                p = "< 0.001" if c.p_value < 0.001 else f"{c.p_value:.3f}"
                corr = f"{c.rho:.3f} | {p} | {c.method} | {c.n}"
            norm = "-" if math.isnan(sc.mae_normalized) else f"{sc.mae_normalized:.4f}"
            lines.append(f"| {sc.scope} | {corr} | {sc.mae:.4g} | {norm} |")
        lines.append("")
    return "\n".join(lines)


def compare(theoretical_csv, summary_csv, out=None) -> list[GroupComparison]:
    """Compare solver output against experiment-averaged runs.

    Writes comparison.csv, report.md and one plot_<group>.csv per
    (non-pooled) experiment group next to ``summary_csv`` unless ``out`` is given.
    """
    theoretical_csv, summary_csv = Path(theoretical_csv), Path(summary_csv)
    out = _out_dir(out if out is not None else summary_csv.parent)
    comparisons = compare_tables(_load_theoretical(theoretical_csv), _load_experimental(summary_csv))
    _write_csv(out / "comparison.csv", COMPARISON_HEADER, _comparison_rows(comparisons))
    (out / "report.md").write_text(_render_report(comparisons) + "\n", encoding="utf-8")
    for gc in comparisons:
        if gc.pooled:
            continue
        rows = []
        for sc in gc.report:
            for p, th, ex in zip(sc.p, sc.theoretical, sc.experimental):
                rows.append((fmt_p(p), sc.scope, fmt(th), fmt(ex)))
        _write_csv(out / f"plot_{gc.group}.csv", PLOT_HEADER, rows)
    return comparisons


def report(cfg: ExperimentConfig) -> list[GroupComparison]:
    """run + predict + compare in one go."""
    out = run(cfg)
    predict(cfg)
    return compare(out / "theoretical.csv", out / "summary.csv")


def self_summaries(theoretical_csv, out) -> Path:
    """Write a summary.csv whose runs reproduce the predictions exactly (identity fixture)."""
    rows = []
    for eid, ms in sorted(_load_theoretical(Path(theoretical_csv)).items()):
        rid = f"{eid}-rep0"
        rows += _summary_rows(rid, 0, ms.p, ms.values)
    path = _out_dir(out) / "summary.csv"
    _write_csv(path, SUMMARY_HEADER, rows)
    return path


# --- replay -----------------------------------------------------------------------


def replay(runs_csv, rid: str) -> RunResult:
    """Re-simulate a recorded run from its seed and check its summary rows byte for byte."""
    out = Path(runs_csv)
    out = out.parent if out.is_file() or out.suffix == ".csv" else out
    manifest = json.loads((out / "experiments.json").read_text(encoding="utf-8"))
    records = {r["id"]: r for r in manifest["runs"]}
    if rid not in records:
        raise KeyError(f"experiment {rid!r} not found in {out / 'experiments.json'}")
    rec = records[rid]
    cfg = ExperimentConfig.from_dict(manifest["config"])
    models = dict(cfg.groups())
    if rec["group"] not in models:
        raise KeyError(f"group {rec['group']!r} is not produced by the recorded config")
    model = models[rec["group"]]
    sim_cfg = replace(cfg.sim, seed=int(rec["seed"]))
    result = simulate(model, LoadMix.binary(model.labels, float(rec["mix_p"])), sim_cfg)

    fresh = [tuple(map(str, r)) for r in _summary_rows(rid, int(rec["rep"]), float(rec["mix_p"]), summarize(result))]
    stored = [tuple(r[h] for h in SUMMARY_HEADER) for r in _read_csv(out / "summary.csv", SUMMARY_HEADER) if r["experiment_id"] == rid]
    if fresh != stored:
        diff = [f"{a[3]}: recorded {a[4]} vs replayed {b[4]}" for a, b in zip(stored, fresh) if a != b]
        raise ReplayMismatchError(f"replay of {rid} diverged: " + ("; ".join(diff) or "row count differs"))
    return result
