"""Closed-loop discrete-event simulation of a pattern under a request mix.

Each service is an egalitarian processor-sharing station: with ``n`` resident
jobs on a station of capacity ``c`` every job is served at rate
``min(c / n, 1)``. The station keeps a virtual clock (work delivered to each
resident job so far), so a job finishes when the clock reaches its arrival
clock plus its work. Nothing is quantized.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .topology import PatternModel, ValidationError, validate
from .workload import LoadMix

Dist = Literal["exponential", "deterministic"]


@dataclass(frozen=True)
class SimConfig:
    duration: float = 120.0
    users: int = 16
    time_unit: float = 0.001
    service_time_dist: Dist = "exponential"
    sample_interval: float = 1.0
    warmup_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if not self.time_unit > 0:
            raise ValueError("time_unit must be > 0")
        if not 0 < self.sample_interval <= self.duration:
            raise ValueError("sample_interval must lie in (0, duration]")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.service_time_dist not in ("exponential", "deterministic"):
            raise ValueError(f"unknown service_time_dist {self.service_time_dist!r}")

    @property
    def warmup(self) -> float:
        return self.warmup_fraction * self.duration


@dataclass
class RunResult:
    """One simulated run.

    ``types``/``start``/``end`` are parallel arrays with one entry per
    completed request (type index into ``labels``). ``cpu_samples`` maps each
    service to an ``(m, 2)`` array of ``(t, cumulative busy CPU-seconds)``.
    ``service_work[i, k]`` is the sampled work request ``i`` brought to the
    ``k``-th service (model order), and ``critical_work[i]`` the sampled work
    along its longest call path.
    """

    model_name: str
    labels: list[str]
    mix: LoadMix
    config: SimConfig
    types: np.ndarray
    start: np.ndarray
    end: np.ndarray
    cpu_samples: dict[str, np.ndarray]
    capacity: dict[str, float]
    delivered: dict[str, float] = field(default_factory=dict)
    critical_work: np.ndarray | None = None
    service_work: np.ndarray | None = None

    @property
    def completed(self) -> int:
        return len(self.end)

    @property
    def delays(self) -> list[tuple[str, float, float]]:
        return [(self.labels[k], s, e) for k, s, e in zip(self.types.tolist(), self.start.tolist(), self.end.tolist())]

    def window(self, cut: float | None = None) -> np.ndarray:
        """Mask of requests completing after the warm-up cut."""
        cut = self.config.warmup if cut is None else cut
        return self.end > cut

    def throughput(self, cut: float | None = None) -> float:
        cut = self.config.warmup if cut is None else cut
        return float(self.window(cut).sum()) / (self.config.duration - cut)

    def response_times(self, cut: float | None = None) -> np.ndarray:
        m = self.window(cut)
        return self.end[m] - self.start[m]

    def mean_delay(self, cut: float | None = None) -> float:
        return float(self.response_times(cut).mean())

    def measured_demand(self, service: str, cut: float | None = None) -> float:
        """Mean sampled work (seconds) per request completing after the cut at ``service``."""
        k = list(self.cpu_samples).index(service)
        return float(self.service_work[self.window(cut), k].mean())

    def utilization(self, service: str, cut: float | None = None) -> float:
        """Busy fraction of the service's capacity after the warm-up cut."""
        from .stats import mean_utilization

        cut = self.config.warmup if cut is None else cut
        return mean_utilization(self.cpu_samples[service], cut) / self.capacity[service]


class _Visit:
    __slots__ = ("req", "station", "work", "stage", "pending", "parent", "path", "stage_max")

    def __init__(self, req, station, work, parent):
        self.req = req
        self.station = station
        self.work = work
        self.stage = 0
        self.pending = 0
        self.parent = parent
        # sampled work along the longest call path below (and including) this visit
        self.path = work
        self.stage_max = 0.0


class _Request:
    __slots__ = ("user", "rtype", "start", "work")

    def __init__(self, user, rtype, start, n_services):
        self.user = user
        self.rtype = rtype
        self.start = start
        self.work = [0.0] * n_services


class _Station:
    """Processor-sharing station with a virtual-time job heap."""

    __slots__ = ("idx", "capacity", "vclock", "last", "busy", "jobs", "version", "done_work")

    def __init__(self, idx: int, capacity: float):
        self.idx = idx
        self.capacity = capacity
        self.vclock = 0.0
        self.last = 0.0
        self.busy = 0.0
        self.jobs: list = []
        self.version = 0
        self.done_work = 0.0

    def rate(self, n: int) -> float:
        return min(self.capacity / n, 1.0)

    def advance(self, t: float) -> None:
        n = len(self.jobs)
        if n:
            dt = t - self.last
            self.vclock += self.rate(n) * dt
            self.busy += min(self.capacity, n) * dt
        self.last = t

    def next_completion(self) -> float:
        n = len(self.jobs)
        return self.last + max(self.jobs[0][0] - self.vclock, 0.0) / self.rate(n)


def simulate(model: PatternModel, mix: LoadMix, cfg: SimConfig) -> RunResult:
    """Run one closed-loop simulation; deterministic for a fixed ``cfg.seed``."""
    violations = validate(model)
    if violations:
        raise ValidationError(violations)
    mix.check_against(model)

    rng = np.random.default_rng(cfg.seed)
    labels = model.labels
    names = model.service_names
    stations = [_Station(i, s.cpu_capacity) for i, s in enumerate(model.services)]
    index = {n: i for i, n in enumerate(names)}
    # per (station, type): mean work in seconds and downstream stages as station indices
    mean_work = [[s.work(lab) * cfg.time_unit for lab in labels] for s in model.services]
    stages = [[[[index[t] for t in stage] for stage in s.stages(lab)] for lab in labels] for s in model.services]
    entry = [index[model.entry[lab]] for lab in labels]
    _, cdf = mix.sampler(labels)
    exponential = cfg.service_time_dist == "exponential"
    for r, lab in enumerate(labels):
        if mix.p(lab) > 0 and not any(model.visits(lab)[n] and mean_work[k][r] > 0 for k, n in enumerate(names)):
            raise ValueError(f"request type {lab!r} performs no work; the closed loop would never advance")

    seq = itertools.count()
    events: list = []  # (time, seq, kind, a, b)
    SAMPLE, DONE = 0, 1

    out_type: list[int] = []
    out_start: list[float] = []
    out_end: list[float] = []
    out_crit: list[float] = []
    out_work: list[list[float]] = []
    now = 0.0

    def schedule(st: _Station) -> None:
        st.version += 1
        if st.jobs:
            heapq.heappush(events, (st.next_completion(), next(seq), DONE, st.idx, st.version))

    def draw(mean: float) -> float:
        if mean <= 0.0:
            return 0.0
        return float(rng.exponential(mean)) if exponential else mean

    def start_visit(req: _Request, k: int, parent: _Visit | None) -> None:
        work = draw(mean_work[k][req.rtype])
        visit = _Visit(req, k, work, parent)
        req.work[k] += work
        if work == 0.0:
            run_stage(visit)
            return
        st = stations[k]
        st.advance(now)
        heapq.heappush(st.jobs, (st.vclock + work, next(seq), visit))
        schedule(st)

    def run_stage(visit: _Visit) -> None:
        plan = stages[visit.station][visit.req.rtype]
        if visit.stage == len(plan):
            finish(visit)
            return
        children = plan[visit.stage]
        visit.pending = len(children)
        for k in children:
            start_visit(visit.req, k, visit)

    def finish(visit: _Visit) -> None:
        parent = visit.parent
        if parent is None:
            req = visit.req
            out_type.append(req.rtype)
            out_start.append(req.start)
            out_end.append(now)
            out_crit.append(visit.path)
            out_work.append(req.work)
            new_request(req.user)
            return
        parent.pending -= 1
        parent.stage_max = max(parent.stage_max, visit.path)
        if parent.pending == 0:
            parent.path += parent.stage_max
            parent.stage_max = 0.0
            parent.stage += 1
            run_stage(parent)

    def new_request(user: int) -> None:
        rtype = int(np.searchsorted(cdf, rng.random(), side="right"))
        req = _Request(user, rtype, now, len(stations))
        start_visit(req, entry[rtype], None)

    sample_times = np.arange(0.0, cfg.duration + 1e-12, cfg.sample_interval)
    if sample_times[-1] < cfg.duration - 1e-12:
        sample_times = np.append(sample_times, cfg.duration)
    for t in sample_times:
        heapq.heappush(events, (float(t), next(seq), SAMPLE, 0, 0))
    samples = {n: [] for n in names}

    for u in range(cfg.users):
        new_request(u)

    while events:
        t, _, kind, a, b = heapq.heappop(events)
        if t > cfg.duration:
            break
        now = t
        if kind == SAMPLE:
            for st in stations:
                st.advance(now)
                samples[names[st.idx]].append((now, st.busy))
            continue
        st = stations[a]
        if b != st.version:
            continue
        st.advance(now)
        _, _, visit = heapq.heappop(st.jobs)
        st.done_work += visit.work
        schedule(st)
        run_stage(visit)

    delivered = {}
    for st in stations:
        st.advance(cfg.duration)
        in_progress = sum(visit.work - max(vf - st.vclock, 0.0) for vf, _, visit in st.jobs)
        delivered[names[st.idx]] = st.done_work + in_progress

    return RunResult(
        model_name=model.name,
        labels=labels,
        mix=mix,
        config=cfg,
        types=np.asarray(out_type, dtype=np.int64),
        start=np.asarray(out_start, dtype=float),
        end=np.asarray(out_end, dtype=float),
        cpu_samples={n: np.asarray(v, dtype=float).reshape(-1, 2) for n, v in samples.items()},
        capacity={s.name: s.cpu_capacity for s in model.services},
        delivered=delivered,
        critical_work=np.asarray(out_crit, dtype=float),
        service_work=np.asarray(out_work, dtype=float).reshape(-1, len(names)),
    )


def repeat_runs(model: PatternModel, mix: LoadMix, cfg: SimConfig, repetitions: int) -> list[RunResult]:
    """``repetitions`` independent runs; run ``i`` uses seed ``cfg.seed + i``."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return [simulate(model, mix, replace(cfg, seed=cfg.seed + i)) for i in range(repetitions)]
