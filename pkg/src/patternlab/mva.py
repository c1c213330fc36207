"""Closed queueing-network predictions via exact load-dependent Mean Value Analysis.

A pattern under a mix is reduced to a single closed chain: each service
becomes a station whose demand is the mix- and visit-weighted CPU time per
request. Stations are multi-server processor-sharing queues, i.e. load
dependent with service rate ``min(n, c) / D`` when ``n`` jobs are present.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import PatternModel
from .workload import LoadMix, SweepSpec

FORK_JOIN_NOTE = "sequential-visit approximation"


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class DemandProfile:
    names: tuple[str, ...]
    demand: tuple[float, ...]  # seconds per request
    capacity: tuple[float, ...]

    def __post_init__(self):
        if any(d < 0 for d in self.demand):
            raise ValueError("demands must be >= 0")
        if any(c <= 0 for c in self.capacity):
            raise ValueError("capacities must be > 0")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.demand))

    def bottleneck(self) -> str:
        """Highest demand per unit capacity; ties go to the lexicographically first name."""
        load = [d / c for d, c in zip(self.demand, self.capacity)]
        top = max(load)
        return min(n for n, x in zip(self.names, load) if x >= top * (1 - 1e-9))


@dataclass
class AnalyticPrediction:
    mix: LoadMix
    throughput: float
    response_time: float
    utilization: dict[str, float]
    bottleneck: str
    queue_length: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def p(self) -> float:
        return self.mix.p_first

    @property
    def values(self) -> dict[str, float]:
        out = {"response_time": self.response_time, "throughput": self.throughput}
        out.update({f"utilization.{k}": v for k, v in self.utilization.items()})
        return out


def aggregate_demands(model: PatternModel, mix: LoadMix, time_unit: float = 0.001) -> DemandProfile:
    """Mix-weighted per-service demand in seconds, counting visits along the routing."""
    demand = dict.fromkeys(model.service_names, 0.0)
    for lab in model.labels:
        p = mix.p(lab)
        if p == 0:
            continue
        for name, v in model.visits(lab).items():
            if v:
                demand[name] += p * v * model.service(name).work(lab) * time_unit
    return DemandProfile(
        names=tuple(model.service_names),
        demand=tuple(demand[n] for n in model.service_names),
        capacity=tuple(s.cpu_capacity for s in model.services),
    )


def mva_closed(profile: DemandProfile, users: int, think_time: float = 0.0, mix: LoadMix | None = None) -> AnalyticPrediction:
    """Exact MVA for a single closed chain of load-dependent PS stations."""
    if users < 1:
        raise ValueError("users must be >= 1")
    D = np.asarray(profile.demand, dtype=float)
    C = np.asarray(profile.capacity, dtype=float)
    if not np.all(D == 0) and np.any(C != np.round(C)):
        raise ValueError(f"solver stations need integral server counts, got {profile.capacity}")
    if np.all(D == 0):
        raise DegenerateInputError("all demands are zero")

    active = np.flatnonzero(D > 0)
    N = users
    # marginal[k][j] = P(j jobs at station k) for the current population
    marginal = np.zeros((len(D), N + 1))
    marginal[:, 0] = 1.0
    j = np.arange(1, N + 1)
    X = 0.0
    R = np.zeros(len(D))
    for n in range(1, N + 1):
        for k in active:
            # mean time per visit: sum_j j / mu_k(j) * P_k(j - 1 | n - 1)
            inv_rate = D[k] / np.minimum(j[:n], C[k])
            R[k] = np.sum(j[:n] * inv_rate * marginal[k, : n])
        X = n / (think_time + R.sum())
        for k in active:
            inv_rate = D[k] / np.minimum(j[:n], C[k])
            new = np.zeros(N + 1)
            new[1 : n + 1] = X * inv_rate * marginal[k, :n]
            # idle probability from E[min(n, c)] = X * D, which only needs j < c;
            # 1 - sum(new) accumulates cancellation error at high populations
            c = int(C[k])
            head = np.arange(1, min(c, n + 1))
            idle = (c - X * D[k] - np.sum((c - head) * new[head])) / c
            new[0] = max(idle, 0.0)
            marginal[k] = new

    util = {name: X * d / c for name, d, c in zip(profile.names, D, C)}
    return AnalyticPrediction(
        mix=mix,
        throughput=float(X),
        response_time=float(R.sum()),
        utilization={k: float(v) for k, v in util.items()},
        bottleneck=profile.bottleneck(),
        queue_length={name: float(X * r) for name, r in zip(profile.names, R)},
    )


def fork_join_note(model: PatternModel, prediction: AnalyticPrediction) -> AnalyticPrediction:
    """Flag predictions whose response time treats parallel fan-out as sequential visits.

    The sum of branch delays overestimates the join delay; utilizations are unaffected.
    """
    if model.has_parallel_calls() and FORK_JOIN_NOTE not in prediction.notes:
        prediction.notes.append(FORK_JOIN_NOTE)
    return prediction


def predict(model: PatternModel, mix: LoadMix, users: int = 16, time_unit: float = 0.001, think_time: float = 0.0) -> AnalyticPrediction:
    profile = aggregate_demands(model, mix, time_unit)
    return fork_join_note(model, mva_closed(profile, users, think_time, mix=mix))


def predict_sweep(model: PatternModel, sweep: SweepSpec, users: int = 16, time_unit: float = 0.001, think_time: float = 0.0) -> list[AnalyticPrediction]:
    return [predict(model, mix, users, time_unit, think_time) for mix in sweep]
