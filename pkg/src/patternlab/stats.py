"""Measurement post-processing and theory-vs-experiment comparison metrics."""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _sps

# exact permutation p-values up to this many points (9! = 362880 orderings)
EXACT_PERMUTATION_MAX_N = 9


class InsufficientDataError(ValueError):
    pass


class DegenerateBoundsError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CpuSampleSeries:
    service: str
    samples: np.ndarray  # (m, 2): t, cumulative busy CPU-seconds

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "samples", arr)
        if len(arr) > 1:
            if np.any(np.diff(arr[:, 0]) <= 0):
                raise ValueError(f"{self.service}: sample times must be strictly increasing")
            if np.any(np.diff(arr[:, 1]) < 0):
                raise ValueError(f"{self.service}: cumulative CPU must be nondecreasing")


def _as_samples(series) -> np.ndarray:
    if isinstance(series, CpuSampleSeries):
        return series.samples
    return np.asarray(series, dtype=float).reshape(-1, 2)


def cpu_utilization(series) -> np.ndarray:
    """Discrete derivative of a cumulative CPU series.

    Returns an ``(m - 1, 2)`` array of ``(t_end, CPU-seconds per second)`` for
    each pair of consecutive readings.
    """
    s = _as_samples(series)
    if len(s) < 2:
        raise InsufficientDataError("need at least two cumulative CPU readings")
    rate = np.diff(s[:, 1]) / np.diff(s[:, 0])
    return np.column_stack([s[1:, 0], rate])


def mean_utilization(series, warmup_cut: float = 0.0) -> float:
    """Average CPU/s over everything after ``warmup_cut``."""
    s = _as_samples(series)
    t_end = s[-1, 0]
    if len(s) < 2 or warmup_cut >= t_end:
        raise InsufficientDataError(f"no samples after warm-up cut {warmup_cut}")
    cut = max(warmup_cut, s[0, 0])
    start = float(np.interp(cut, s[:, 0], s[:, 1]))
    return (s[-1, 1] - start) / (t_end - cut)


def mae(expected: Sequence[float], observed: Sequence[float]) -> float:
    e = np.asarray(expected, dtype=float)
    o = np.asarray(observed, dtype=float)
    if e.shape != o.shape:
        raise ValueError(f"length mismatch: {e.size} expected vs {o.size} observed")
    if e.size == 0:
        raise InsufficientDataError("mae of empty series")
    return float(np.mean(np.abs(e - o)))


def experiment_averages(runs: Mapping[Hashable, Sequence[float]] | Iterable[tuple[Hashable, float]]) -> dict:
    """Mean over repetitions, one value per experiment key.

    Accepts either ``{key: [rep values]}`` or an iterable of ``(key, value)``
    pairs. Keys are opaque, so ``(experiment_id, scope)`` tuples give one mean
    per experiment per metric.
    """
    groups: dict = defaultdict(list)
    items = runs.items() if isinstance(runs, Mapping) else None
    if items is not None:
        for key, vals in items:
            if not len(vals):
                raise InsufficientDataError(f"experiment {key!r} has no runs")
            groups[key].extend(vals)
    else:
        for key, val in runs:
            groups[key].append(val)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


@dataclass(frozen=True)
class NormalizationBounds:
    min: float
    max: float

    def __post_init__(self):
        if self.max < self.min:
            raise ValueError("max < min")

    @classmethod
    def of(cls, averages: Iterable[float]) -> NormalizationBounds:
        vals = list(averages)
        return cls(float(min(vals)), float(max(vals)))


def min_max_normalize(values: Sequence[float], bounds: NormalizationBounds) -> np.ndarray:
    """Affine map sending ``bounds.min`` to 0 and ``bounds.max`` to 1 (no clamping)."""
    span = bounds.max - bounds.min
    if not span > 0:
        raise DegenerateBoundsError(f"cannot normalize with min == max == {bounds.min}")
    return (np.asarray(values, dtype=float) - bounds.min) / span


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int
    method: str  # "permutation" or "t"

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def _rank_corr(rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    """Pearson correlation of ``rx`` against each row of ``ry``."""
    ax = rx - rx.mean()
    ay = ry - ry.mean(axis=-1, keepdims=True)
    return (ay @ ax) / np.sqrt((ax @ ax) * np.sum(ay * ay, axis=-1))


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Spearman's rho with average ranks for ties.

    Two-sided p-value: exact enumeration of all ``n!`` orderings for small
    samples, Student-t approximation otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise InsufficientDataError(f"spearman needs at least 3 points, got {n}")
    rx = _sps.rankdata(x)
    ry = _sps.rankdata(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise UndefinedCorrelationError("zero rank variance; correlation undefined")
    rho = float(np.clip(_rank_corr(rx, ry[None, :])[0], -1.0, 1.0))

    if n <= EXACT_PERMUTATION_MAX_N:
        perms = np.array(list(itertools.permutations(ry)), dtype=float)
        null = _rank_corr(rx, perms)
        p = float(np.mean(np.abs(null) >= abs(rho) - 1e-12))
        return CorrelationResult(rho, min(p, 1.0), n, "permutation")

    if abs(rho) >= 1.0:
        return CorrelationResult(rho, 0.0, n, "t")
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = float(2.0 * _sps.t.sf(abs(t), n - 2))
    return CorrelationResult(rho, min(p, 1.0), n, "t")


# --- sweep comparison ---------------------------------------------------------


@dataclass(frozen=True)
class MixSummary:
    """Experiment-averaged measurements for one mix of a sweep."""

    p: float
    values: dict[str, float]


@dataclass(frozen=True)
class ScopeComparison:
    scope: str
    correlation: CorrelationResult | None  # None for constant ranks or fewer than 3 mixes
    mae: float
    mae_normalized: float  # nan when either series is constant
    p: tuple[float, ...]
    theoretical: tuple[float, ...]
    experimental: tuple[float, ...]


@dataclass
class ComparisonReport:
    scopes: dict[str, ScopeComparison] = field(default_factory=dict)

    def __getitem__(self, scope: str) -> ScopeComparison:
        return self.scopes[scope]

    def __iter__(self):
        return iter(self.scopes.values())


def _is_compared(scope: str) -> bool:
    return scope == "response_time" or scope.startswith("utilization.")


def compare_sweeps(theoretical: Sequence, experimental: Sequence, scopes: Sequence[str] | None = None) -> ComparisonReport:
    """Spearman, MAE and normalized MAE between aligned sweeps.

    Both inputs are sequences of objects with ``.p`` and a ``.values`` mapping
    (``AnalyticPrediction`` or :class:`MixSummary`), aligned position by
    position; pooling several sweeps means concatenating them in the same
    order on both sides.
    """
    if len(theoretical) != len(experimental):
        raise AlignmentError(f"{len(theoretical)} theoretical mixes vs {len(experimental)} experimental")
    for th, ex in zip(theoretical, experimental):
        if abs(th.p - ex.p) > 1e-9:
            raise AlignmentError(f"mix misalignment: theoretical p={th.p} vs experimental p={ex.p}")
    if scopes is None:
        scopes = [s for s in theoretical[0].values if _is_compared(s)]
    report = ComparisonReport()
    for scope in scopes:
        for side, rows in (("theoretical", theoretical), ("experimental", experimental)):
            for row in rows:
                if scope not in row.values:
                    raise KeyError(f"scope {scope!r} missing from {side} data at p={row.p}")
        th = np.array([row.values[scope] for row in theoretical])
        ex = np.array([row.values[scope] for row in experimental])
        try:
            corr = spearman(th, ex)
        except (UndefinedCorrelationError, InsufficientDataError):
            corr = None
        try:
            norm = mae(min_max_normalize(th, NormalizationBounds.of(th)), min_max_normalize(ex, NormalizationBounds.of(ex)))
        except DegenerateBoundsError:
            norm = float("nan")
        report.scopes[scope] = ScopeComparison(
            scope=scope,
            correlation=corr,
            mae=mae(th, ex),
            mae_normalized=norm,
            p=tuple(float(r.p) for r in theoretical),
            theoretical=tuple(th.tolist()),
            experimental=tuple(ex.tolist()),
        )
    return report
