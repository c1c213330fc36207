"""Heterogeneous request mixes and per-request type sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .topology import PatternModel, RequestType

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class LoadMix:
    """Probability of a single user sending each request type."""

    probabilities: dict[str, float]

    def __post_init__(self):
        if not self.probabilities:
            raise ValueError("empty mix")
        for lab, p in self.probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p({lab}) = {p} outside [0, 1]")
        total = sum(self.probabilities.values())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @classmethod
    def binary(cls, labels: Sequence[str], p_first: float) -> LoadMix:
        """Two-type mix with p(r1) = ``p_first`` and p(r2) = 1 - p(r1)."""
        r1, r2 = labels
        return cls({r1: float(p_first), r2: 1.0 - float(p_first)})

    @property
    def labels(self) -> list[str]:
        return list(self.probabilities)

    @property
    def p_first(self) -> float:
        return next(iter(self.probabilities.values()))

    def p(self, label: str) -> float:
        return self.probabilities.get(label, 0.0)

    def check_against(self, model: PatternModel) -> None:
        missing = set(model.labels) - set(self.probabilities)
        extra = set(self.probabilities) - set(model.labels)
        if missing or extra:
            raise ValueError(f"mix does not match model request types (missing {sorted(missing)}, unknown {sorted(extra)})")

    def sampler(self, model_labels: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
        labels = list(model_labels) if model_labels is not None else self.labels
        cdf = np.cumsum([self.p(lab) for lab in labels])
        cdf[-1] = 1.0
        return labels, cdf


@dataclass(frozen=True)
class SweepSpec:
    mixes: tuple[LoadMix, ...]
    granularity: int

    def __post_init__(self):
        ps = [m.p_first for m in self.mixes]
        if ps != sorted(ps) or len(set(ps)) != len(ps):
            raise ValueError("sweep mixes must be distinct and sorted by p(r1)")

    def __len__(self) -> int:
        return len(self.mixes)

    def __iter__(self):
        return iter(self.mixes)

    @property
    def p_values(self) -> list[float]:
        return [m.p_first for m in self.mixes]


def _label(t: RequestType | str) -> str:
    return t.label if isinstance(t, RequestType) else str(t)


def enumerate_mixes(granularity: int, types: Sequence[RequestType | str]) -> SweepSpec:
    """Evenly spaced mixes p(r1) = i / granularity for i = 0..granularity."""
    if granularity < 1:
        raise ValueError(f"granularity must be >= 1, got {granularity}")
    if len(types) != 2:
        raise NotImplementedError(f"mix sweeps are defined for exactly two request types, got {len(types)}")
    labels = [_label(t) for t in types]
    mixes = tuple(LoadMix.binary(labels, i / granularity) for i in range(granularity + 1))
    return SweepSpec(mixes, granularity)


def sample_request_type(mix: LoadMix, rng: np.random.Generator) -> str:
    """Draw one request-type label, i.i.d. from ``mix``."""
    labels, cdf = mix.sampler()
    return labels[int(np.searchsorted(cdf, rng.random(), side="right"))]
