"""Service topologies and per-request-type workloads for the pattern catalog.

A :class:`PatternModel` is a small DAG of services. Every service performs some
internal work for a request (its ``demand`` for the request type plus a flat
``overhead``) and then calls downstream services, either one after another or
fanned out in parallel. Work is expressed in abstract units; the simulator and
the solver convert units to seconds with a ``time_unit``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Mapping, NamedTuple

log = logging.getLogger(__name__)

SEQUENTIAL = "seq"
PARALLEL = "par"
CALL_MODES = (SEQUENTIAL, PARALLEL)

# µBench knobs that are accepted for config parity but never executed
_IGNORED_KEYS = ("range_complexity", "trials")


class TopologyError(ValueError):
    """Raised when a topology config cannot be turned into a valid model."""


class ParseError(TopologyError):
    pass


class ValidationError(TopologyError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class Violation(NamedTuple):
    kind: str
    key: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind} at {self.key!r}" + (f": {self.detail}" if self.detail else "")


class Call(NamedTuple):
    to: str
    mode: str = SEQUENTIAL


@dataclass(frozen=True)
class RequestType:
    id: int
    label: str


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    cpu_capacity: float = 1.0
    demand: dict[str, float] = field(default_factory=dict)
    overhead: float = 0.0
    downstream: dict[str, tuple[Call, ...]] = field(default_factory=dict)

    def work(self, rtype: str) -> float:
        """Work units performed for one request of type ``rtype``."""
        return self.demand.get(rtype, 0.0) + self.overhead

    def calls(self, rtype: str) -> tuple[Call, ...]:
        return self.downstream.get(rtype, ())

    def stages(self, rtype: str) -> list[list[str]]:
        """Group downstream calls into stages that run one after another.

        Consecutive parallel calls form one fork/join stage; every sequential
        call is a stage of its own.
        """
        out: list[list[str]] = []
        prev_par = False
        for call in self.calls(rtype):
            if call.mode == PARALLEL and prev_par:
                out[-1].append(call.to)
            else:
                out.append([call.to])
            prev_par = call.mode == PARALLEL
        return out


@dataclass(frozen=True)
class PatternModel:
    name: str
    request_types: tuple[RequestType, ...]
    services: tuple[ServiceSpec, ...]
    entry: dict[str, str]

    @property
    def labels(self) -> list[str]:
        return [rt.label for rt in self.request_types]

    @property
    def service_names(self) -> list[str]:
        return [s.name for s in self.services]

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)

    def has_parallel_calls(self) -> bool:
        return any(c.mode == PARALLEL for s in self.services for calls in s.downstream.values() for c in calls)

    def visits(self, rtype: str) -> dict[str, int]:
        """Number of times each service is visited by one request of ``rtype``.

        For tree-shaped call graphs (all built-in patterns) this is 0/1
        reachability; diamonds count each call path.
        """
        counts = {name: 0 for name in self.service_names}
        start = self.entry.get(rtype)
        if start is None:
            return counts
        by_name = {s.name: s for s in self.services}
        stack = [start]
        depth = 0
        while stack:
            name = stack.pop()
            counts[name] += 1
            depth += 1
            if depth > 10_000:
                raise ValidationError([Violation("cycle", name, f"request type {rtype}")])
            stack.extend(c.to for c in by_name[name].calls(rtype) if c.to in by_name)
        return counts


class Variant(str, Enum):
    joint_1cpu = "joint_1cpu"
    joint_2cpu = "joint_2cpu"
    separated = "separated"


def _model(name, labels, services, entry) -> PatternModel:
    rts = tuple(RequestType(i, lab) for i, lab in enumerate(labels))
    return PatternModel(name=name, request_types=rts, services=tuple(services), entry=dict(entry))


def build_gateway_aggregation(gateway_overhead: float = 0.0) -> PatternModel:
    """Gateway fanning every request out to s1, s2 and s3 in parallel."""
    if gateway_overhead < 0:
        raise ValueError(f"gateway_overhead must be >= 0, got {gateway_overhead}")
    labels = ("s1_intensive", "s3_intensive")
    fan_out = tuple(Call(s, PARALLEL) for s in ("s1", "s2", "s3"))
    services = [
        ServiceSpec(
            "gateway",
            demand={lab: float(gateway_overhead) for lab in labels},
            downstream={lab: fan_out for lab in labels},
        ),
        ServiceSpec("s1", demand={"s1_intensive": 18.0, "s3_intensive": 7.0}),
        ServiceSpec("s2", demand={"s1_intensive": 12.0, "s3_intensive": 15.0}),
        ServiceSpec("s3", demand={"s1_intensive": 5.0, "s3_intensive": 20.0}),
    ]
    return _model("gateway_aggregation", labels, services, {lab: "gateway" for lab in labels})


def build_gateway_offloading(offload: int) -> PatternModel:
    """Gateway routing dashboard requests to s1 and monitoring requests to s2 -> s3.

    ``offload`` work units move from each downstream service into the gateway.
    """
    if not 0 <= offload <= 10:
        raise ValueError(f"offload must lie in [0, 10], got {offload}")
    w = float(offload)
    labels = ("dashboard", "monitoring")
    services = [
        ServiceSpec(
            "gateway",
            demand={"dashboard": w, "monitoring": w},
            downstream={"dashboard": (Call("s1"),), "monitoring": (Call("s2"),)},
        ),
        ServiceSpec("s1", demand={"dashboard": 20.0 - w}),
        ServiceSpec("s2", demand={"monitoring": 12.0 - w}, downstream={"monitoring": (Call("s3"),)}),
        ServiceSpec("s3", demand={"monitoring": 15.0 - w}),
    ]
    return _model("gateway_offloading", labels, services, {lab: "gateway" for lab in labels})


_PNF_DEMANDS = {
    "s1": {"s3_req": 12.0, "s4_req": 8.0},
    "s2": {"s3_req": 15.0, "s4_req": 9.0},
    "s3": {"s3_req": 11.0},
    "s4": {"s4_req": 10.0},
}


def build_pipes_and_filters(variant: Variant | str = Variant.joint_1cpu) -> PatternModel:
    variant = Variant(variant)
    labels = ("s3_req", "s4_req")
    d = _PNF_DEMANDS
    if variant is Variant.separated:
        services = [
            ServiceSpec("s1a", demand={"s3_req": d["s1"]["s3_req"]}, downstream={"s3_req": (Call("s2a"),)}),
            ServiceSpec("s2a", demand={"s3_req": d["s2"]["s3_req"]}, downstream={"s3_req": (Call("s3"),)}),
            ServiceSpec("s1b", demand={"s4_req": d["s1"]["s4_req"]}, downstream={"s4_req": (Call("s2b"),)}),
            ServiceSpec("s2b", demand={"s4_req": d["s2"]["s4_req"]}, downstream={"s4_req": (Call("s4"),)}),
            ServiceSpec("s3", demand=dict(d["s3"])),
            ServiceSpec("s4", demand=dict(d["s4"])),
        ]
        entry = {"s3_req": "s1a", "s4_req": "s1b"}
    else:
        shared_cpu = 2.0 if variant is Variant.joint_2cpu else 1.0
        services = [
            ServiceSpec("s1", shared_cpu, dict(d["s1"]), downstream={lab: (Call("s2"),) for lab in labels}),
            ServiceSpec("s2", shared_cpu, dict(d["s2"]), downstream={"s3_req": (Call("s3"),), "s4_req": (Call("s4"),)}),
            ServiceSpec("s3", demand=dict(d["s3"])),
            ServiceSpec("s4", demand=dict(d["s4"])),
        ]
        entry = {lab: "s1" for lab in labels}
    return _model("pipes_and_filters", labels, services, entry)


def validate(model: PatternModel) -> list[Violation]:
    """Return every broken model invariant; an empty list means the model is valid."""
    out: list[Violation] = []
    labels = model.labels
    known_types = set(labels)
    names = [s.name for s in model.services]
    by_name = {s.name: s for s in model.services}

    for lab in sorted({x for x in labels if labels.count(x) > 1}):
        out.append(Violation("duplicate request type", lab))
    for name in sorted({x for x in names if names.count(x) > 1}):
        out.append(Violation("duplicate service", name))

    for lab in labels:
        if lab not in model.entry:
            out.append(Violation("missing entry", lab))
    for lab, target in model.entry.items():
        if lab not in known_types:
            out.append(Violation("unknown request type", f"entry.{lab}"))
        if target not in by_name:
            out.append(Violation("dangling service", f"entry.{lab}", target))

    referenced: set[str] = set()
    for svc in sorted(model.services, key=lambda s: s.name):
        key = svc.name
        if not svc.cpu_capacity > 0:
            out.append(Violation("non-positive capacity", key, str(svc.cpu_capacity)))
        if svc.overhead < 0:
            out.append(Violation("negative demand", f"{key}.overhead", str(svc.overhead)))
        for lab, val in sorted(svc.demand.items()):
            referenced.add(lab)
            if val < 0:
                out.append(Violation("negative demand", f"{key}.demand.{lab}", str(val)))
        for lab, calls in sorted(svc.downstream.items()):
            referenced.add(lab)
            for c in calls:
                if c.to not in by_name:
                    out.append(Violation("dangling service", f"{key}.calls.{lab}", c.to))
                if c.mode not in CALL_MODES:
                    out.append(Violation("bad call mode", f"{key}.calls.{lab}", str(c.mode)))
    for lab in sorted(referenced - known_types):
        out.append(Violation("unknown request type", lab))

    # cycles, per request type, over edges that resolve
    for lab in labels:
        cyc = _find_cycle(by_name, lab)
        if cyc:
            out.append(Violation("cycle", cyc[0], " -> ".join(cyc) + f" ({lab})"))

    if not any(v.kind == "cycle" for v in out):
        reached: set[str] = set()
        for lab in labels:
            if model.entry.get(lab) in by_name:
                reached |= {n for n, k in model.visits(lab).items() if k}
        for name in sorted(set(names) - reached):
            out.append(Violation("unreachable service", name))

    return sorted(out, key=lambda v: (v.key, v.kind))


def _find_cycle(by_name: Mapping[str, ServiceSpec], lab: str) -> list[str] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in by_name}

    def dfs(n: str, path: list[str]) -> list[str] | None:
        color[n] = GREY
        for c in by_name[n].calls(lab):
            if c.to not in by_name:
                continue
            if color[c.to] == GREY:
                return path[path.index(c.to):] + [n, c.to] if c.to in path else [n, c.to]
            if color[c.to] == WHITE:
                found = dfs(c.to, path + [n])
                if found:
                    return found
        color[n] = BLACK
        return None

    for n in sorted(by_name):
        if color[n] == WHITE:
            found = dfs(n, [])
            if found:
                return found
    return None


def check(model: PatternModel) -> PatternModel:
    violations = validate(model)
    if violations:
        raise ValidationError(violations)
    return model


# --- config files -----------------------------------------------------------


def to_config(model: PatternModel) -> dict:
    """Key/value tree for ``model``; inverse of :func:`from_config`."""
    services = {}
    for s in model.services:
        entry = {"cpu": s.cpu_capacity, "overhead": s.overhead, "demand": dict(s.demand)}
        if s.downstream:
            entry["calls"] = {lab: [{"to": c.to, "mode": c.mode} for c in calls] for lab, calls in s.downstream.items()}
        services[s.name] = entry
    return {"name": model.name, "request_types": model.labels, "services": services, "entry": dict(model.entry)}


def serialize_topology(model: PatternModel) -> str:
    return json.dumps(to_config(model), indent=2) + "\n"


def _num(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{key}: expected a number, got {value!r}")
    return float(value)


def from_config(tree: Mapping, name: str = "custom") -> PatternModel:
    if not isinstance(tree, Mapping):
        raise ParseError("top level must be an object")
    for key in ("request_types", "services", "entry"):
        if key not in tree:
            raise ParseError(f"missing top-level key {key!r}")
    labels = tree["request_types"]
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ParseError("request_types: expected a list of labels")
    if not isinstance(tree["services"], Mapping):
        raise ParseError("services: expected an object")
    if not isinstance(tree["entry"], Mapping):
        raise ParseError("entry: expected an object")

    services = []
    for sname, body in tree["services"].items():
        if not isinstance(body, Mapping):
            raise ParseError(f"services.{sname}: expected an object")
        for k in _IGNORED_KEYS:
            if k in body:
                log.warning("services.%s.%s is accepted for compatibility and ignored", sname, k)
        demand = body.get("demand", {})
        if not isinstance(demand, Mapping):
            raise ParseError(f"services.{sname}.demand: expected an object")
        calls_tree = body.get("calls", {})
        if not isinstance(calls_tree, Mapping):
            raise ParseError(f"services.{sname}.calls: expected an object")
        downstream = {}
        for lab, calls in calls_tree.items():
            if not isinstance(calls, list):
                raise ParseError(f"services.{sname}.calls.{lab}: expected a list")
            parsed = []
            for i, c in enumerate(calls):
                if not isinstance(c, Mapping) or "to" not in c:
                    raise ParseError(f"services.{sname}.calls.{lab}[{i}]: expected {{to, mode}}")
                parsed.append(Call(str(c["to"]), str(c.get("mode", SEQUENTIAL))))
            downstream[lab] = tuple(parsed)
        services.append(
            ServiceSpec(
                name=sname,
                cpu_capacity=_num(body.get("cpu", 1.0), f"services.{sname}.cpu"),
                demand={lab: _num(v, f"services.{sname}.demand.{lab}") for lab, v in demand.items()},
                overhead=_num(body.get("overhead", 0.0), f"services.{sname}.overhead"),
                downstream=downstream,
            )
        )
    model = _model(str(tree.get("name", name)), labels, services, {str(k): str(v) for k, v in tree["entry"].items()})
    return check(model)


def parse_topology(config_text: str, name: str = "custom") -> PatternModel:
    """Parse and validate a JSON topology config."""
    try:
        tree = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config: {exc}") from exc
    return from_config(tree, name=name)


def load_topology(path) -> PatternModel:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())


REFERENCE_CONFIGS = (
    "gateway_aggregation",
    "gateway_offloading_0",
    "gateway_offloading_5",
    "gateway_offloading_10",
    "pipes_and_filters_joint_1cpu",
    "pipes_and_filters_joint_2cpu",
    "pipes_and_filters_separated",
)


def reference_config(name: str) -> str:
    """Text of one of the shipped reference configs (see ``REFERENCE_CONFIGS``)."""
    return resources.files("patternlab.configs").joinpath(f"{name}.cfg").read_text(encoding="utf-8")


def builtin_models() -> dict[str, PatternModel]:
    """The seven built-in variants keyed like :data:`REFERENCE_CONFIGS`."""
    out = {"gateway_aggregation": build_gateway_aggregation(0)}
    for w in (0, 5, 10):
        out[f"gateway_offloading_{w}"] = build_gateway_offloading(w)
    for v in Variant:
        out[f"pipes_and_filters_{v.value}"] = build_pipes_and_filters(v)
    return out

