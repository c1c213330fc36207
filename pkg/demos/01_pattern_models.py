"""
Pattern models and where they saturate
======================================

Each pattern is a small call graph of services with a CPU demand per request
type. Mixing the two request types shifts the load between services, and the
service with the largest demand per CPU is the bottleneck.
"""

import numpy as np

from patternlab.mva import aggregate_demands, predict
from patternlab.topology import build_gateway_offloading, build_pipes_and_filters, serialize_topology
from patternlab.workload import LoadMix, enumerate_mixes

# Gateway offloading with 5 work units moved into the gateway
model = build_gateway_offloading(5)
print(serialize_topology(model))

# Demand per request in work units (time_unit=1) for an even mix
profile = aggregate_demands(model, LoadMix.binary(model.labels, 0.5), time_unit=1)
print(profile.as_dict(), "->", profile.bottleneck())

###############################################################################
# Bottleneck across the mix sweep
# -------------------------------
# p is the share of the first request type (dashboard requests here).

for w in (0, 5, 10):
    m = build_gateway_offloading(w)
    row = [predict(m, mix).bottleneck for mix in enumerate_mixes(5, m.labels)]
    print(f"offload={w:2d}:", " ".join(f"{b:>7}" for b in row))

###############################################################################
# Pipes and filters: giving the shared filters two CPUs
# -----------------------------------------------------

for variant in ("joint_1cpu", "joint_2cpu", "separated"):
    m = build_pipes_and_filters(variant)
    preds = [predict(m, mix) for mix in enumerate_mixes(10, m.labels)]
    delay = np.array([p.response_time for p in preds]) * 1e3
    print(f"{variant:>11}: delay ms", np.round(delay, 1))
