"""
Simulated runs against the queueing model
=========================================

The simulator plays the role of the measured system: sixteen closed-loop
users hammer the pattern, and every service is a processor-sharing CPU. The
exact MVA solver predicts the same quantities from the demand table alone.
"""

import numpy as np

from patternlab.mva import predict
from patternlab.sim import SimConfig, repeat_runs
from patternlab.stats import spearman
from patternlab.topology import build_gateway_aggregation
from patternlab.workload import enumerate_mixes

model = build_gateway_aggregation(0)
cfg = SimConfig(duration=40.0)

sim_delay, mva_delay = [], []
for mix in enumerate_mixes(5, model.labels):
    runs = repeat_runs(model, mix, cfg, repetitions=3)
    pred = predict(model, mix)
    sim_delay.append(np.mean([r.mean_delay() for r in runs]))
    mva_delay.append(pred.response_time)
    util = {s: np.mean([r.utilization(s) for r in runs]) for s in ("s1", "s2", "s3")}
    print(f"p={mix.p_first:.1f}  sim {sim_delay[-1] * 1e3:6.1f} ms  mva {pred.response_time * 1e3:6.1f} ms  "
          + "  ".join(f"{s} {util[s]:.2f}/{pred.utilization[s]:.2f}" for s in util))

###############################################################################
# The solver treats the parallel fan-out as sequential visits, so its delay is
# an upper bound. The shape of the curve is what the comparison looks at.

r = spearman(mva_delay, sim_delay)
print(f"Spearman rho={r.rho:.3f}  p={r.p_value:.4f} ({r.method}, n={r.n})")
