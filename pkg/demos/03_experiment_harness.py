"""
A full experiment with the harness
==================================

``bench.report`` runs the simulation sweep, solves the model for the same
mixes and writes the comparison tables. The same steps are available from the
command line as ``patternlab run``, ``predict``, ``compare`` and ``report``.
"""

import csv
import tempfile
from pathlib import Path

from patternlab import bench
from patternlab.bench import ExperimentConfig
from patternlab.sim import SimConfig

out = Path(tempfile.mkdtemp(prefix="patternlab-"))
cfg = ExperimentConfig(pattern="pipes_and_filters", repetitions=2, sim=SimConfig(duration=30.0), out=str(out))
bench.report(cfg)
print((out / "report.md").read_text())

###############################################################################
# Plot data: one CSV per variant with the mix on the x axis

with open(out / "plot_pipes_and_filters-separated.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        if row["scope"] == "response_time":
            print(row["mix_p"], row["theoretical"], row["experimental"])

###############################################################################
# Every run can be re-simulated from its recorded seed

res = bench.replay(out / "runs.csv", "pipes_and_filters-separated-p040-rep1")
print("replayed", res.completed, "requests")
