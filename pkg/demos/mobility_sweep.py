"""
Decryption ratio versus mobility
================================

The experiment the CLI exists for: synthetic Gauss-Markov traces for 50
nodes in a 1500 m square, 10 CBR flows, tolerance 10 m. Pause times
scale mobility down; a pause as long as the run leaves every node
parked. Two seeds and 300 s keep this to about a minute. Run
``geoenc --synthetic --out results.csv`` for the full grid.
"""

from pathlib import Path
from tempfile import mkdtemp

from geoenc.cli import ExperimentSpec, run_experiment

spec = ExperimentSpec(
    synthetic=True,
    pause_times=[0, 25, 100, 300],
    flows=[10],
    tolerances=[10.0],
    seeds=[0, 1],
    duration=300.0,
    out=str(Path(mkdtemp()) / "sweep.csv"),
).validate()
result = run_experiment(spec)

###############################################################################
# Seed-averaged rows: higher pause -> less movement -> fewer failures and
# fewer position updates. The floor at full pause is the bootstrap updates.

print(f"{'pause':>6} {'decrypt':>8} {'overhead':>9} {'delay':>7}")
for row in result.summary:
    print(f"{row['pause']:6.0f} {row['decryption_ratio']:8.4f} "
          f"{row['overhead_ratio']:9.4f} {row['mean_delay']:7.3f}")
